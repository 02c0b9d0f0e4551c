#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdlab/matrix.hpp"
#include "ssdlab/mlp.hpp"
#include "ssdlab/parallel.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

enum class ShapeKind { triangle, square };

struct ShapeMeta {
    ShapeKind kind;
    std::size_t anchor_row;
    std::size_t anchor_col;
    std::size_t area;
};

struct ShapeDataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t tri_side = 0;
    std::size_t sq_side = 0;
    std::vector<Vector> images;  // flattened row-major, values in {0, 1}
    std::vector<ShapeMeta> metadata;

    std::size_t dim() const { return height * width; }
    std::size_t min_shape_area() const {
        return std::min(tri_side * (tri_side + 1) / 2, sq_side * sq_side);
    }
};

// One shape per image: a filled axis-aligned square (side sq_side) or a
// filled right triangle (legs tri_side, right angle at the anchor), each at a
// uniformly random in-bounds anchor, kind chosen uniformly.
inline ShapeDataset generate_shapes(RngStream& rng, std::size_t n, std::size_t h,
                                    std::size_t w, std::size_t tri_side,
                                    std::size_t sq_side) {
    if (tri_side > h || tri_side > w || sq_side > h || sq_side > w)
        throw std::invalid_argument("generate_shapes: shape larger than canvas");
    ShapeDataset ds;
    ds.height = h;
    ds.width = w;
    ds.tri_side = tri_side;
    ds.sq_side = sq_side;
    for (std::size_t i = 0; i < n; ++i) {
        bool triangle = rng.bernoulli(0.5);
        std::size_t side = triangle ? tri_side : sq_side;
        std::size_t r0 = rng.uniform_index(h - side + 1);
        std::size_t c0 = rng.uniform_index(w - side + 1);
        Vector img(h * w, 0.0);
        std::size_t area = 0;
        for (std::size_t dr = 0; dr < side; ++dr) {
            std::size_t row_len = triangle ? dr + 1 : side;
            for (std::size_t dc = 0; dc < row_len; ++dc) {
                img[(r0 + dr) * w + (c0 + dc)] = 1.0;
                ++area;
            }
        }
        ds.images.push_back(std::move(img));
        ds.metadata.push_back(
            {triangle ? ShapeKind::triangle : ShapeKind::square, r0, c0, area});
    }
    return ds;
}

struct ScatterReport {
    std::size_t n_scatter_clusters = 0;
    std::size_t n_inconsistent_images = 0;
    std::vector<std::vector<std::size_t>> cluster_sizes;  // per image, all components
    std::vector<std::size_t> scatters_per_image;
};

// Binarizes at `threshold`, labels 4-connected foreground components and
// counts components smaller than min_area ("scattered clusters"). An image
// with at least one such cluster is inconsistent.
inline ScatterReport scatter_metric(const std::vector<Vector>& images, std::size_t h,
                                    std::size_t w, double threshold,
                                    std::size_t min_area) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("scatter_metric: threshold must be in (0, 1)");
    ScatterReport rep;
    std::vector<std::uint8_t> fg(h * w);
    std::vector<std::int32_t> label(h * w);
    std::vector<std::size_t> stack;
    for (const Vector& img : images) {
        if (img.size() != h * w)
            throw std::invalid_argument("scatter_metric: image size mismatch");
        for (std::size_t i = 0; i < h * w; ++i) fg[i] = img[i] >= threshold ? 1 : 0;
        std::fill(label.begin(), label.end(), -1);
        std::vector<std::size_t> sizes;
        for (std::size_t start = 0; start < h * w; ++start) {
            if (!fg[start] || label[start] >= 0) continue;
            std::int32_t id = static_cast<std::int32_t>(sizes.size());
            std::size_t area = 0;
            stack.clear();
            stack.push_back(start);
            label[start] = id;
            while (!stack.empty()) {
                std::size_t p = stack.back();
                stack.pop_back();
                ++area;
                std::size_t r = p / w, c = p % w;
                auto visit = [&](std::size_t q) {
                    if (fg[q] && label[q] < 0) {
                        label[q] = id;
                        stack.push_back(q);
                    }
                };
                if (r > 0) visit(p - w);
                if (r + 1 < h) visit(p + w);
                if (c > 0) visit(p - 1);
                if (c + 1 < w) visit(p + 1);
            }
            sizes.push_back(area);
        }
        std::size_t scatters = 0;
        for (std::size_t s : sizes)
            if (s < min_area) ++scatters;
        rep.n_scatter_clusters += scatters;
        if (scatters > 0) ++rep.n_inconsistent_images;
        rep.scatters_per_image.push_back(scatters);
        rep.cluster_sizes.push_back(std::move(sizes));
    }
    return rep;
}

struct MemorizationReport {
    Vector d_mem;  // per-sample nearest-neighbor l2 distance
    double mean = 0.0;
    double stddev = 0.0;
};

// Exact nearest neighbor in l2 over the full training set, per sample.
inline MemorizationReport memorization_metric(const std::vector<Vector>& samples,
                                              const std::vector<Vector>& dataset,
                                              unsigned threads = 1) {
    if (dataset.empty())
        throw std::invalid_argument("memorization_metric: empty training set");
    MemorizationReport rep;
    rep.d_mem.resize(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vector& x : dataset) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                double diff = samples[i][j] - x[j];
                d2 += diff * diff;
                if (d2 >= best) break;
            }
            best = std::min(best, d2);
        }
        rep.d_mem[i] = std::sqrt(best);
    });
    double sum = 0.0;
    for (double d : rep.d_mem) sum += d;
    rep.mean = rep.d_mem.empty() ? 0.0 : sum / static_cast<double>(rep.d_mem.size());
    double var = 0.0;
    for (double d : rep.d_mem) var += (d - rep.mean) * (d - rep.mean);
    rep.stddev = rep.d_mem.size() > 1
                     ? std::sqrt(var / static_cast<double>(rep.d_mem.size() - 1))
                     : 0.0;
    return rep;
}

struct SensitivityStats {
    Vector per_image_l1;         // one l1 norm per evaluated image
    Vector per_pixel_magnitude;  // pooled |gradient| entries over all images
    double mean_l1 = 0.0;
    double iqr = 0.0;  // interquartile range of pooled per-pixel magnitudes
};

inline double quantile_sorted(const Vector& sorted, double q) {
    if (sorted.empty()) return 0.0;
    double pos = q * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// Empirical gradient sensitivity: for each image, the expected absolute
// gradient of the model output at `pixel` w.r.t. every input pixel, with the
// input formed along the flow path z = (1-t) x0 + t x1 and the expectation
// taken over `n_noise` prior draws. Each image gets a derived noise stream
// (stream id = image index).
inline SensitivityStats sensitivity_stats(const VelocityModel& model,
                                          const std::vector<Vector>& images,
                                          std::size_t h, std::size_t w, double t,
                                          std::size_t pixel_row, std::size_t pixel_col,
                                          std::size_t n_images, std::size_t n_noise,
                                          const RngStream& rng, unsigned threads = 1) {
    if (pixel_row >= h || pixel_col >= w)
        throw std::invalid_argument("sensitivity_stats: pixel out of bounds");
    if (!(t > 0.0 && t < 1.0))
        throw std::invalid_argument("sensitivity_stats: t must be in (0, 1)");
    const std::size_t dim = h * w;
    const std::size_t out_idx = pixel_row * w + pixel_col;
    n_images = std::min(n_images, images.size());

    std::vector<Vector> grads(n_images);
    parallel_for(n_images, threads, [&](std::size_t i) {
        RngStream local = rng.derive(i);
        Vector acc(dim, 0.0);
        VelocityModel::Tape tape;
        VelocityModel::Gradients scratch = VelocityModel::Gradients::zeros_like(model);
        Vector grad_out(dim, 0.0);
        Vector grad_in;
        for (std::size_t s = 0; s < n_noise; ++s) {
            Vector z(dim);
            for (std::size_t j = 0; j < dim; ++j)
                z[j] = (1.0 - t) * local.normal() + t * images[i][j];
            model.forward(z, t, &tape);
            grad_out[out_idx] = 1.0;
            model.backward(tape, grad_out, scratch, &grad_in);
            grad_out[out_idx] = 0.0;
            for (std::size_t j = 0; j < dim; ++j) acc[j] += std::abs(grad_in[j]);
        }
        for (double& v : acc) v /= static_cast<double>(n_noise);
        grads[i] = std::move(acc);
    });

    SensitivityStats st;
    st.per_image_l1.reserve(n_images);
    st.per_pixel_magnitude.reserve(n_images * dim);
    for (const Vector& g : grads) {
        double l1 = 0.0;
        for (double v : g) {
            l1 += v;
            st.per_pixel_magnitude.push_back(v);
        }
        st.per_image_l1.push_back(l1);
    }
    double sum = 0.0;
    for (double v : st.per_image_l1) sum += v;
    st.mean_l1 = st.per_image_l1.empty()
                     ? 0.0
                     : sum / static_cast<double>(st.per_image_l1.size());
    Vector sorted = st.per_pixel_magnitude;
    std::sort(sorted.begin(), sorted.end());
    st.iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    return st;
}

}  // namespace ssdlab
