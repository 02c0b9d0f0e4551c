#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdlab/covariance.hpp"
#include "ssdlab/masking.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/parallel.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

// Correlated 2D Gaussian under the Ornstein-Uhlenbeck forward process
//   x_t = e^{-t} x_0 + sqrt(1 - e^{-2t}) eps.
struct Gaussian2DConfig {
    double rho = 0.7;    // correlation coefficient, |rho| < 1
    double t = 0.1;      // diffusion time, > 0
    std::size_t n_points = 10;

    Gaussian2DConfig() = default;
    Gaussian2DConfig(double rho_, double t_, std::size_t n) : rho(rho_), t(t_), n_points(n) {
        if (!(std::abs(rho) < 1.0))
            throw std::invalid_argument("Gaussian2DConfig: |rho| must be < 1");
        if (!(t > 0.0)) throw std::invalid_argument("Gaussian2DConfig: t must be > 0");
    }

    Matrix sigma() const { return Matrix(2, 2, {1.0, rho, rho, 1.0}); }
};

struct DiffusedState {
    double delta_t;  // 1 - e^{-2t}, noise variance
    double shrink;   // e^{-t}
    Matrix sigma_t;  // e^{-2t} Sigma + delta_t I

    explicit DiffusedState(const Gaussian2DConfig& cfg) {
        shrink = std::exp(-cfg.t);
        delta_t = 1.0 - std::exp(-2.0 * cfg.t);
        double s2 = shrink * shrink;
        sigma_t = Matrix(2, 2, {s2 * 1.0 + delta_t, s2 * cfg.rho, s2 * cfg.rho,
                                s2 * 1.0 + delta_t});
    }
};

// True score of the diffused Gaussian: -Sigma_t^{-1} x.
inline Vector population_score(const Gaussian2DConfig& cfg, const Vector& x) {
    DiffusedState st(cfg);
    Matrix inv = mat_inverse(st.sigma_t);
    Vector s = matvec(inv, x);
    for (double& v : s) v = -v;
    return s;
}

// KDE score over the shrunk training points x_t^(i) = e^{-t} x_0^(i):
//   score(x) = sum_i w_i (x_t^(i) - x) / delta_t,  w_i = softmax(-d_i / 2),
//   d_i = ||x_t^(i) - x||^2 / delta_t.
inline Vector empirical_score(const Gaussian2DConfig& cfg, const std::vector<Vector>& data,
                              const Vector& x) {
    if (data.empty()) throw std::invalid_argument("empirical_score: empty data");
    DiffusedState st(cfg);
    const std::size_t n = data.size();
    std::vector<double> logw(n);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            double diff = st.shrink * data[i][j] - x[j];
            d += diff * diff;
        }
        logw[i] = -0.5 * d / st.delta_t;
        max_logw = std::max(max_logw, logw[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        logw[i] = std::exp(logw[i] - max_logw);
        z += logw[i];
    }
    Vector s(x.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double w = logw[i] / z;
        for (std::size_t j = 0; j < x.size(); ++j)
            s[j] += w * (st.shrink * data[i][j] - x[j]) / st.delta_t;
    }
    return s;
}

// Masked KDE score averaged over n_masks nonempty Bernoulli masks. Distances
// and displacements only see the unmasked coordinates of each mask.
inline Vector masked_score(const Gaussian2DConfig& cfg, const std::vector<Vector>& data,
                           const Vector& x, double eta, std::size_t n_masks,
                           RngStream& rng) {
    if (data.empty()) throw std::invalid_argument("masked_score: empty data");
    if (n_masks == 0) throw std::invalid_argument("masked_score: n_masks must be >= 1");
    if (eta == 0.0) return empirical_score(cfg, data, x);  // no mask randomness used
    DiffusedState st(cfg);
    const std::size_t n = data.size();
    const std::size_t dim = x.size();
    MaskConfig mc(eta, dim);
    Vector acc(dim, 0.0);
    std::vector<double> logw(n);
    for (std::size_t k = 0; k < n_masks; ++k) {
        MaskSample m = sample_mask_nonempty(rng, mc);
        double max_logw = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                if (!m.bits[j]) continue;
                double diff = st.shrink * data[i][j] - x[j];
                d += diff * diff;
            }
            logw[i] = -0.5 * d / st.delta_t;
            max_logw = std::max(max_logw, logw[i]);
        }
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            logw[i] = std::exp(logw[i] - max_logw);
            z += logw[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            double w = logw[i] / z;
            for (std::size_t j = 0; j < dim; ++j) {
                if (!m.bits[j]) continue;
                acc[j] += w * (st.shrink * data[i][j] - x[j]) / st.delta_t;
            }
        }
    }
    for (double& v : acc) v /= static_cast<double>(n_masks);
    return acc;
}

enum class ScoreProvenance { population, empirical, masked };

struct ScoreField {
    std::vector<Vector> grid;
    std::vector<Vector> vectors;
    ScoreProvenance provenance;
};

struct ErrorField {
    std::vector<Vector> grid;
    Vector abs_error;
    double mean_error = 0.0;
    double max_error = 0.0;
};

struct GridSpec {
    double lo = -3.0;
    double hi = 3.0;
    std::size_t res = 30;  // res x res points

    std::vector<Vector> points() const {
        std::vector<Vector> pts;
        pts.reserve(res * res);
        for (std::size_t iy = 0; iy < res; ++iy)
            for (std::size_t ix = 0; ix < res; ++ix) {
                double x = lo + (hi - lo) * static_cast<double>(ix) /
                                    static_cast<double>(res - 1);
                double y = lo + (hi - lo) * static_cast<double>(iy) /
                                    static_cast<double>(res - 1);
                pts.push_back({x, y});
            }
        return pts;
    }
};

struct ScoreLabResult {
    ScoreField population;
    ScoreField empirical;
    ScoreField masked;
    ErrorField empirical_error;
    ErrorField masked_error;
};

// Evaluates the population, unmasked KDE and masked KDE scores on the grid
// and the per-point error of both estimators against the population score.
// Each grid point draws masks from its own derived stream (stream id = grid
// index), so the result is independent of thread count.
inline ScoreLabResult score_error_field(const Gaussian2DConfig& cfg,
                                        const std::vector<Vector>& data, double eta,
                                        const GridSpec& grid_spec,
                                        std::size_t n_masks, const RngStream& mask_rng,
                                        unsigned threads = 1,
                                        bool componentwise_error = false) {
    ScoreLabResult r;
    auto pts = grid_spec.points();
    const std::size_t n = pts.size();
    r.population = {pts, std::vector<Vector>(n), ScoreProvenance::population};
    r.empirical = {pts, std::vector<Vector>(n), ScoreProvenance::empirical};
    r.masked = {pts, std::vector<Vector>(n), ScoreProvenance::masked};
    r.empirical_error.grid = pts;
    r.empirical_error.abs_error.resize(n);
    r.masked_error.grid = pts;
    r.masked_error.abs_error.resize(n);

    auto err_norm = [componentwise_error](const Vector& a, const Vector& b) {
        if (componentwise_error) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
            return s;
        }
        return l2_distance(a, b);
    };

    parallel_for(n, threads, [&](std::size_t i) {
        RngStream local = mask_rng.derive(i);
        r.population.vectors[i] = population_score(cfg, pts[i]);
        r.empirical.vectors[i] = empirical_score(cfg, data, pts[i]);
        r.masked.vectors[i] = masked_score(cfg, data, pts[i], eta, n_masks, local);
        r.empirical_error.abs_error[i] =
            err_norm(r.empirical.vectors[i], r.population.vectors[i]);
        r.masked_error.abs_error[i] =
            err_norm(r.masked.vectors[i], r.population.vectors[i]);
    });

    for (ErrorField* ef : {&r.empirical_error, &r.masked_error}) {
        double sum = 0.0, mx = 0.0;
        for (double e : ef->abs_error) {
            sum += e;
            mx = std::max(mx, e);
        }
        ef->mean_error = sum / static_cast<double>(n);
        ef->max_error = mx;
    }
    return r;
}

}  // namespace ssdlab
