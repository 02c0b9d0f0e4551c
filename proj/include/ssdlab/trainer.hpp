#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ssdlab/covariance.hpp"
#include "ssdlab/masking.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/mlp.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

// Regression target for the masked loss. The conditional velocity x1 - x0 is
// the flow-matching form; clean_image regresses the denoiser output on the
// data sample itself (the denoising-diffusion form of the same objective).
enum class RegressionTarget { velocity, clean_image };

struct SSDLossConfig {
    double eta = 0.0;
    bool normalize_by_unmasked = true;
    RegressionTarget target = RegressionTarget::velocity;
};

struct TrainingBatch {
    std::vector<Vector> x1;            // data samples
    std::vector<Vector> x0;            // prior noise
    std::vector<double> t;             // one per pair
    std::vector<Vector> z;             // interpolants (1-t) x0 + t x1
    std::vector<MaskSample> masks;

    std::size_t size() const { return x1.size(); }
};

inline TrainingBatch make_batch(const std::vector<Vector>& dataset, std::size_t batch_size,
                                const SSDLossConfig& cfg, RngStream& rng) {
    const std::size_t dim = dataset.front().size();
    MaskConfig mc(cfg.eta, dim);
    TrainingBatch b;
    b.x1.reserve(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
        const Vector& x1 = dataset[rng.uniform_index(dataset.size())];
        Vector x0 = standard_normal(rng, dim);
        double t = rng.uniform();
        Vector z(dim);
        for (std::size_t j = 0; j < dim; ++j) z[j] = (1.0 - t) * x0[j] + t * x1[j];
        b.x1.push_back(x1);
        b.x0.push_back(std::move(x0));
        b.t.push_back(t);
        b.z.push_back(std::move(z));
        b.masks.push_back(sample_mask_nonempty(rng, mc));
    }
    return b;
}

// Masked regression loss: per sample, the squared residual against the
// target (velocity x1 - x0, or the clean image x1) summed over unmasked
// coordinates only. Masked coordinates contribute exactly zero gradient.
// With normalize_by_unmasked the per-sample sum is divided by the unmasked
// count; either way the batch reduces by the mean.
inline double ssd_loss(const VelocityModel& model, const TrainingBatch& batch,
                       const SSDLossConfig& cfg, VelocityModel::Gradients& grads) {
    const std::size_t n = batch.size();
    if (n == 0) throw std::invalid_argument("ssd_loss: empty batch");
    const bool to_image = cfg.target == RegressionTarget::clean_image;
    double total = 0.0;
    VelocityModel::Tape tape;
    Vector grad_out;
    for (std::size_t k = 0; k < n; ++k) {
        Vector v = model.forward(batch.z[k], batch.t[k], &tape);
        const MaskSample& m = batch.masks[k];
        std::size_t unmasked = m.ones();
        double denom = cfg.normalize_by_unmasked ? static_cast<double>(unmasked) : 1.0;
        double contrib = 0.0;
        grad_out.assign(v.size(), 0.0);
        for (std::size_t j = 0; j < v.size(); ++j) {
            if (!m.bits[j]) continue;
            double target =
                to_image ? batch.x1[k][j] : batch.x1[k][j] - batch.x0[k][j];
            double r = v[j] - target;
            contrib += r * r;
            grad_out[j] = 2.0 * r / (denom * static_cast<double>(n));
        }
        total += contrib / denom;
        model.backward(tape, grad_out, grads);
    }
    return total / static_cast<double>(n);
}

// Adam with bias correction. Defaults follow the reference runs: lr 1e-4,
// betas (0.9, 0.95), epsilon 1e-8, no weight decay.
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double epsilon = 1e-8;
    std::size_t step_count = 0;
    std::vector<DenseLayer> m;  // first moments, congruent to parameters
    std::vector<DenseLayer> v;  // second moments

    static AdamState for_model(const VelocityModel& model, double lr = 1e-4,
                               double beta1 = 0.9, double beta2 = 0.95,
                               double epsilon = 1e-8) {
        AdamState s;
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        for (const auto& l : model.layers) {
            s.m.push_back({Matrix(l.w.rows, l.w.cols), Vector(l.b.size(), 0.0)});
            s.v.push_back({Matrix(l.w.rows, l.w.cols), Vector(l.b.size(), 0.0)});
        }
        return s;
    }

    void update(VelocityModel& model, const VelocityModel::Gradients& grads) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            auto apply = [&](double& p, double g, double& m1, double& m2) {
                m1 = beta1 * m1 + (1.0 - beta1) * g;
                m2 = beta2 * m2 + (1.0 - beta2) * g * g;
                p -= lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + epsilon);
            };
            auto& lw = model.layers[li].w.data;
            const auto& gw = grads.layers[li].w.data;
            auto& mw = m[li].w.data;
            auto& vw = v[li].w.data;
            for (std::size_t i = 0; i < lw.size(); ++i) apply(lw[i], gw[i], mw[i], vw[i]);
            auto& lb = model.layers[li].b;
            const auto& gb = grads.layers[li].b;
            auto& mb = m[li].b;
            auto& vb = v[li].b;
            for (std::size_t i = 0; i < lb.size(); ++i) apply(lb[i], gb[i], mb[i], vb[i]);
        }
    }
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean loss per epoch
};

// Deterministic single-threaded training loop. Each step draws a fresh batch
// (data index, prior noise, t, masks) from `rng`, computes the masked loss
// and applies one Adam update. Aborts on non-finite loss.
inline TrainResult train(VelocityModel& model, const std::vector<Vector>& dataset,
                         const SSDLossConfig& cfg, AdamState& opt, std::size_t epochs,
                         std::size_t batch_size, RngStream& rng) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    const std::size_t steps_per_epoch =
        (dataset.size() + batch_size - 1) / batch_size;
    TrainResult result;
    VelocityModel::Gradients grads = VelocityModel::Gradients::zeros_like(model);
    for (std::size_t e = 0; e < epochs; ++e) {
        double epoch_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            TrainingBatch batch = make_batch(dataset, batch_size, cfg, rng);
            for (auto& gl : grads.layers) {
                std::fill(gl.w.data.begin(), gl.w.data.end(), 0.0);
                std::fill(gl.b.begin(), gl.b.end(), 0.0);
            }
            double loss = ssd_loss(model, batch, cfg, grads);
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << e << " step " << s;
                throw std::runtime_error(os.str());
            }
            opt.update(model, grads);
            epoch_sum += loss;
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    }
    return result;
}

}  // namespace ssdlab
