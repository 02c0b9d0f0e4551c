#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ssdlab/covariance.hpp"
#include "ssdlab/denoiser.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/mlp.hpp"
#include "ssdlab/parallel.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

// Integration runs from prior noise at t = 0 to data at t = 1.
struct TimeGrid {
    std::vector<double> times;  // strictly increasing, times[0]=0, times[last]=1

    explicit TimeGrid(std::vector<double> ts) : times(std::move(ts)) {
        if (times.size() < 2 || times.front() != 0.0 || times.back() != 1.0)
            throw std::invalid_argument("TimeGrid: times must start at 0 and end at 1");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw std::invalid_argument("TimeGrid: times must be strictly increasing");
    }

    static TimeGrid uniform(std::size_t intervals) {
        std::vector<double> ts(intervals + 1);
        for (std::size_t i = 0; i <= intervals; ++i)
            ts[i] = static_cast<double>(i) / static_cast<double>(intervals);
        ts.back() = 1.0;
        return TimeGrid(std::move(ts));
    }

    std::size_t intervals() const { return times.size() - 1; }
};

inline void check_finite(const Vector& v, double t) {
    for (double x : v)
        if (!std::isfinite(x)) {
            std::ostringstream os;
            os << "sampler: non-finite velocity at t = " << t;
            throw std::runtime_error(os.str());
        }
}

inline Vector euler_step(const VelocityFn& v, const Vector& z, double t, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("euler_step: h must be > 0");
    Vector vel = v(z, t);
    check_finite(vel, t);
    Vector out = z;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += h * vel[j];
    return out;
}

inline Vector euler_sample(const VelocityFn& v, Vector z, const TimeGrid& grid,
                           std::size_t* nfe = nullptr) {
    std::size_t evals = 0;
    for (std::size_t k = 0; k + 1 < grid.times.size(); ++k) {
        z = euler_step(v, z, grid.times[k], grid.times[k + 1] - grid.times[k]);
        ++evals;
    }
    if (nfe) *nfe = evals;
    return z;
}

// Heun's second-order method: Euler predictor, trapezoidal corrector. With
// final_step_euler the last interval takes the plain predictor step and skips
// the slope evaluation at t = 1 (useful for oracles singular there).
inline Vector heun2_sample(const VelocityFn& v, Vector z, const TimeGrid& grid,
                           std::size_t* nfe = nullptr, bool final_step_euler = false,
                           const std::vector<double>* snapshot_times = nullptr,
                           std::vector<Vector>* snapshots = nullptr) {
    std::size_t evals = 0;
    auto record = [&](double t_now) {
        if (!snapshot_times || !snapshots) return;
        for (std::size_t si = 0; si < snapshot_times->size(); ++si)
            if ((*snapshot_times)[si] == t_now) (*snapshots)[si] = z;
    };
    record(grid.times.front());
    for (std::size_t k = 0; k + 1 < grid.times.size(); ++k) {
        double t0 = grid.times[k];
        double t1 = grid.times[k + 1];
        double h = t1 - t0;
        Vector v0 = v(z, t0);
        ++evals;
        check_finite(v0, t0);
        bool last = (k + 2 == grid.times.size());
        if (last && final_step_euler) {
            for (std::size_t j = 0; j < z.size(); ++j) z[j] += h * v0[j];
        } else {
            Vector pred = z;
            for (std::size_t j = 0; j < z.size(); ++j) pred[j] += h * v0[j];
            Vector v1 = v(pred, t1);
            ++evals;
            check_finite(v1, t1);
            for (std::size_t j = 0; j < z.size(); ++j)
                z[j] += 0.5 * h * (v0[j] + v1[j]);
        }
        record(t1);
    }
    if (nfe) *nfe = evals;
    return z;
}

struct SampleRun {
    std::vector<Vector> initial_noise;
    std::vector<std::vector<Vector>> snapshots;  // [sample][snapshot index]
    std::vector<Vector> terminal;
    std::vector<double> snapshot_times;
    std::size_t nfe_per_sample = 0;
};

// Draws n prior samples x0 ~ N(0, I), each from its own derived stream
// (stream id = sample index), and integrates every one through the velocity
// field. Independent of worker count.
inline SampleRun batch_generate(const VelocityFn& v, std::size_t n, std::size_t dim,
                                const TimeGrid& grid, const RngStream& rng,
                                std::vector<double> snapshot_times = {},
                                bool final_step_euler = false, unsigned threads = 1) {
    if (n == 0) throw std::invalid_argument("batch_generate: n must be >= 1");
    SampleRun run;
    run.snapshot_times = std::move(snapshot_times);
    run.initial_noise.resize(n);
    run.terminal.resize(n);
    run.snapshots.assign(n, std::vector<Vector>(run.snapshot_times.size()));
    std::vector<std::size_t> nfes(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
        RngStream local = rng.derive(i);
        Vector x0 = standard_normal(local, dim);
        run.initial_noise[i] = x0;
        run.terminal[i] =
            heun2_sample(v, std::move(x0), grid, &nfes[i], final_step_euler,
                         run.snapshot_times.empty() ? nullptr : &run.snapshot_times,
                         run.snapshot_times.empty() ? nullptr : &run.snapshots[i]);
    });
    run.nfe_per_sample = nfes.empty() ? 0 : nfes[0];
    return run;
}

// Adapts a trained model to the sampler's velocity interface.
inline VelocityFn model_velocity(const VelocityModel& model) {
    return [&model](const Vector& z, double t) { return model.forward(z, t); };
}

// Adapts a clean-image (denoiser) model: on the linear path the conditional
// velocity and the posterior-mean denoiser are related by
// v(z, t) = (xhat(z, t) - z) / (1 - t), exactly as for the empirical-denoiser
// oracle. Singular at t = 1; integrate with final_step_euler.
inline VelocityFn denoiser_velocity(const VelocityModel& model) {
    return [&model](const Vector& z, double t) {
        if (t >= 1.0)
            throw std::invalid_argument(
                "denoiser_velocity: undefined at t = 1; use final_step_euler");
        Vector xhat = model.forward(z, t);
        double w = 1.0 / (1.0 - t);
        for (std::size_t j = 0; j < xhat.size(); ++j) xhat[j] = (xhat[j] - z[j]) * w;
        return xhat;
    };
}

}  // namespace ssdlab
