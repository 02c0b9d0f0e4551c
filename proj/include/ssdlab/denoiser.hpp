#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ssdlab/covariance.hpp"
#include "ssdlab/masking.hpp"
#include "ssdlab/matrix.hpp"

namespace ssdlab {

using Schedule = std::function<double(double)>;

// Empirical optimal denoiser: posterior-weighted average of the training set.
// The posterior kernel is the isotropic Gaussian exp(-||z - x_i||^2 / (2 s^2))
// with s = noise_std(t); the kernel lives in this one place so other
// conventions stay swappable.
struct EmpiricalDenoiser {
    std::vector<Vector> data;
    Schedule noise_std;

    EmpiricalDenoiser(std::vector<Vector> d, Schedule s)
        : data(std::move(d)), noise_std(std::move(s)) {
        if (data.empty()) throw std::invalid_argument("EmpiricalDenoiser: empty data");
    }
};

inline Vector optimal_denoise(const EmpiricalDenoiser& d, const Vector& z, double t) {
    const double s = d.noise_std(t);
    if (!(s > 0.0)) throw std::invalid_argument("optimal_denoise: noise std must be > 0");
    const std::size_t n = d.data.size();
    const std::size_t dim = z.size();
    std::vector<double> logw(n);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            double diff = z[j] - d.data[i][j];
            dist2 += diff * diff;
        }
        logw[i] = -0.5 * dist2 / (s * s);
        max_logw = std::max(max_logw, logw[i]);
    }
    double zsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        logw[i] = std::exp(logw[i] - max_logw);
        zsum += logw[i];
    }
    Vector out(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double w = logw[i] / zsum;
        for (std::size_t j = 0; j < dim; ++j) out[j] += w * d.data[i][j];
    }
    return out;
}

// Closed-form linear denoiser for Gaussian data: f(x) = A_t x with
//   A_t = (1/sqrt(alpha_t)) U diag(SNR_i / (SNR_i + 1)) U^T,
//   SNR_i = lambda_i^snr_exponent / sigma_t^2   (snr_exponent defaults to 2).
struct AnalyticDenoiser {
    CovarianceModel cov;
    Schedule alpha;  // signal scale alpha_t in (0, 1]
    Schedule sigma;  // noise std sigma_t >= 0
    double snr_exponent = 2.0;
};

// Default schedules for the denoiser-side time convention (data at t = 0,
// prior at t = 1): signal variance scale alpha_t = (1-t)^2, noise std
// sigma_t = t, matching the linear interpolation path.
inline Schedule linear_path_alpha() {
    return [](double t) { return (1.0 - t) * (1.0 - t); };
}
inline Schedule linear_path_sigma() {
    return [](double t) { return t; };
}

inline Matrix analytic_sensitivity(const AnalyticDenoiser& d, double t) {
    const double a = d.alpha(t);
    const double s = d.sigma(t);
    if (!(a > 0.0)) throw std::invalid_argument("analytic_sensitivity: alpha_t must be > 0");
    const std::size_t dim = d.cov.dim();
    const Matrix& u = d.cov.eig.eigenvectors;
    Vector gain(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        double lam = d.cov.eig.eigenvalues[i];
        double snr;
        if (s == 0.0) {
            snr = std::numeric_limits<double>::infinity();
        } else {
            snr = std::pow(lam, d.snr_exponent) / (s * s);
        }
        gain[i] = std::isinf(snr) ? 1.0 : snr / (snr + 1.0);
    }
    Matrix j(dim, dim);
    const double scale = 1.0 / std::sqrt(a);
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < dim; ++c) {
            double acc = 0.0;
            for (std::size_t k = 0; k < dim; ++k) acc += u(r, k) * gain[k] * u(c, k);
            j(r, c) = scale * acc;
        }
    return j;
}

// Sensitivity of the linear Gaussian denoiser from the raw covariance and
// from its masked counterpart, for side-by-side locality comparison.
inline std::pair<Matrix, Matrix> masked_sensitivity_shift(const CovarianceModel& cov,
                                                          double eta, double t,
                                                          const Schedule& alpha,
                                                          const Schedule& sigma,
                                                          double snr_exponent = 2.0) {
    AnalyticDenoiser base{cov, alpha, sigma, snr_exponent};
    CovarianceModel masked_cov(masked_covariance(cov, eta));
    AnalyticDenoiser masked{masked_cov, alpha, sigma, snr_exponent};
    return {analytic_sensitivity(base, t), analytic_sensitivity(masked, t)};
}

using VelocityFn = std::function<Vector(const Vector&, double)>;

// Exact marginal velocity of the linear flow path z_t = (1-t) x0 + t x1 with
// x0 ~ N(0, I) and x1 drawn from the empirical distribution over `data`:
//   v(z, t) = (xhat - z) / (1 - t),  xhat = posterior mean of x1 given z_t = z.
// The posterior over data points has weights softmax(-||z - t x_i||^2 / (2(1-t)^2)).
// Sampling through this oracle lands on training points: the optimal denoiser
// memorizes.
inline VelocityFn optimal_velocity_oracle(std::vector<Vector> data) {
    auto shared = std::make_shared<std::vector<Vector>>(std::move(data));
    return [shared](const Vector& z, double t) -> Vector {
        const auto& pts = *shared;
        const std::size_t n = pts.size();
        const std::size_t dim = z.size();
        const double one_minus_t = std::max(1.0 - t, 1e-12);
        std::vector<double> logw(n);
        double max_logw = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            double dist2 = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                double diff = z[j] - t * pts[i][j];
                dist2 += diff * diff;
            }
            logw[i] = -0.5 * dist2 / (one_minus_t * one_minus_t);
            max_logw = std::max(max_logw, logw[i]);
        }
        double zsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            logw[i] = std::exp(logw[i] - max_logw);
            zsum += logw[i];
        }
        Vector v(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double w = logw[i] / zsum;
            for (std::size_t j = 0; j < dim; ++j) v[j] += w * pts[i][j];
        }
        for (std::size_t j = 0; j < dim; ++j) v[j] = (v[j] - z[j]) / one_minus_t;
        return v;
    };
}

// Exact marginal velocity for Gaussian data x1 ~ N(0, Sigma) on the linear
// path: v(z, t) = (t Sigma - (1-t) I) A_t^{-1} z with A_t = (1-t)^2 I + t^2 Sigma.
// Integrating from z0 ~ N(0, I) yields N(0, Sigma) at t = 1.
inline VelocityFn gaussian_velocity_oracle(const CovarianceModel& cov) {
    auto sigma = std::make_shared<Matrix>(cov.sigma);
    return [sigma](const Vector& z, double t) -> Vector {
        const std::size_t d = sigma->rows;
        Matrix a(d, d);
        double omt = 1.0 - t;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                a(i, j) = t * t * (*sigma)(i, j) + (i == j ? omt * omt : 0.0);
        Matrix b(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                b(i, j) = t * (*sigma)(i, j) - (i == j ? omt : 0.0);
        return matvec(matmul(b, mat_inverse(a)), z);
    };
}

}  // namespace ssdlab
