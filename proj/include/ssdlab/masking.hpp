#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ssdlab/covariance.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

// eta is always the MASKING probability: P(m_j = 0) = eta, P(m_j = 1) = 1 - eta.
struct MaskConfig {
    double eta = 0.0;
    std::size_t dim = 0;

    MaskConfig(double e, std::size_t d) : eta(e), dim(d) {
        if (!(eta >= 0.0 && eta < 1.0))
            throw std::invalid_argument("MaskConfig: eta must be in [0, 1)");
    }
};

struct MaskSample {
    std::vector<std::uint8_t> bits;  // entries in {0, 1}

    std::size_t ones() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }
};

inline MaskSample sample_mask(RngStream& rng, const MaskConfig& cfg) {
    MaskSample m;
    m.bits.resize(cfg.dim);
    for (std::size_t j = 0; j < cfg.dim; ++j)
        m.bits[j] = rng.bernoulli(1.0 - cfg.eta) ? 1 : 0;
    return m;
}

// Resamples until at least one coordinate is unmasked.
inline MaskSample sample_mask_nonempty(RngStream& rng, const MaskConfig& cfg) {
    constexpr std::size_t kCap = 1000000;
    for (std::size_t it = 0; it < kCap; ++it) {
        MaskSample m = sample_mask(rng, cfg);
        if (m.ones() > 0) return m;
    }
    throw std::runtime_error("sample_mask_nonempty: iteration cap reached");
}

// Covariance of m (.) x for x ~ N(0, Sigma):
//   Sigma~ = (1-eta)^2 Sigma + eta(1-eta) diag(Sigma).
// Diagonal entries scale by (1-eta), off-diagonals by (1-eta)^2.
inline Matrix masked_covariance(const CovarianceModel& cov, double eta) {
    if (!(eta >= 0.0 && eta < 1.0))
        throw std::invalid_argument("masked_covariance: eta must be in [0, 1)");
    const std::size_t d = cov.dim();
    const double keep = 1.0 - eta;
    Matrix out(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out(i, j) = (i == j ? keep : keep * keep) * cov.sigma(i, j);
    return out;
}

struct SpectrumReport {
    Vector lambda;        // eigenvalues of Sigma, descending
    Vector lambda_tilde;  // u_i^T Sigma~ u_i
    Vector beta;          // lambda_tilde / lambda, NaN where undefined
    std::vector<bool> beta_defined;
};

// Projected eigenvalues and shrinkage ratios:
//   lambda~_i = (1-eta)^2 lambda_i + eta(1-eta) sum_k u_ik^2 Sigma_kk
//   beta_i    = lambda~_i / lambda_i   (flagged when lambda_i <= 1e-12)
inline SpectrumReport spectrum_report(const CovarianceModel& cov, double eta) {
    if (!(eta >= 0.0 && eta < 1.0))
        throw std::invalid_argument("spectrum_report: eta must be in [0, 1)");
    const std::size_t d = cov.dim();
    const double keep = 1.0 - eta;
    SpectrumReport r;
    r.lambda = cov.eig.eigenvalues;
    r.lambda_tilde.resize(d);
    r.beta.resize(d);
    r.beta_defined.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        double diag_proj = 0.0;  // u_i^T D u_i
        for (std::size_t k = 0; k < d; ++k) {
            double uik = cov.eig.eigenvectors(k, i);
            diag_proj += uik * uik * cov.sigma(k, k);
        }
        r.lambda_tilde[i] = keep * keep * r.lambda[i] + eta * keep * diag_proj;
        if (r.lambda[i] > 1e-12) {
            r.beta[i] = r.lambda_tilde[i] / r.lambda[i];
            r.beta_defined[i] = true;
        } else {
            r.beta[i] = std::nan("");
            r.beta_defined[i] = false;
        }
    }
    return r;
}

}  // namespace ssdlab
