#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "ssdlab/matrix.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

// Symmetric PSD covariance with cached eigendecomposition. Small negative
// eigenvalues (roundoff) are clamped to zero; anything below -1e-10 is
// rejected.
struct CovarianceModel {
    Matrix sigma;
    EigenDecomposition eig;

    explicit CovarianceModel(Matrix s) : sigma(std::move(s)) {
        if (sigma.rows != sigma.cols)
            throw std::invalid_argument("CovarianceModel: matrix not square");
        eig = sym_eig(sigma);
        for (double& lam : eig.eigenvalues) {
            if (lam < -1e-10)
                throw std::invalid_argument(
                    "CovarianceModel: negative eigenvalue beyond tolerance");
            if (lam < 0.0) lam = 0.0;
        }
    }

    std::size_t dim() const { return sigma.rows; }
};

// Draws n i.i.d. samples x = mean + U sqrt(Lambda) xi with xi standard normal.
inline std::vector<Vector> gaussian_sample(RngStream& rng, const Vector& mean,
                                           const CovarianceModel& cov, std::size_t n) {
    const std::size_t d = cov.dim();
    if (mean.size() != d)
        throw std::invalid_argument("gaussian_sample: mean dimension mismatch");
    Vector sqrt_lam(d);
    for (std::size_t i = 0; i < d; ++i) sqrt_lam[i] = std::sqrt(cov.eig.eigenvalues[i]);
    std::vector<Vector> out;
    out.reserve(n);
    Vector xi(d);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < d; ++i) xi[i] = sqrt_lam[i] * rng.normal();
        Vector x = mean;
        const Matrix& u = cov.eig.eigenvectors;
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += u(r, c) * xi[c];
            x[r] += acc;
        }
        out.push_back(std::move(x));
    }
    return out;
}

// Standard normal vector, used for flow-matching priors.
inline Vector standard_normal(RngStream& rng, std::size_t d) {
    Vector x(d);
    for (std::size_t i = 0; i < d; ++i) x[i] = rng.normal();
    return x;
}

}  // namespace ssdlab
