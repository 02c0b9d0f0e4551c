#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdlab {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. All routines below assume finite entries
// and throw std::invalid_argument / std::runtime_error on violated
// preconditions.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) {
            throw std::invalid_argument("Matrix: data length does not match rows*cols");
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(const Vector& d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    Vector diag() const {
        std::size_t n = std::min(rows, cols);
        Vector d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = (*this)(i, i);
        return d;
    }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double max_abs(const Matrix& m) {
    double r = 0.0;
    for (double v : m.data) r = std::max(r, std::abs(v));
    return r;
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
    if (m.rows != m.cols) return false;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = i + 1; j < m.cols; ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol) return false;
    return true;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

inline Vector matvec(const Matrix& m, const Vector& x) {
    if (m.cols != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
    Vector y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double s = 0.0;
        const double* row = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument("matrix add: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument("matrix sub: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Matrix operator*(double s, const Matrix& m) {
    Matrix c = m;
    for (double& v : c.data) v *= s;
    return c;
}

inline double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const Vector& a) { return std::sqrt(dot(a, a)); }

inline double l2_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("l2_distance: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Gauss-Jordan inverse with partial pivoting. Rejects matrices whose smallest
// pivot falls below tolerance relative to the largest entry.
inline Matrix mat_inverse(const Matrix& m) {
    if (m.rows != m.cols) throw std::invalid_argument("mat_inverse: matrix not square");
    if (!m.finite()) throw std::invalid_argument("mat_inverse: non-finite entries");
    const std::size_t n = m.rows;
    Matrix a = m;
    Matrix inv = Matrix::identity(n);
    const double scale = std::max(max_abs(m), 1e-300);
    const double pivot_tol = scale * 1e-12;
    double smallest_pivot = std::numeric_limits<double>::infinity();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        double p = a(piv, col);
        if (std::abs(p) < pivot_tol) {
            std::ostringstream os;
            os << "mat_inverse: matrix singular to tolerance, smallest pivot " << p
               << " at column " << col;
            throw std::runtime_error(os.str());
        }
        smallest_pivot = std::min(smallest_pivot, std::abs(p));
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(piv, j), a(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        }
        double ip = 1.0 / a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) *= ip;
            inv(col, j) *= ip;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a(r, j) -= f * a(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

struct EigenDecomposition {
    Vector eigenvalues;   // descending
    Matrix eigenvectors;  // columns are unit eigenvectors, same order
};

// Cyclic Jacobi eigensolver for real symmetric matrices. Accurate and
// dependency-free; the dimensions in this project stay well below 1024.
inline EigenDecomposition sym_eig(const Matrix& m, double sym_tol = 1e-10) {
    if (m.rows != m.cols) throw std::invalid_argument("sym_eig: matrix not square");
    if (!m.finite()) throw std::invalid_argument("sym_eig: non-finite entries");
    const double scale = std::max(max_abs(m), 1.0);
    if (!is_symmetric(m, sym_tol * scale))
        throw std::invalid_argument("sym_eig: matrix not symmetric within tolerance");

    const std::size_t n = m.rows;
    Matrix a = m;
    // Symmetrize exactly so rotations see a(i,j) == a(j,i).
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }
    Matrix u = Matrix::identity(n);

    const int max_sweeps = 100;
    const double off_tol = 1e-14 * scale * static_cast<double>(n);
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(a(i, j)));
        if (off <= off_tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::abs(apq) <= off_tol * 1e-2) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double ukp = u(k, p), ukq = u(k, q);
                    u(k, p) = c * ukp - s * ukq;
                    u(k, q) = s * ukp + c * ukq;
                }
            }
        }
    }
    if (sweep == max_sweeps) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(a(i, j)));
        std::ostringstream os;
        os << "sym_eig: no convergence after " << max_sweeps
           << " sweeps, off-diagonal residual " << off;
        throw std::runtime_error(os.str());
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EigenDecomposition e;
    e.eigenvalues.resize(n);
    e.eigenvectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        e.eigenvalues[k] = a(order[k], order[k]);
        for (std::size_t r = 0; r < n; ++r) e.eigenvectors(r, k) = u(r, order[k]);
    }
    return e;
}

}  // namespace ssdlab
