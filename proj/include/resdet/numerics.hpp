#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "resdet/errors.hpp"

namespace resdet {

using Vec = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(const std::vector<Vec>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_) throw DataError("from_rows: ragged row lengths");
            std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * m.cols_));
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    Vec row(std::size_t i) const {
        return Vec(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                   data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_));
    }

    Vec col(std::size_t j) const {
        Vec c(rows_);
        for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
        return c;
    }

    void set_row(std::size_t i, const Vec& values) {
        std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }

    Vec& raw() { return data_; }
    const Vec& raw() const { return data_; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Vec& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(const Vec& x, double alpha) {
    Vec r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = alpha * x[i];
    return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

// y = M x
inline Vec matvec(const Matrix& m, const Vec& x) {
    if (x.size() != m.cols()) throw DataError("matvec: dimension mismatch");
    Vec y(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// y = M^T x
inline Vec matvec_t(const Matrix& m, const Vec& x) {
    if (x.size() != m.rows()) throw DataError("matvec_t: dimension mismatch");
    Vec y(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) y[j] += m(i, j) * x[i];
    return y;
}

inline bool all_finite(const Vec& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const Matrix& m) { return all_finite(m.raw()); }

// Mean-centered population covariance (divisor n) of n samples x d dims.
inline Matrix covariance(const Matrix& data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (n < 2) throw DataError("covariance: need at least 2 samples");
    if (!all_finite(data)) throw NumericError("covariance: non-finite input");
    Vec mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double da = data(i, a) - mean[a];
            for (std::size_t b = a; b < d; ++b) cov(a, b) += da * (data(i, b) - mean[b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) /= static_cast<double>(n);
            cov(b, a) = cov(a, b);
        }
    return cov;
}

struct EigenDecomposition {
    Vec eigenvalues;      // sorted by magnitude, descending
    Matrix eigenvectors;  // column i pairs with eigenvalues[i]
};

namespace detail {

inline double off_diagonal_norm(const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (i != j) s += m(i, j) * m(i, j);
    return std::sqrt(s);
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.raw()) s += v * v;
    return std::sqrt(s);
}

}  // namespace detail

// Cyclic Jacobi rotations. Eigenvalues ordered by magnitude descending; each
// eigenvector's sign is fixed by making its largest-magnitude entry positive
// (ties resolved toward the lowest index), so results are deterministic.
inline EigenDecomposition symmetric_eig(const Matrix& a, double symmetry_tol = 1e-10) {
    if (a.rows() != a.cols()) throw DataError("symmetric_eig: matrix must be square");
    if (!all_finite(a)) throw NumericError("symmetric_eig: non-finite input");
    const std::size_t n = a.rows();
    double scale = 1.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > symmetry_tol * scale)
                throw DataError("symmetric_eig: input is not symmetric");

    Matrix m = a;
    // Enforce exact symmetry so rotations stay consistent.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = avg;
            m(j, i) = avg;
        }
    Matrix q = Matrix::identity(n);

    const double fnorm = detail::frobenius_norm(m);
    const double tol = 1e-12 * std::max(1.0, fnorm);
    const int max_sweeps = 128;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (detail::off_diagonal_norm(m) <= tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t r = p + 1; r < n; ++r) {
                const double apq = m(p, r);
                if (apq == 0.0) continue;
                const double theta = (m(r, r) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p);
                    const double mkr = m(k, r);
                    m(k, p) = c * mkp - s * mkr;
                    m(k, r) = s * mkp + c * mkr;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k);
                    const double mrk = m(r, k);
                    m(p, k) = c * mpk - s * mrk;
                    m(r, k) = s * mpk + c * mrk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double qkp = q(k, p);
                    const double qkr = q(k, r);
                    q(k, p) = c * qkp - s * qkr;
                    q(k, r) = s * qkp + c * qkr;
                }
            }
        }
    }
    if (detail::off_diagonal_norm(m) > 1e-8 * std::max(1.0, fnorm))
        throw NumericError("symmetric_eig: Jacobi iteration did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::abs(m(x, x)) > std::abs(m(y, y));
    });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const std::size_t src = order[idx];
        out.eigenvalues[idx] = m(src, src);
        std::size_t pivot = 0;
        double best = -1.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double mag = std::abs(q(k, src));
            if (mag > best) {
                best = mag;
                pivot = k;
            }
        }
        const double sign = q(pivot, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, idx) = sign * q(k, src);
    }
    return out;
}

// Inverse of a symmetric positive-definite matrix via Cholesky.
inline Matrix spd_inverse(const Matrix& a) {
    if (a.rows() != a.cols()) throw DataError("spd_inverse: matrix must be square");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0) throw NumericError("spd_inverse: matrix is not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    // Solve L y = e_k, then L^T x = y, one column at a time.
    Matrix inv(n, n);
    Vec y(n), x(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = (i == k) ? 1.0 : 0.0;
            for (std::size_t j = 0; j < i; ++j) s -= l(i, j) * y[j];
            y[i] = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t j = ii + 1; j < n; ++j) s -= l(j, ii) * x[j];
            x[ii] = s / l(ii, ii);
        }
        for (std::size_t i = 0; i < n; ++i) inv(i, k) = x[i];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = avg;
            inv(j, i) = avg;
        }
    return inv;
}

}  // namespace resdet
