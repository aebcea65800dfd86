#include "oods/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "oods/errors.hpp"
#include "oods/rng.hpp"

namespace oods::numerics {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionMismatch(what);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw DimensionMismatch("matrix value count " + std::to_string(values_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double x) { return std::isfinite(x); });
}

CholeskyFactor cholesky(const Matrix& a) {
    require(a.rows() == a.cols(), "cholesky requires a square matrix");
    const std::size_t n = a.rows();
    if (!a.all_finite()) throw NonFiniteValue("cholesky input has non-finite entries");

    // Symmetrize, then standard Cholesky-Crout.
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));

    Matrix lower(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = s(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= lower(j, k) * lower(j, k);
        if (!(diag > 0.0)) {
            throw NotSPD("pivot " + std::to_string(j) + " is " + std::to_string(diag) +
                         "; matrix is not positive definite (try a larger ridge)");
        }
        lower(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double sum = s(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= lower(i, k) * lower(j, k);
            lower(i, j) = sum / lower(j, j);
        }
    }
    if (!lower.all_finite()) throw NonFiniteValue("cholesky produced non-finite entries");
    return CholeskyFactor{std::move(lower)};
}

Vector solve_spd(const CholeskyFactor& factor, const Vector& v) {
    const std::size_t n = factor.dim();
    require(v.size() == n, "solve_spd: vector length " + std::to_string(v.size()) +
                               " != factor dim " + std::to_string(n));
    const Matrix& l = factor.lower;

    // L y = v
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = v[i];
        for (std::size_t k = 0; k < i; ++k) sum -= l(i, k) * y[k];
        y[i] = sum / l(i, i);
    }
    // L^T x = y
    Vector x(n);
    for (std::size_t ii = n; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double sum = y[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= l(k, i) * x[k];
        x[i] = sum / l(i, i);
    }
    for (double xi : x) {
        if (!std::isfinite(xi)) throw NonFiniteValue("solve_spd produced non-finite entries");
    }
    return x;
}

double quad_form(const Vector& delta, const CholeskyFactor& factor) {
    require(delta.size() == factor.dim(), "quad_form: dimension mismatch");
    // delta^T A^{-1} delta == ||L^{-1} delta||^2, so forward substitution alone
    // suffices and the result is non-negative by construction.
    const Matrix& l = factor.lower;
    const std::size_t n = factor.dim();
    Vector y(n);
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sum = delta[i];
        for (std::size_t k = 0; k < i; ++k) sum -= l(i, k) * y[k];
        y[i] = sum / l(i, i);
        q += y[i] * y[i];
    }
    if (!std::isfinite(q)) throw NonFiniteValue("quad_form produced a non-finite value");
    return q;
}

namespace {

// Dominant eigenvector of a small symmetric matrix by power iteration.
// Returns the eigenvalue; the normalized vector is written in place.
double power_iteration(const Matrix& m, Vector& v) {
    const std::size_t n = m.rows();
    Rng rng(0x9e3779b97f4a7c15ULL);  // fixed seed keeps the projection deterministic
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);

    double eigenvalue = 0.0;
    for (int iter = 0; iter < 5000; ++iter) {
        Vector next = matvec(m, v);
        double norm = std::sqrt(dot(next, next));
        if (norm < 1e-300) {
            std::fill(v.begin(), v.end(), 0.0);
            return 0.0;
        }
        for (double& x : next) x /= norm;
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(next[i] - v[i]));
        // Sign flips between iterations mean the eigenvalue is negative in the
        // deflated matrix; measure change up to sign.
        double delta_flip = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            delta_flip = std::max(delta_flip, std::abs(next[i] + v[i]));
        v = std::move(next);
        if (std::min(delta, delta_flip) < 1e-13) break;
    }
    Vector mv = matvec(m, v);
    eigenvalue = dot(v, mv);

    // Canonical sign: largest-magnitude component positive.
    std::size_t imax = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
    if (v[imax] < 0.0)
        for (double& x : v) x = -x;
    return eigenvalue;
}

}  // namespace

std::vector<std::array<double, 2>> pca_2d(const std::vector<Vector>& points) {
    if (points.size() < 3) throw DegenerateData("pca_2d needs at least 3 points");
    const std::size_t d = points[0].size();
    for (const Vector& p : points) {
        if (p.size() != d) throw DimensionMismatch("pca_2d: inconsistent point dimensions");
    }

    Vector mean(d, 0.0);
    for (const Vector& p : points)
        for (std::size_t j = 0; j < d; ++j) mean[j] += p[j];
    for (double& m : mean) m /= static_cast<double>(points.size());

    std::vector<Vector> centered(points.size(), Vector(d));
    double spread = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            centered[i][j] = points[i][j] - mean[j];
            spread += centered[i][j] * centered[i][j];
        }
    }
    if (spread == 0.0) throw DegenerateData("pca_2d: all points are identical");

    Matrix cov(d, d);
    for (const Vector& c : centered)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) cov(i, j) += c[i] * c[j];
    for (double& x : cov.values()) x /= static_cast<double>(points.size());

    Vector e1(d, 0.0);
    const double lambda1 = power_iteration(cov, e1);

    Vector e2(d, 0.0);
    if (d >= 2) {
        Matrix deflated = cov;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) deflated(i, j) -= lambda1 * e1[i] * e1[j];
        double lambda2 = power_iteration(deflated, e2);
        if (lambda2 <= 1e-12 * std::max(lambda1, 1e-300)) {
            std::fill(e2.begin(), e2.end(), 0.0);  // rank-1 data, second coordinate 0
        } else {
            // Re-orthogonalize against e1; deflation leaves slop at the
            // convergence tolerance.
            const double proj = dot(e2, e1);
            for (std::size_t i = 0; i < d; ++i) e2[i] -= proj * e1[i];
            const double norm = std::sqrt(dot(e2, e2));
            if (norm > 1e-300)
                for (double& x : e2) x /= norm;
            else
                std::fill(e2.begin(), e2.end(), 0.0);
        }
    }

    std::vector<std::array<double, 2>> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        out[i] = {dot(centered[i], e1), dot(centered[i], e2)};
    }
    return out;
}

Vector matvec(const Matrix& m, const Vector& v) {
    require(m.cols() == v.size(), "matvec: " + std::to_string(m.rows()) + "x" +
                                      std::to_string(m.cols()) + " * vector of length " +
                                      std::to_string(v.size()));
    Vector out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) sum += m(i, j) * v[j];
        out[i] = sum;
    }
    return out;
}

Vector add(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "add: length mismatch");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Vector sub(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "sub: length mismatch");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

double dot(const Vector& a, const Vector& b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

}  // namespace oods::numerics
