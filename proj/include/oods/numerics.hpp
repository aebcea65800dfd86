#pragma once

// Minimal dense linear algebra: vectors, row-major matrices, Cholesky
// factorization with SPD solves, quadratic forms, and a 2-component PCA.
// Everything is double precision and single-threaded; values are immutable
// once built and safe to share across threads.

#include <array>
#include <cstddef>
#include <vector>

namespace oods::numerics {

using Vector = std::vector<double>;

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool all_finite() const;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// Lower-triangular factor L with L * L^T == a. Diagonal strictly positive.
struct CholeskyFactor {
    Matrix lower;
    std::size_t dim() const { return lower.rows(); }
};

// Factors a symmetric positive definite matrix. The input is symmetrized as
// (a + a^T) / 2 first; covariance accumulation leaves round-off asymmetry.
// Throws NotSPD when a pivot is <= 0 (caller should raise its ridge).
CholeskyFactor cholesky(const Matrix& a);

// Solves (L L^T) x = v by forward then backward substitution.
Vector solve_spd(const CholeskyFactor& factor, const Vector& v);

// delta^T (L L^T)^{-1} delta. Non-negative; zero iff delta is zero.
double quad_form(const Vector& delta, const CholeskyFactor& factor);

// Projects mean-centered points onto the top-2 principal directions found by
// power iteration with deflation. Throws DegenerateData when all points are
// identical.
std::vector<std::array<double, 2>> pca_2d(const std::vector<Vector>& points);

// Plumbing shared by the model and scoring modules.
Vector matvec(const Matrix& m, const Vector& v);
Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
double dot(const Vector& a, const Vector& b);

}  // namespace oods::numerics
