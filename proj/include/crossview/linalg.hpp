#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace crossview {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct EigenResult {
  /// Descending.
  std::vector<double> values;
  /// Row i is the unit eigenvector for values[i].
  Matrix vectors;
};

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm falls to `tol` times the
/// norm of the input. Eigenvectors are sign-normalized so that the component
/// of largest magnitude is positive (lowest index wins a tie), which makes
/// the output a deterministic function of the input.
///
/// Throws NotSymmetric when |A(i,j) - A(j,i)| exceeds 1e-9 * max(1, |A|max),
/// NoConvergence when `max_sweeps` is exhausted.
EigenResult symmetric_eigen(const Matrix& a, double tol = 1e-15, int max_sweeps = 100);

}  // namespace crossview
