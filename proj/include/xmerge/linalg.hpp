#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xmerge/parameter_vector.hpp"

namespace xmerge {

/// Neumaier-compensated running sum. Adding the same values in the same order
/// always yields the same bits, regardless of how the caller batches them.
class CompensatedSum {
 public:
  void add(double value) noexcept;
  double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

/// Dense row-major square matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  explicit DenseMatrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

  std::size_t size() const noexcept { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
  std::span<const double> data() const noexcept { return a_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

struct SymmetricEigen {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[k] pairs with values[k], unit norm
};

/// Cyclic Jacobi eigensolver for small symmetric matrices. Only the upper
/// triangle is read.
SymmetricEigen jacobi_eigen(const DenseMatrix& m);

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
double symmetric_operator_norm(const DenseMatrix& m);

}  // namespace xmerge
