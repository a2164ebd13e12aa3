#pragma once

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace steadyop {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXcd = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major f64 tensor. Grid fields use the layout [H, W, C]
/// (x index outermost, channel innermost).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::ArrayXd data);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor scalar(double value);
  static Tensor constant(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  const Eigen::ArrayXd& array() const { return data_; }
  Eigen::ArrayXd& array() { return data_; }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }

  /// Element of a rank-3 [H, W, C] field.
  double at(Index x, Index y, Index c) const { return data_[(x * shape_[1] + y) * shape_[2] + c]; }
  double& at(Index x, Index y, Index c) { return data_[(x * shape_[1] + y) * shape_[2] + c]; }

  /// View of the tensor as a (size / cols) x cols row-major matrix.
  Eigen::Map<const RowMatrixXd> matrix(Index cols) const;
  Eigen::Map<RowMatrixXd> matrix(Index cols);

  double item() const;
  bool all_finite() const { return data_.allFinite(); }
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  Eigen::ArrayXd data_;
};

/// Dense row-major complex tensor; used for Fourier coefficients and the
/// per-mode spectral weights.
class ComplexTensor {
 public:
  ComplexTensor() = default;
  explicit ComplexTensor(Shape shape);
  ComplexTensor(Shape shape, Eigen::ArrayXcd data);

  const Shape& shape() const { return shape_; }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  const Eigen::ArrayXcd& array() const { return data_; }
  Eigen::ArrayXcd& array() { return data_; }

  std::complex<double> operator[](Index i) const { return data_[i]; }
  std::complex<double>& operator[](Index i) { return data_[i]; }

  Tensor real() const;
  Tensor imag() const;
  static ComplexTensor from_parts(const Tensor& re, const Tensor& im);

 private:
  Shape shape_;
  Eigen::ArrayXcd data_;
};

/// Throws DimensionError unless `t` has exactly `expected`.
void expect_shape(const Tensor& t, const Shape& expected, const char* what);
/// Throws NumericalError when `t` holds NaN or Inf.
void expect_finite(const Tensor& t, const char* what);

/// L2 norm of the flattened tensor.
double norm(const Tensor& t);
/// ||pred - target|| / ||target||. Throws DomainError on a zero-norm target.
double relative_l2(const Tensor& pred, const Tensor& target);

}  // namespace steadyop
