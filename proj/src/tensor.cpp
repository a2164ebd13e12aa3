#include "steadyop/tensor.hpp"

#include "steadyop/errors.hpp"

#include <sstream>
#include <utility>

namespace steadyop {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(Eigen::ArrayXd::Zero(shape_size(shape_))) {}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::Map<const Eigen::ArrayXd>(values.begin(), static_cast<Index>(values.size()))) {}

Tensor Tensor::scalar(double value) { return Tensor({1}, Eigen::ArrayXd::Constant(1, value)); }

Tensor Tensor::constant(Shape shape, double value) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Eigen::ArrayXd::Constant(n, value));
}

Eigen::Map<const RowMatrixXd> Tensor::matrix(Index cols) const {
  if (cols <= 0 || data_.size() % cols != 0) throw DimensionError("matrix view: bad column count");
  return {data_.data(), data_.size() / cols, cols};
}

Eigen::Map<RowMatrixXd> Tensor::matrix(Index cols) {
  if (cols <= 0 || data_.size() % cols != 0) throw DimensionError("matrix view: bad column count");
  return {data_.data(), data_.size() / cols, cols};
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
}

ComplexTensor::ComplexTensor(Shape shape)
    : shape_(std::move(shape)), data_(Eigen::ArrayXcd::Zero(shape_size(shape_))) {}

ComplexTensor::ComplexTensor(Shape shape, Eigen::ArrayXcd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) throw DimensionError("complex tensor data does not match shape");
}

Tensor ComplexTensor::real() const { return Tensor(shape_, data_.real()); }
Tensor ComplexTensor::imag() const { return Tensor(shape_, data_.imag()); }

ComplexTensor ComplexTensor::from_parts(const Tensor& re, const Tensor& im) {
  if (re.shape() != im.shape()) throw DimensionError("real/imag parts differ in shape");
  Eigen::ArrayXcd z(re.size());
  z.real() = re.array();
  z.imag() = im.array();
  return ComplexTensor(re.shape(), std::move(z));
}

void expect_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw DimensionError(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                         shape_string(t.shape()));
}

void expect_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string(what) + ": non-finite value");
}

double norm(const Tensor& t) { return t.array().matrix().norm(); }

double relative_l2(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("relative_l2: shapes " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  const double denom = norm(target);
  if (!(denom > 0.0)) throw DomainError("relative_l2: target has zero norm");
  return (pred.array() - target.array()).matrix().norm() / denom;
}

}  // namespace steadyop
