#include "mcst/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mcst {

size_t numel(const Shape& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::vector<size_t> row_major_strides(const Shape& shape) {
  std::vector<size_t> st(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(numel(shape_), 0.0)) {
  for (size_t e : shape_) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
  if (values.size() != data_->size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(shape_));
  }
  *data_ = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), v);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

double Tensor::at(const std::vector<size_t>& idx) const {
  if (idx.size() != shape_.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " vs tensor rank " + std::to_string(shape_.size()));
  auto st = row_major_strides(shape_);
  size_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= shape_[i])
      throw IndexError("index " + std::to_string(idx[i]) + " out of extent " +
                       std::to_string(shape_[i]));
    off += idx[i] * st[i];
  }
  return (*data_)[off];
}

double Tensor::item() const {
  if (size() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  requires_grad_ = v;
  if (v) ensure_grad();
  return *this;
}

double* Tensor::grad() { return grad_ ? grad_->data() : nullptr; }
const double* Tensor::grad() const { return grad_ ? grad_->data() : nullptr; }

void Tensor::ensure_grad() {
  if (!grad_) grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (numel(new_shape) != size()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                     shape_str(new_shape) + " changes element count");
  }
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  t.grad_ = grad_;
  t.requires_grad_ = requires_grad_;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

IntTensor::IntTensor(Shape s, std::vector<int64_t> v)
    : shape(std::move(s)), data(std::move(v)) {
  if (numel(shape) != data.size())
    throw ShapeError("int tensor value count does not fill shape " +
                     shape_str(shape));
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(what) + " produced a non-finite value");
  }
}

}  // namespace mcst
