#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "mcst/error.hpp"

namespace mcst {

using Shape = std::vector<size_t>;

size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<size_t> row_major_strides(const Shape& shape);

/// Dense row-major tensor of f64 with optional gradient buffer.
///
/// Value semantics with shared storage: copies alias the same data, so a
/// Tensor is cheap to pass around and a Parameter handed to the optimizer
/// is the same buffer the model reads. Gradients live in a second buffer
/// of identical shape, allocated on demand.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_ ? data_->size() : 0; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& operator[](size_t i) { return (*data_)[i]; }
  double operator[](size_t i) const { return (*data_)[i]; }

  /// Multi-index read, row-major. Test/debug convenience, not a hot path.
  double at(const std::vector<size_t>& idx) const;

  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v);
  bool has_grad() const { return grad_ != nullptr; }
  double* grad();
  const double* grad() const;
  void ensure_grad();
  void zero_grad();

  /// Deep copy of the values; grad state is not copied.
  Tensor clone() const;

  /// Same storage under a new shape (element count must match). The grad
  /// buffer is shared too, so no tape node is needed for reshapes.
  Tensor reshaped(Shape new_shape) const;

  /// Shares values but drops grad tracking.
  Tensor detached() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

/// Integer tensor for lookup indices (time-of-day slots, node ids).
struct IntTensor {
  Shape shape;
  std::vector<int64_t> data;

  IntTensor() = default;
  IntTensor(Shape s, std::vector<int64_t> v);
  size_t size() const { return data.size(); }
};

/// Named trainable tensor. Names are dotted paths, unique per model, and
/// stable across checkpoint round-trips.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Throws NumericError if the tensor holds NaN/Inf. Called at op
/// boundaries in checked builds; always available for explicit use.
void check_finite(const Tensor& t, const char* what);

#if !defined(NDEBUG) || defined(MCST_CHECK_FINITE)
#define MCST_FINITE_CHECKS 1
#else
#define MCST_FINITE_CHECKS 0
#endif

inline void debug_check_finite(const Tensor& t, const char* what) {
#if MCST_FINITE_CHECKS
  check_finite(t, what);
#else
  (void)t;
  (void)what;
#endif
}

}  // namespace mcst
