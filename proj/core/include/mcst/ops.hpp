#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mcst/tape.hpp"
#include "mcst/tensor.hpp"

namespace mcst {

/// Dropout mask key. The mask of one call is a pure function of
/// (seed, layer, step, element index), so training runs replay exactly.
struct DropoutKey {
  uint64_t seed = 0;
  uint64_t layer = 0;
  uint64_t step = 0;
};

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Matrix product over the last two axes. Leading batch extents must match,
/// or either operand may be rank-2 and broadcasts over the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops broadcast in two ways: a scalar (size-1)
// operand broadcasts to anything, and a lower-rank operand whose shape
// equals the trailing extents of the other broadcasts over the leading axes.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Zero-mean unit-variance over the last axis, then gamma/beta affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

/// Same elements, new shape. Shares storage; round trips are bitwise.
Tensor reshape(const Tensor& x, Shape new_shape);

/// Axis reorder; axes[i] names the source axis landing at position i.
Tensor permute(const Tensor& x, const std::vector<size_t>& axes);

/// Concatenate along the last axis; all leading extents must agree.
Tensor concat_last(const std::vector<Tensor>& xs);

/// Contiguous range of the last axis.
Tensor slice_last(const Tensor& x, size_t start, size_t len);

/// Insert a new axis of extent `times` at `axis`, repeating the input.
/// Backward sums over the inserted axis.
Tensor expand(const Tensor& x, size_t axis, size_t times);

/// Permute slices along one axis: out[..., i, ...] = x[..., order[i], ...].
/// order must be a permutation of [0, extent). Backward scatter-adds.
Tensor reorder_axis(const Tensor& x, size_t axis,
                    const std::vector<size_t>& order);

// ---------------------------------------------------------------------------
// Indexing / regularization / reductions
// ---------------------------------------------------------------------------

/// Row gather: out[..., :] = table[idx[...], :]. Backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, const IntTensor& idx);

/// Training: zero with probability `rate`, survivors scaled by 1/(1-rate).
/// Eval: identity. rate must lie in [0, 1).
Tensor dropout(const Tensor& x, double rate, bool training,
               const DropoutKey& key);

/// Depthwise causal conv over the middle axis of [batch, len, channels]:
/// left zero-padded, output at step t sees inputs <= t only.
Tensor conv1d_causal(const Tensor& x, const Tensor& weight,
                     const Tensor& bias);

Tensor sum(const Tensor& x);

/// Mean of squared differences over every element.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Max relative error between the taped gradient of f at x and central
/// finite differences (f(x+eps) - f(x-eps)) / (2 eps), checked per element.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps);

/// Relative error with a floor so near-zero pairs compare absolutely.
// The floor turns the ratio into an absolute tolerance for near-zero
// gradients: at the usual 1e-4 threshold it admits |a - b| up to 1e-8,
// well above finite-difference noise yet far below any real defect.
inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-4});
  return std::abs(a - b) / denom;
}

}  // namespace mcst
