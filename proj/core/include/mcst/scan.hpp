#pragma once

#include <cstdint>
#include <utility>

#include "mcst/tensor.hpp"

namespace mcst {

/// Work counter. Every scan entry point adds the floating-point operations
/// it actually performs, so linear-work claims are measurable.
struct ScanStats {
  uint64_t flops = 0;
};

/// One step of the state recurrence as an element of the scan monoid:
/// x -> a ⊙ x + b over [d_inner, N]. Identity is (1, 0).
struct ScanElement {
  Tensor a;
  Tensor b;
};

/// Composition "later after earlier": (a2,b2)∘(a1,b1) = (a2⊙a1, a2⊙b1+b2).
/// Associative exactly in real arithmetic.
ScanElement combine(const ScanElement& later, const ScanElement& earlier);

/// Turns continuous dynamics into per-step transition factors.
/// A: [d_inner, N] (diagonal, strictly negative), B_k: [l, N],
/// delta_k: [l, d_inner] (strictly positive).
/// Returns A_bar[k,d,n] = exp(delta_k[k,d] * A[d,n]) (exact hold on the
/// diagonal) and B_bar[k,d,n] = delta_k[k,d] * B_k[k,n] (first-order rule).
std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& B_k,
                                     const Tensor& delta_k);

/// Reference recurrence. x_k = A_bar[k] ⊙ x_{k-1} + B_bar[k] ⊙ u_k with
/// x_0 = 0; y_k = sum_N C_k ⊙ x_k + D_skip ⊙ u_k.
/// A_bar, B_bar: [l, d_inner, N]; u: [l, d_inner]; C_k: [l, N];
/// D_skip: [d_inner]. Returns y: [l, d_inner].
/// If `states` is non-null it receives x at every step as [l, d_inner, N].
Tensor selective_scan_sequential(const Tensor& A_bar, const Tensor& B_bar,
                                 const Tensor& u, const Tensor& C_k,
                                 const Tensor& D_skip,
                                 ScanStats* stats = nullptr,
                                 Tensor* states = nullptr);

/// Same contract as the sequential form, computed as a chunked two-pass
/// prefix scan: pass one folds each chunk to its total transition, a serial
/// pass composes carries across chunks, pass two replays each chunk from
/// its carry. Chunks run on a worker pool; output is independent of
/// scheduling. One chunk degenerates to the sequential loop bitwise.
Tensor selective_scan_parallel(const Tensor& A_bar, const Tensor& B_bar,
                               const Tensor& u, const Tensor& C_k,
                               const Tensor& D_skip, size_t chunk,
                               ScanStats* stats = nullptr);

/// Fused differentiable scan for training, batched over independent rows.
/// u, delta: [m, l, d_inner]; A: [d_inner, N]; B, C: [m, l, N];
/// D: [d_inner]. Computes the discretization inline and returns
/// y: [m, l, d_inner]. Records a single tape node whose backward
/// reconstructs all six input gradients from saved per-step states.
Tensor ssm_scan(const Tensor& u, const Tensor& delta, const Tensor& A,
                const Tensor& B, const Tensor& C, const Tensor& D);

}  // namespace mcst
