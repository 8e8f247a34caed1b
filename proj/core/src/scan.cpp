#include "mcst/scan.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcst/parallel.hpp"
#include "mcst/tape.hpp"

namespace mcst {

namespace {

using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using CArrMap = Eigen::Map<const Eigen::ArrayXd>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + " differ");
}

struct ScanDims {
  size_t l, d, N;
};

ScanDims check_scan_args(const Tensor& A_bar, const Tensor& B_bar,
                         const Tensor& u, const Tensor& C_k,
                         const Tensor& D_skip) {
  if (A_bar.rank() != 3)
    throw ShapeError("scan transition must be [len, channels, state], got " +
                     shape_str(A_bar.shape()));
  check_same_shape(A_bar, B_bar, "scan transition/input factors");
  const size_t l = A_bar.shape()[0], d = A_bar.shape()[1], N = A_bar.shape()[2];
  if (u.rank() != 2 || u.shape()[0] != l || u.shape()[1] != d)
    throw ShapeError("scan input must be [" + std::to_string(l) + "," +
                     std::to_string(d) + "], got " + shape_str(u.shape()));
  if (C_k.rank() != 2 || C_k.shape()[0] != l || C_k.shape()[1] != N)
    throw ShapeError("scan readout must be [" + std::to_string(l) + "," +
                     std::to_string(N) + "], got " + shape_str(C_k.shape()));
  if (D_skip.size() != d)
    throw ShapeError("scan feedthrough must hold " + std::to_string(d) +
                     " channels, got " + shape_str(D_skip.shape()));
  return {l, d, N};
}

// The recurrence over steps [k0, k1): x starts as the caller's state and is
// updated in place; y rows for those steps are written; states, when given,
// receives x after each step. Both scan entry points run this exact loop,
// so a single-chunk parallel call is bitwise the sequential result.
void scan_span(const double* A_bar, const double* B_bar, const double* u,
               const double* C_k, const double* D_skip, size_t k0, size_t k1,
               size_t d, size_t N, double* x, double* y, double* states) {
  const size_t dn = d * N;
  for (size_t k = k0; k < k1; ++k) {
    const double* a = A_bar + k * dn;
    const double* b = B_bar + k * dn;
    const double* c = C_k + k * N;
    const double* uk = u + k * d;
    double* yk = y + k * d;
    for (size_t i = 0; i < d; ++i) {
      double* xi = x + i * N;
      const double* ai = a + i * N;
      const double* bi = b + i * N;
      const double ui = uk[i];
      double acc = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const double xn = ai[n] * xi[n] + bi[n] * ui;
        xi[n] = xn;
        acc += c[n] * xn;
      }
      yk[i] = acc + D_skip[i] * ui;
    }
    if (states) std::copy_n(x, dn, states + k * dn);
  }
}

// Folds steps [k0, k1) into one transition (a_tot, b_tot), the composition
// of the step elements e_k = (A_bar[k], B_bar[k] ⊙ u_k), newest on the left.
void fold_span(const double* A_bar, const double* B_bar, const double* u,
               size_t k0, size_t k1, size_t d, size_t N, double* a_tot,
               double* b_tot) {
  const size_t dn = d * N;
  std::fill_n(a_tot, dn, 1.0);
  std::fill_n(b_tot, dn, 0.0);
  for (size_t k = k0; k < k1; ++k) {
    const double* a = A_bar + k * dn;
    const double* b = B_bar + k * dn;
    const double* uk = u + k * d;
    for (size_t i = 0; i < d; ++i) {
      const double ui = uk[i];
      const size_t base = i * N;
      for (size_t n = 0; n < N; ++n) {
        const size_t j = base + n;
        a_tot[j] *= a[j];
        b_tot[j] = a[j] * b_tot[j] + b[j] * ui;
      }
    }
  }
}

uint64_t seq_flops(size_t l, size_t d, size_t N) {
  return static_cast<uint64_t>(l) * (5 * d * N + 2 * d);
}

}  // namespace

ScanElement combine(const ScanElement& later, const ScanElement& earlier) {
  check_same_shape(later.a, later.b, "scan element");
  check_same_shape(later.a, earlier.a, "scan combine");
  check_same_shape(earlier.a, earlier.b, "scan element");
  const size_t n = later.a.size();
  ScanElement out{Tensor(later.a.shape()), Tensor(later.a.shape())};
  for (size_t i = 0; i < n; ++i) {
    out.a[i] = later.a[i] * earlier.a[i];
    out.b[i] = later.a[i] * earlier.b[i] + later.b[i];
  }
  return out;
}

std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& B_k,
                                     const Tensor& delta_k) {
  if (A.rank() != 2)
    throw ShapeError("transition matrix must be [channels, state], got " +
                     shape_str(A.shape()));
  const size_t d = A.shape()[0], N = A.shape()[1];
  if (B_k.rank() != 2 || B_k.shape()[1] != N)
    throw ShapeError("input matrix must be [len, " + std::to_string(N) +
                     "], got " + shape_str(B_k.shape()));
  const size_t l = B_k.shape()[0];
  if (delta_k.rank() != 2 || delta_k.shape()[0] != l ||
      delta_k.shape()[1] != d)
    throw ShapeError("step sizes must be [" + std::to_string(l) + "," +
                     std::to_string(d) + "], got " +
                     shape_str(delta_k.shape()));
  for (size_t i = 0; i < A.size(); ++i) {
    if (!(A[i] < 0.0))
      throw ContractError("transition matrix must be strictly negative, got " +
                          std::to_string(A[i]));
  }
  for (size_t i = 0; i < delta_k.size(); ++i) {
    if (!(delta_k[i] > 0.0))
      throw ContractError("step size must be strictly positive, got " +
                          std::to_string(delta_k[i]));
  }

  Tensor A_bar({l, d, N});
  Tensor B_bar({l, d, N});
  const size_t dn = d * N;
  for (size_t k = 0; k < l; ++k) {
    for (size_t i = 0; i < d; ++i) {
      const double dt = delta_k[k * d + i];
      CArrMap arow(A.data() + i * N, static_cast<Eigen::Index>(N));
      ArrMap(A_bar.data() + k * dn + i * N, static_cast<Eigen::Index>(N)) =
          (arow * dt).exp();
      const double* brow = B_k.data() + k * N;
      double* bbar = B_bar.data() + k * dn + i * N;
      for (size_t n = 0; n < N; ++n) bbar[n] = dt * brow[n];
    }
  }
  return {std::move(A_bar), std::move(B_bar)};
}

Tensor selective_scan_sequential(const Tensor& A_bar, const Tensor& B_bar,
                                 const Tensor& u, const Tensor& C_k,
                                 const Tensor& D_skip, ScanStats* stats,
                                 Tensor* states) {
  const ScanDims dims = check_scan_args(A_bar, B_bar, u, C_k, D_skip);
  Tensor y({dims.l, dims.d});
  std::vector<double> x(dims.d * dims.N, 0.0);
  double* states_out = nullptr;
  if (states) {
    *states = Tensor({dims.l, dims.d, dims.N});
    states_out = states->data();
  }
  scan_span(A_bar.data(), B_bar.data(), u.data(), C_k.data(), D_skip.data(),
            0, dims.l, dims.d, dims.N, x.data(), y.data(), states_out);
  if (stats) stats->flops += seq_flops(dims.l, dims.d, dims.N);
  return y;
}

Tensor selective_scan_parallel(const Tensor& A_bar, const Tensor& B_bar,
                               const Tensor& u, const Tensor& C_k,
                               const Tensor& D_skip, size_t chunk,
                               ScanStats* stats) {
  if (chunk < 1) throw ContractError("scan chunk size must be >= 1");
  const ScanDims dims = check_scan_args(A_bar, B_bar, u, C_k, D_skip);
  const size_t l = dims.l, d = dims.d, N = dims.N, dn = d * N;
  const size_t nc = (l + chunk - 1) / chunk;
  if (nc <= 1) return selective_scan_sequential(A_bar, B_bar, u, C_k, D_skip, stats);

  Tensor y({l, d});
  // Pass one: each chunk folds to its total transition (parallel).
  std::vector<double> tot_a(nc * dn), tot_b(nc * dn);
  parallel_for(nc, [&](size_t c) {
    const size_t k0 = c * chunk;
    const size_t k1 = std::min(l, k0 + chunk);
    fold_span(A_bar.data(), B_bar.data(), u.data(), k0, k1, d, N,
              tot_a.data() + c * dn, tot_b.data() + c * dn);
  });

  // Serial pass: carry[c] composes every chunk before c; carry[c].b is the
  // state entering chunk c (the initial state is zero, so only b survives).
  std::vector<double> carry_a(nc * dn), carry_b(nc * dn);
  std::fill_n(carry_a.data(), dn, 1.0);
  std::fill_n(carry_b.data(), dn, 0.0);
  for (size_t c = 1; c < nc; ++c) {
    const double* ta = tot_a.data() + (c - 1) * dn;
    const double* tb = tot_b.data() + (c - 1) * dn;
    const double* pa = carry_a.data() + (c - 1) * dn;
    const double* pb = carry_b.data() + (c - 1) * dn;
    double* ca = carry_a.data() + c * dn;
    double* cb = carry_b.data() + c * dn;
    for (size_t j = 0; j < dn; ++j) {
      ca[j] = ta[j] * pa[j];
      cb[j] = ta[j] * pb[j] + tb[j];
    }
  }

  // Pass two: replay each chunk from its carry state (parallel).
  parallel_for(nc, [&](size_t c) {
    const size_t k0 = c * chunk;
    const size_t k1 = std::min(l, k0 + chunk);
    std::vector<double> x(carry_b.data() + c * dn, carry_b.data() + (c + 1) * dn);
    scan_span(A_bar.data(), B_bar.data(), u.data(), C_k.data(), D_skip.data(),
              k0, k1, d, N, x.data(), y.data(), nullptr);
  });

  if (stats) {
    stats->flops += static_cast<uint64_t>(l) * 4 * dn +   // chunk folds
                    static_cast<uint64_t>(nc - 1) * 3 * dn +  // carries
                    seq_flops(l, d, N);                   // replay
  }
  return y;
}

// ---------------------------------------------------------------------------
// Fused differentiable scan
// ---------------------------------------------------------------------------

Tensor ssm_scan(const Tensor& u, const Tensor& delta, const Tensor& A,
                const Tensor& B, const Tensor& C, const Tensor& D) {
  if (u.rank() != 3)
    throw ShapeError("fused scan input must be [rows, len, channels], got " +
                     shape_str(u.shape()));
  const size_t m = u.shape()[0], l = u.shape()[1], d = u.shape()[2];
  check_same_shape(u, delta, "fused scan input/step sizes");
  if (A.rank() != 2 || A.shape()[0] != d)
    throw ShapeError("fused scan transition must be [" + std::to_string(d) +
                     ", state], got " + shape_str(A.shape()));
  const size_t N = A.shape()[1];
  const Shape bc_shape{m, l, N};
  if (B.shape() != bc_shape || C.shape() != bc_shape)
    throw ShapeError("fused scan input/readout matrices must be " +
                     shape_str(bc_shape) + ", got " + shape_str(B.shape()) +
                     " and " + shape_str(C.shape()));
  if (D.size() != d)
    throw ShapeError("fused scan feedthrough must hold " + std::to_string(d) +
                     " channels, got " + shape_str(D.shape()));

  const bool rec =
      Tape::active() &&
      (u.requires_grad() || delta.requires_grad() || A.requires_grad() ||
       B.requires_grad() || C.requires_grad() || D.requires_grad());

  Tensor y({m, l, d});
  if (rec) y.set_requires_grad(true);

  const size_t dn = d * N;
  // Per-step states and transitions are kept only when a tape will need
  // them; inference runs on one rolling state per row.
  Tensor states, abars;
  if (rec) {
    states = Tensor({m, l, d, N});
    abars = Tensor({m, l, d, N});
  }

  std::vector<double> x(dn), a_local(rec ? 0 : dn);
  const Eigen::Index eN = static_cast<Eigen::Index>(N);
  for (size_t r = 0; r < m; ++r) {
    std::fill(x.begin(), x.end(), 0.0);
    for (size_t k = 0; k < l; ++k) {
      const size_t rk = r * l + k;
      const double* uk = u.data() + rk * d;
      const double* dk = delta.data() + rk * d;
      const double* bk = B.data() + rk * N;
      const double* ck = C.data() + rk * N;
      double* yk = y.data() + rk * d;
      double* a = rec ? abars.data() + rk * dn : a_local.data();
      for (size_t i = 0; i < d; ++i) {
        ArrMap(a + i * N, eN) = (CArrMap(A.data() + i * N, eN) * dk[i]).exp();
      }
      for (size_t i = 0; i < d; ++i) {
        double* xi = x.data() + i * N;
        const double* ai = a + i * N;
        const double bu = dk[i] * uk[i];
        double acc = 0.0;
        for (size_t n = 0; n < N; ++n) {
          const double xn = ai[n] * xi[n] + bk[n] * bu;
          xi[n] = xn;
          acc += ck[n] * xn;
        }
        yk[i] = acc + D[i] * uk[i];
      }
      if (rec) std::copy_n(x.data(), dn, states.data() + rk * dn);
    }
  }
  debug_check_finite(y, "ssm_scan");

  if (rec) {
    Tensor tu = u, td = delta, ta = A, tb = B, tc = C, tD = D, ty = y;
    Tape::active()->record([tu, td, ta, tb, tc, tD, ty, states, abars, m, l,
                            d, N, dn]() mutable {
      const double* dy_all = ty.grad();
      double* du = tu.requires_grad() ? tu.grad() : nullptr;
      double* ddelta = td.requires_grad() ? td.grad() : nullptr;
      double* dA = ta.requires_grad() ? ta.grad() : nullptr;
      double* dB = tb.requires_grad() ? tb.grad() : nullptr;
      double* dC = tc.requires_grad() ? tc.grad() : nullptr;
      double* dD = tD.requires_grad() ? tD.grad() : nullptr;
      const double* pu = tu.data();
      const double* pdelta = td.data();
      const double* pA = ta.data();
      const double* pB = tb.data();
      const double* pC = tc.data();
      const double* pDsk = tD.data();
      const double* px = states.data();
      const double* pa = abars.data();

      std::vector<double> dx(dn);
      const std::vector<double> zeros(dn, 0.0);
      for (size_t r = 0; r < m; ++r) {
        std::fill(dx.begin(), dx.end(), 0.0);
        for (size_t k = l; k-- > 0;) {
          const size_t rk = r * l + k;
          const double* dyk = dy_all + rk * d;
          const double* uk = pu + rk * d;
          const double* dk = pdelta + rk * d;
          const double* bk = pB + rk * N;
          const double* ck = pC + rk * N;
          const double* xk = px + rk * dn;
          const double* xprev = k ? px + (rk - 1) * dn : zeros.data();
          const double* ak = pa + rk * dn;
          double* dBk = dB ? dB + rk * N : nullptr;
          double* dCk = dC ? dC + rk * N : nullptr;
          for (size_t i = 0; i < d; ++i) {
            const size_t base = i * N;
            const double ui = uk[i];
            const double di = dk[i];
            const double gy = dyk[i];
            if (dD) dD[i] += gy * ui;
            double du_acc = gy * pDsk[i];
            double ddt_acc = 0.0;
            for (size_t n = 0; n < N; ++n) {
              const size_t j = base + n;
              const double dxn = dx[j] + gy * ck[n];
              if (dCk) dCk[n] += gy * xk[j];
              const double xp = xprev[j];
              ddt_acc += dxn * (ak[j] * pA[j] * xp + bk[n] * ui);
              if (dA) dA[j] += dxn * di * ak[j] * xp;
              if (dBk) dBk[n] += dxn * di * ui;
              du_acc += dxn * di * bk[n];
              dx[j] = dxn * ak[j];
            }
            if (du) du[rk * d + i] += du_acc;
            if (ddelta) ddelta[rk * d + i] += ddt_acc;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace mcst
