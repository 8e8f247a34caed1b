#include "mcst/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "mcst/rng.hpp"

namespace mcst {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

bool recording(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, bool rec) {
  Tensor out(std::move(shape));
  if (rec) out.set_requires_grad(true);
  return out;
}

// Broadcast classification: shapes equal, one side scalar, or the smaller
// side's shape equal to the trailing extents of the larger. Returns the
// repeat block length of the smaller operand (== its numel).
size_t broadcast_block(const Tensor& big, const Tensor& small,
                       const char* op) {
  if (small.size() == 1) return 1;
  const Shape& bs = big.shape();
  const Shape& ss = small.shape();
  if (ss.size() > bs.size() ||
      !std::equal(ss.rbegin(), ss.rend(), bs.rbegin())) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(bs) + " and " +
                     shape_str(ss) + " are not broadcastable");
  }
  return small.size();
}

// y[i] = f(a[i], b[i % nb]) with nb dividing a.size().
template <typename F>
void zip_suffix(const double* a, const double* b, size_t n, size_t nb,
                double* y, F f) {
  if (nb == n) {
    for (size_t i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
  } else if (nb == 1) {
    const double bv = b[0];
    for (size_t i = 0; i < n; ++i) y[i] = f(a[i], bv);
  } else {
    for (size_t base = 0; base < n; base += nb)
      for (size_t j = 0; j < nb; ++j) y[base + j] = f(a[base + j], b[j]);
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const size_t p = sa[sa.size() - 2], q = sa[sa.size() - 1];
  const size_t q2 = sb[sb.size() - 2], r = sb[sb.size() - 1];
  if (q != q2)
    throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " x " +
                     shape_str(sb));

  const bool a_batched = a.rank() > 2;
  const bool b_batched = b.rank() > 2;
  Shape batch_shape;
  if (a_batched && b_batched) {
    Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
    if (ba != bb)
      throw ShapeError("matmul batch extents differ: " + shape_str(sa) +
                       " x " + shape_str(sb));
    batch_shape = ba;
  } else if (a_batched) {
    batch_shape.assign(sa.begin(), sa.end() - 2);
  } else if (b_batched) {
    batch_shape.assign(sb.begin(), sb.end() - 2);
  }
  const size_t nbatch = numel(batch_shape);

  Shape out_shape = batch_shape;
  out_shape.push_back(p);
  out_shape.push_back(r);
  const bool rec = recording({&a, &b});
  Tensor out = make_output(std::move(out_shape), rec);

  if (!b_batched) {
    // One flattened GEMM covers both the rank-2 and the batched-lhs case.
    CMatMap A(a.data(), nbatch * p, q);
    CMatMap B(b.data(), q, r);
    MatMap(out.data(), nbatch * p, r).noalias() = A * B;
  } else if (!a_batched) {
    CMatMap A(a.data(), p, q);
    for (size_t i = 0; i < nbatch; ++i) {
      CMatMap B(b.data() + i * q * r, q, r);
      MatMap(out.data() + i * p * r, p, r).noalias() = A * B;
    }
  } else {
    for (size_t i = 0; i < nbatch; ++i) {
      CMatMap A(a.data() + i * p * q, p, q);
      CMatMap B(b.data() + i * q * r, q, r);
      MatMap(out.data() + i * p * r, p, r).noalias() = A * B;
    }
  }
  debug_check_finite(out, "matmul");

  if (rec) {
    Tensor ta = a, tb = b, to = out;
    Tape::active()->record([ta, tb, to, p, q, r, nbatch, a_batched,
                            b_batched]() mutable {
      const double* dy = to.grad();
      if (ta.requires_grad()) {
        double* da = ta.grad();
        if (!b_batched) {
          CMatMap DY(dy, nbatch * p, r);
          CMatMap B(tb.data(), q, r);
          MatMap(da, nbatch * p, q).noalias() += DY * B.transpose();
        } else if (!a_batched) {
          for (size_t i = 0; i < nbatch; ++i) {
            CMatMap DY(dy + i * p * r, p, r);
            CMatMap B(tb.data() + i * q * r, q, r);
            MatMap(da, p, q).noalias() += DY * B.transpose();
          }
        } else {
          for (size_t i = 0; i < nbatch; ++i) {
            CMatMap DY(dy + i * p * r, p, r);
            CMatMap B(tb.data() + i * q * r, q, r);
            MatMap(da + i * p * q, p, q).noalias() += DY * B.transpose();
          }
        }
      }
      if (tb.requires_grad()) {
        double* db = tb.grad();
        if (!b_batched) {
          CMatMap A(ta.data(), nbatch * p, q);
          CMatMap DY(dy, nbatch * p, r);
          MatMap(db, q, r).noalias() += A.transpose() * DY;
        } else if (!a_batched) {
          CMatMap A(ta.data(), p, q);
          for (size_t i = 0; i < nbatch; ++i) {
            CMatMap DY(dy + i * p * r, p, r);
            MatMap(db + i * q * r, q, r).noalias() += A.transpose() * DY;
          }
        } else {
          for (size_t i = 0; i < nbatch; ++i) {
            CMatMap A(ta.data() + i * p * q, p, q);
            CMatMap DY(dy + i * p * r, p, r);
            MatMap(db + i * q * r, q, r).noalias() += A.transpose() * DY;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary elementwise
// ---------------------------------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind,
                 const char* name) {
  const bool a_big = a.size() >= b.size();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  const size_t nb = broadcast_block(big, small, name);
  const size_t n = big.size();

  const bool rec = recording({&a, &b});
  Tensor out = make_output(big.shape(), rec);
  double* y = out.data();
  const double* pa = a.data();
  const double* pb = b.data();

  switch (kind) {
    case BinKind::Add:
      if (a_big)
        zip_suffix(pa, pb, n, nb, y, [](double x, double z) { return x + z; });
      else
        zip_suffix(pb, pa, n, nb, y, [](double x, double z) { return x + z; });
      break;
    case BinKind::Sub:
      if (a_big)
        zip_suffix(pa, pb, n, nb, y, [](double x, double z) { return x - z; });
      else
        zip_suffix(pb, pa, n, nb, y, [](double x, double z) { return z - x; });
      break;
    case BinKind::Mul:
      if (a_big)
        zip_suffix(pa, pb, n, nb, y, [](double x, double z) { return x * z; });
      else
        zip_suffix(pb, pa, n, nb, y, [](double x, double z) { return x * z; });
      break;
  }
  debug_check_finite(out, name);

  if (rec) {
    Tensor ta = a, tb = b, to = out;
    Tape::active()->record([ta, tb, to, kind, a_big, n, nb]() mutable {
      const double* dy = to.grad();
      const double* pa = ta.data();
      const double* pb = tb.data();
      const bool is_mul = kind == BinKind::Mul;
      // grad wrt the full-size operand: dy (times the other, cycled)
      auto into_big = [&](double* g, const double* other, double sign) {
        if (!is_mul) {
          for (size_t i = 0; i < n; ++i) g[i] += sign * dy[i];
        } else if (nb == n) {
          for (size_t i = 0; i < n; ++i) g[i] += sign * dy[i] * other[i];
        } else {
          for (size_t base = 0; base < n; base += nb)
            for (size_t j = 0; j < nb; ++j)
              g[base + j] += sign * dy[base + j] * other[j];
        }
      };
      // grad wrt the broadcast operand: block-summed dy (times the other)
      auto into_small = [&](double* g, const double* other, double sign) {
        if (nb == n) {
          for (size_t i = 0; i < n; ++i)
            g[i] += sign * dy[i] * (is_mul ? other[i] : 1.0);
        } else {
          for (size_t base = 0; base < n; base += nb)
            for (size_t j = 0; j < nb; ++j)
              g[j] += sign * dy[base + j] * (is_mul ? other[base + j] : 1.0);
        }
      };
      const double sb = kind == BinKind::Sub ? -1.0 : 1.0;
      if (ta.requires_grad()) {
        if (a_big)
          into_big(ta.grad(), pb, 1.0);
        else
          into_small(ta.grad(), pb, 1.0);
      }
      if (tb.requires_grad()) {
        if (!a_big)
          into_big(tb.grad(), pa, sb);
        else
          into_small(tb.grad(), pa, sb);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Add, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Sub, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Mul, "mul");
}

Tensor scale(const Tensor& a, double c) {
  const bool rec = recording({&a});
  Tensor out = make_output(a.shape(), rec);
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out[i] = c * a[i];
  debug_check_finite(out, "scale");
  if (rec) {
    Tensor ta = a, to = out;
    Tape::active()->record([ta, to, c, n]() mutable {
      if (!ta.requires_grad()) return;
      double* g = ta.grad();
      const double* dy = to.grad();
      for (size_t i = 0; i < n; ++i) g[i] += c * dy[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unary elementwise
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  const bool rec = recording({&a});
  Tensor out = make_output(a.shape(), rec);
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out[i] = fwd(a[i]);
  debug_check_finite(out, name);
  if (rec) {
    Tensor ta = a, to = out;
    Tape::active()->record([ta, to, bwd, n]() mutable {
      if (!ta.requires_grad()) return;
      double* g = ta.grad();
      const double* dy = to.grad();
      const double* x = ta.data();
      const double* y = to.data();
      for (size_t i = 0; i < n; ++i) g[i] += dy[i] * bwd(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary_op(
      a, "silu", [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, "softplus", [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  const size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d)
    throw ShapeError("layer_norm affine size " + std::to_string(gamma.size()) +
                     " vs last axis " + std::to_string(d));
  if (eps <= 0) throw ConfigError("layer_norm eps must be > 0");
  const size_t rows = x.size() / d;

  const bool rec = recording({&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), rec);
  // x_hat and inv_std are needed by backward; cheap enough to keep always.
  Tensor x_hat(x.shape());
  Tensor inv_std({rows});

  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mean = 0;
    for (size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (size_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    double* xh = x_hat.data() + r * d;
    double* y = out.data() + r * d;
    for (size_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mean) * istd;
      y[j] = pg[j] * xh[j] + pb[j];
    }
  }
  debug_check_finite(out, "layer_norm");

  if (rec) {
    Tensor tx = x, tg = gamma, tb = beta, to = out;
    Tape::active()->record([tx, tg, tb, to, x_hat, inv_std, rows,
                            d]() mutable {
      const double* dy = to.grad();
      const double* xh = x_hat.data();
      const double* pg = tg.data();
      if (tg.requires_grad() || tb.requires_grad()) {
        double* dg = tg.requires_grad() ? tg.grad() : nullptr;
        double* db = tb.requires_grad() ? tb.grad() : nullptr;
        for (size_t r = 0; r < rows; ++r) {
          const double* dyr = dy + r * d;
          const double* xhr = xh + r * d;
          for (size_t j = 0; j < d; ++j) {
            if (dg) dg[j] += dyr[j] * xhr[j];
            if (db) db[j] += dyr[j];
          }
        }
      }
      if (tx.requires_grad()) {
        double* dx = tx.grad();
        for (size_t r = 0; r < rows; ++r) {
          const double* dyr = dy + r * d;
          const double* xhr = xh + r * d;
          double m1 = 0, m2 = 0;
          for (size_t j = 0; j < d; ++j) {
            double dxh = dyr[j] * pg[j];
            m1 += dxh;
            m2 += dxh * xhr[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double istd = inv_std[r];
          double* dxr = dx + r * d;
          for (size_t j = 0; j < d; ++j) {
            double dxh = dyr[j] * pg[j];
            dxr[j] += istd * (dxh - m1 - xhr[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  return x.reshaped(std::move(new_shape));
}

Tensor permute(const Tensor& x, const std::vector<size_t>& axes) {
  const size_t rank = x.rank();
  if (axes.size() != rank)
    throw ShapeError("permute axis count " + std::to_string(axes.size()) +
                     " vs rank " + std::to_string(rank));
  std::vector<bool> seen(rank, false);
  for (size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute axes are not a permutation");
    seen[a] = true;
  }

  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[axes[i]];
  const bool rec = recording({&x});
  Tensor out = make_output(out_shape, rec);

  const auto src_strides = row_major_strides(x.shape());
  std::vector<size_t> stride(rank);  // source stride per output axis
  for (size_t i = 0; i < rank; ++i) stride[i] = src_strides[axes[i]];

  const size_t n = x.size();
  std::vector<size_t> odo(rank, 0);
  const double* src = x.data();
  double* dst = out.data();
  size_t off = 0;
  for (size_t i = 0; i < n; ++i) {
    dst[i] = src[off];
    for (size_t ax = rank; ax-- > 0;) {
      off += stride[ax];
      if (++odo[ax] < out_shape[ax]) break;
      off -= stride[ax] * out_shape[ax];
      odo[ax] = 0;
    }
  }

  if (rec) {
    Tensor tx = x, to = out;
    Tape::active()->record([tx, to, out_shape, stride, rank, n]() mutable {
      if (!tx.requires_grad()) return;
      double* dx = tx.grad();
      const double* dy = to.grad();
      std::vector<size_t> odo(rank, 0);
      size_t off = 0;
      for (size_t i = 0; i < n; ++i) {
        dx[off] += dy[i];
        for (size_t ax = rank; ax-- > 0;) {
          off += stride[ax];
          if (++odo[ax] < out_shape[ax]) break;
          off -= stride[ax] * out_shape[ax];
          odo[ax] = 0;
        }
      }
    });
  }
  return out;
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_last of zero tensors");
  const Shape& first = xs[0].shape();
  if (first.empty()) throw ShapeError("concat_last needs rank >= 1");
  Shape lead(first.begin(), first.end() - 1);
  size_t total_last = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != first.size() ||
        !std::equal(lead.begin(), lead.end(), t.shape().begin()))
      throw ShapeError("concat_last leading extents differ: " +
                       shape_str(first) + " vs " + shape_str(t.shape()));
    total_last += t.shape().back();
  }

  bool rec = false;
  if (Tape::active()) {
    for (const Tensor& t : xs) rec = rec || t.requires_grad();
  }
  Shape out_shape = lead;
  out_shape.push_back(total_last);
  Tensor out = make_output(std::move(out_shape), rec);

  const size_t rows = numel(lead);
  double* dst = out.data();
  for (size_t r = 0; r < rows; ++r) {
    double* drow = dst + r * total_last;
    for (const Tensor& t : xs) {
      const size_t d = t.shape().back();
      std::copy_n(t.data() + r * d, d, drow);
      drow += d;
    }
  }

  if (rec) {
    std::vector<Tensor> ins = xs;
    Tensor to = out;
    Tape::active()->record([ins, to, rows, total_last]() mutable {
      const double* dy = to.grad();
      for (size_t r = 0; r < rows; ++r) {
        const double* dyrow = dy + r * total_last;
        for (Tensor& t : ins) {
          const size_t d = t.shape().back();
          if (t.requires_grad()) {
            double* g = t.grad() + r * d;
            for (size_t j = 0; j < d; ++j) g[j] += dyrow[j];
          }
          dyrow += d;
        }
      }
    });
  }
  return out;
}

Tensor slice_last(const Tensor& x, size_t start, size_t len) {
  if (x.rank() < 1) throw ShapeError("slice_last needs rank >= 1");
  const size_t d = x.shape().back();
  if (start + len > d || len == 0)
    throw ShapeError("slice_last [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of last extent " +
                     std::to_string(d));
  const bool rec = recording({&x});
  Shape out_shape = x.shape();
  out_shape.back() = len;
  Tensor out = make_output(std::move(out_shape), rec);

  const size_t rows = x.size() / d;
  for (size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * d + start, len, out.data() + r * len);

  if (rec) {
    Tensor tx = x, to = out;
    Tape::active()->record([tx, to, rows, d, start, len]() mutable {
      if (!tx.requires_grad()) return;
      double* dx = tx.grad();
      const double* dy = to.grad();
      for (size_t r = 0; r < rows; ++r) {
        double* row = dx + r * d + start;
        const double* dyr = dy + r * len;
        for (size_t j = 0; j < len; ++j) row[j] += dyr[j];
      }
    });
  }
  return out;
}

Tensor expand(const Tensor& x, size_t axis, size_t times) {
  if (axis > x.rank())
    throw ShapeError("expand axis " + std::to_string(axis) + " out of rank " +
                     std::to_string(x.rank()));
  if (times == 0) throw ShapeError("expand times must be >= 1");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + static_cast<ptrdiff_t>(axis), times);

  size_t outer = 1;
  for (size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  const size_t inner = x.size() / outer;

  const bool rec = recording({&x});
  Tensor out = make_output(std::move(out_shape), rec);
  for (size_t o = 0; o < outer; ++o) {
    const double* src = x.data() + o * inner;
    double* dst = out.data() + o * times * inner;
    for (size_t t = 0; t < times; ++t) std::copy_n(src, inner, dst + t * inner);
  }

  if (rec) {
    Tensor tx = x, to = out;
    Tape::active()->record([tx, to, outer, inner, times]() mutable {
      if (!tx.requires_grad()) return;
      double* dx = tx.grad();
      const double* dy = to.grad();
      for (size_t o = 0; o < outer; ++o) {
        double* g = dx + o * inner;
        const double* d = dy + o * times * inner;
        for (size_t t = 0; t < times; ++t)
          for (size_t j = 0; j < inner; ++j) g[j] += d[t * inner + j];
      }
    });
  }
  return out;
}

Tensor reorder_axis(const Tensor& x, size_t axis,
                    const std::vector<size_t>& order) {
  if (axis >= x.rank())
    throw ShapeError("reorder axis " + std::to_string(axis) + " out of rank " +
                     std::to_string(x.rank()));
  const size_t extent = x.shape()[axis];
  if (order.size() != extent)
    throw ShapeError("reorder needs " + std::to_string(extent) +
                     " indices, got " + std::to_string(order.size()));
  std::vector<bool> seen(extent, false);
  for (size_t i : order) {
    if (i >= extent || seen[i])
      throw ShapeError("reorder indices are not a permutation of the axis");
    seen[i] = true;
  }

  size_t outer = 1;
  for (size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  size_t inner = 1;
  for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];

  const bool rec = recording({&x});
  Tensor out = make_output(x.shape(), rec);
  for (size_t o = 0; o < outer; ++o) {
    const double* src = x.data() + o * extent * inner;
    double* dst = out.data() + o * extent * inner;
    for (size_t i = 0; i < extent; ++i)
      std::copy_n(src + order[i] * inner, inner, dst + i * inner);
  }

  if (rec) {
    Tensor tx = x, to = out;
    std::vector<size_t> ord = order;
    Tape::active()->record([tx, to, ord, outer, extent, inner]() mutable {
      if (!tx.requires_grad()) return;
      double* dx = tx.grad();
      const double* dy = to.grad();
      for (size_t o = 0; o < outer; ++o) {
        double* g = dx + o * extent * inner;
        const double* d = dy + o * extent * inner;
        for (size_t i = 0; i < extent; ++i) {
          double* grow = g + ord[i] * inner;
          const double* drow = d + i * inner;
          for (size_t j = 0; j < inner; ++j) grow[j] += drow[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding_lookup / dropout / conv
// ---------------------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const IntTensor& idx) {
  if (table.rank() != 2)
    throw ShapeError("embedding table must be rank 2, got " +
                     shape_str(table.shape()));
  const size_t V = table.shape()[0];
  const size_t d = table.shape()[1];
  const bool rec = recording({&table});

  Shape out_shape = idx.shape;
  out_shape.push_back(d);
  Tensor out = make_output(std::move(out_shape), rec);
  for (size_t i = 0; i < idx.size(); ++i) {
    const int64_t row = idx.data[i];
    if (row < 0 || static_cast<size_t>(row) >= V)
      throw IndexError("embedding index " + std::to_string(row) +
                       " outside table of " + std::to_string(V) + " rows");
    std::copy_n(table.data() + static_cast<size_t>(row) * d, d,
                out.data() + i * d);
  }

  if (rec) {
    Tensor tt = table, to = out;
    IntTensor ti = idx;
    Tape::active()->record([tt, to, ti, d]() mutable {
      if (!tt.requires_grad()) return;
      double* g = tt.grad();
      const double* dy = to.grad();
      for (size_t i = 0; i < ti.size(); ++i) {
        double* row = g + static_cast<size_t>(ti.data[i]) * d;
        const double* dyr = dy + i * d;
        for (size_t j = 0; j < d; ++j) row[j] += dyr[j];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training,
               const DropoutKey& key) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0, 1), got " +
                      std::to_string(rate));
  if (!training || rate == 0.0) return x;

  const bool rec = recording({&x});
  Tensor out = make_output(x.shape(), rec);
  const double inv = 1.0 / (1.0 - rate);
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    const bool keep = counter_uniform(key.seed, key.layer, key.step, i) >= rate;
    out[i] = keep ? x[i] * inv : 0.0;
  }

  if (rec) {
    Tensor tx = x, to = out;
    Tape::active()->record([tx, to, rate, inv, key, n]() mutable {
      if (!tx.requires_grad()) return;
      double* g = tx.grad();
      const double* dy = to.grad();
      for (size_t i = 0; i < n; ++i) {
        if (counter_uniform(key.seed, key.layer, key.step, i) >= rate)
          g[i] += dy[i] * inv;
      }
    });
  }
  return out;
}

Tensor conv1d_causal(const Tensor& x, const Tensor& weight,
                     const Tensor& bias) {
  if (x.rank() != 3)
    throw ShapeError("conv1d_causal input must be [batch, len, channels], got " +
                     shape_str(x.shape()));
  const size_t b = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  if (weight.rank() != 2 || weight.shape()[0] != d)
    throw ShapeError("conv weight must be [" + std::to_string(d) +
                     ", k], got " + shape_str(weight.shape()));
  const size_t k = weight.shape()[1];
  if (bias.size() != d) throw ShapeError("conv bias size mismatch");

  const bool rec = recording({&x, &weight, &bias});
  Tensor out = make_output(x.shape(), rec);
  const double* px = x.data();
  const double* pw = weight.data();
  const double* pb = bias.data();
  double* py = out.data();
  for (size_t r = 0; r < b; ++r) {
    const double* xr = px + r * l * d;
    double* yr = py + r * l * d;
    for (size_t t = 0; t < l; ++t) {
      for (size_t c = 0; c < d; ++c) {
        double acc = pb[c];
        for (size_t j = 0; j < k; ++j) {
          // tap j reaches back (k-1-j) steps; left pad is zero
          const ptrdiff_t ts = static_cast<ptrdiff_t>(t) -
                               static_cast<ptrdiff_t>(k - 1 - j);
          if (ts >= 0) acc += pw[c * k + j] * xr[static_cast<size_t>(ts) * d + c];
        }
        yr[t * d + c] = acc;
      }
    }
  }
  debug_check_finite(out, "conv1d_causal");

  if (rec) {
    Tensor tx = x, tw = weight, tb = bias, to = out;
    Tape::active()->record([tx, tw, tb, to, b, l, d, k]() mutable {
      const double* dy = to.grad();
      const double* px = tx.data();
      const double* pw = tw.data();
      double* dx = tx.requires_grad() ? tx.grad() : nullptr;
      double* dw = tw.requires_grad() ? tw.grad() : nullptr;
      double* db = tb.requires_grad() ? tb.grad() : nullptr;
      for (size_t r = 0; r < b; ++r) {
        const double* xr = px + r * l * d;
        const double* dyr = dy + r * l * d;
        for (size_t t = 0; t < l; ++t) {
          for (size_t c = 0; c < d; ++c) {
            const double g = dyr[t * d + c];
            if (db) db[c] += g;
            for (size_t j = 0; j < k; ++j) {
              const ptrdiff_t ts = static_cast<ptrdiff_t>(t) -
                                   static_cast<ptrdiff_t>(k - 1 - j);
              if (ts < 0) continue;
              if (dw) dw[c * k + j] += g * xr[static_cast<size_t>(ts) * d + c];
              if (dx) dx[r * l * d + static_cast<size_t>(ts) * d + c] +=
                  g * pw[c * k + j];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const bool rec = recording({&x});
  double acc = 0;
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) acc += x[i];
  Tensor out = make_output({1}, rec);
  out[0] = acc;
  if (rec) {
    Tensor tx = x, to = out;
    Tape::active()->record([tx, to, n]() mutable {
      if (!tx.requires_grad()) return;
      double* g = tx.grad();
      const double d = to.grad()[0];
      for (size_t i = 0; i < n; ++i) g[i] += d;
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_loss shapes differ: " + shape_str(pred.shape()) +
                     " vs " + shape_str(target.shape()));
  const bool rec = recording({&pred, &target});
  const size_t n = pred.size();
  double acc = 0;
  for (size_t i = 0; i < n; ++i) {
    const double e = pred[i] - target[i];
    acc += e * e;
  }
  Tensor out = make_output({1}, rec);
  out[0] = acc / static_cast<double>(n);
  if (rec) {
    Tensor tp = pred, tt = target, to = out;
    Tape::active()->record([tp, tt, to, n]() mutable {
      const double d = to.grad()[0] * 2.0 / static_cast<double>(n);
      const double* pp = tp.data();
      const double* pt = tt.data();
      if (tp.requires_grad()) {
        double* g = tp.grad();
        for (size_t i = 0; i < n; ++i) g[i] += d * (pp[i] - pt[i]);
      }
      if (tt.requires_grad()) {
        double* g = tt.grad();
        for (size_t i = 0; i < n; ++i) g[i] -= d * (pp[i] - pt[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps) {
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  std::vector<double> analytic(leaf.size());
  {
    Tape tape;
    Tensor y = f(leaf);
    if (y.size() != 1)
      throw ContractError("grad_check target must be scalar-valued");
    tape.backward(y);
    std::copy_n(leaf.grad(), leaf.size(), analytic.data());
  }

  Tensor probe = x.clone();
  double max_err = 0;
  for (size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + eps;
    const double fp = f(probe).item();
    probe[i] = keep - eps;
    const double fm = f(probe).item();
    probe[i] = keep;
    const double numeric = (fp - fm) / (2.0 * eps);
    max_err = std::max(max_err, rel_err(analytic[i], numeric));
  }
  return max_err;
}

}  // namespace mcst
