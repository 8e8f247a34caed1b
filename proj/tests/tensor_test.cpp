#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "mcst/ops.hpp"
#include "mcst/rng.hpp"
#include "mcst/tape.hpp"
#include "mcst/tensor.hpp"

using namespace mcst;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST(Matmul, IdentityCase) {
  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({2, 1}, {3, 4});
  Tensor y = matmul(I, v);
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y[0], 3);
  EXPECT_EQ(y[1], 4);
}

TEST(Matmul, HandArithmetic) {
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  Tensor y = matmul(a, b);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 11);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  Tensor a = randn({4, 5}, rng);
  Tensor b = randn({5, 3}, rng);
  double err_a =
      grad_check([&](const Tensor& t) { return sum(matmul(t, b)); }, a, 1e-5);
  double err_b =
      grad_check([&](const Tensor& t) { return sum(matmul(a, t)); }, b, 1e-5);
  EXPECT_LT(err_a, 1e-6);
  EXPECT_LT(err_b, 1e-6);
}

TEST(Matmul, BatchedMatchesPerSlice) {
  Rng rng(2);
  Tensor a = randn({3, 2, 4}, rng);
  Tensor b = randn({4, 5}, rng);
  Tensor y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{3, 2, 5}));
  for (size_t s = 0; s < 3; ++s) {
    Tensor as({2, 4});
    for (size_t i = 0; i < 8; ++i) as[i] = a[s * 8 + i];
    Tensor ys = matmul(as, b);
    for (size_t i = 0; i < 10; ++i) EXPECT_EQ(ys[i], y[s * 10 + i]);
  }
}

TEST(Elementwise, ClosedForms) {
  Tensor z = Tensor::from({1}, {0});
  EXPECT_NEAR(softplus(z)[0], std::log(2.0), 1e-12);
  EXPECT_EQ(silu(z)[0], 0.0);
  Tensor x = Tensor::from({2}, {0, 1});
  Tensor y = exp(x);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_NEAR(y[1], 2.718281828459045, 1e-15);
  EXPECT_NEAR(sigmoid(z)[0], 0.5, 1e-15);
}

TEST(Elementwise, BroadcastScalarAndTrailing) {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor s = Tensor::scalar(10);
  Tensor y = add(a, s);
  EXPECT_EQ(y[3], 14);
  Tensor row = Tensor::from({2}, {10, 20});
  Tensor z = mul(a, row);
  EXPECT_EQ(z[0], 10);
  EXPECT_EQ(z[1], 40);
  EXPECT_EQ(z[2], 30);
  EXPECT_EQ(z[3], 80);
}

TEST(Elementwise, NonBroadcastableRaises) {
  Tensor a({2, 3});
  Tensor b({2, 2});
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  Tensor x = randn({4, 6}, rng);
  auto check = [&](auto op) {
    return grad_check([&](const Tensor& t) { return sum(op(t)); }, x, 1e-5);
  };
  EXPECT_LT(check([](const Tensor& t) { return exp(t); }), 1e-5);
  EXPECT_LT(check([](const Tensor& t) { return sigmoid(t); }), 1e-5);
  EXPECT_LT(check([](const Tensor& t) { return silu(t); }), 1e-5);
  EXPECT_LT(check([](const Tensor& t) { return softplus(t); }), 1e-5);
  EXPECT_LT(check([](const Tensor& t) { return scale(t, -2.5); }), 1e-5);
  Tensor other = randn({4, 6}, rng);
  EXPECT_LT(grad_check(
                [&](const Tensor& t) { return sum(mul(t, other)); }, x, 1e-5),
            1e-5);
  EXPECT_LT(grad_check(
                [&](const Tensor& t) { return sum(sub(t, other)); }, x, 1e-5),
            1e-5);
  Tensor row = randn({6}, rng);
  EXPECT_LT(grad_check(
                [&](const Tensor& t) { return sum(mul(t, row)); }, x, 1e-5),
            1e-5);
  EXPECT_LT(grad_check(
                [&](const Tensor& t) { return sum(mul(x, t)); }, row, 1e-5),
            1e-5);
}

TEST(LayerNorm, ConstantRowMapsToZeros) {
  Tensor x = Tensor::from({3}, {5, 5, 5});
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::full({3}, 0.0);
  Tensor y = layer_norm(x, gamma, beta);
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(LayerNorm, SymmetricPair) {
  Tensor x = Tensor::from({2}, {1, 3});
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::full({2}, 0.0);
  Tensor y = layer_norm(x, gamma, beta, 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-6);
  EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(LayerNorm, NormalizedMoments) {
  Rng rng(4);
  Tensor x = randn({8, 16}, rng);
  Tensor gamma = Tensor::full({16}, 1.0);
  Tensor beta = Tensor::full({16}, 0.0);
  Tensor y = layer_norm(x, gamma, beta);
  for (size_t r = 0; r < 8; ++r) {
    double mu = 0, var = 0;
    for (size_t c = 0; c < 16; ++c) mu += y[r * 16 + c];
    mu /= 16;
    for (size_t c = 0; c < 16; ++c) {
      const double d = y[r * 16 + c] - mu;
      var += d * d;
    }
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x = randn({8, 16}, rng);
  Tensor gamma = randn({16}, rng);
  Tensor beta = randn({16}, rng);
  double ex = grad_check(
      [&](const Tensor& t) { return sum(layer_norm(t, gamma, beta)); }, x,
      1e-5);
  double eg = grad_check(
      [&](const Tensor& t) { return sum(layer_norm(x, t, beta)); }, gamma,
      1e-5);
  double eb = grad_check(
      [&](const Tensor& t) { return sum(layer_norm(x, gamma, t)); }, beta,
      1e-5);
  EXPECT_LT(ex, 1e-5);
  EXPECT_LT(eg, 1e-5);
  EXPECT_LT(eb, 1e-5);
}

TEST(ReshapePermute, PermuteBookkeeping) {
  Tensor x({2, 3, 4, 5});
  Tensor y = permute(x, {1, 0, 2, 3});
  EXPECT_EQ(y.shape(), (Shape{3, 2, 4, 5}));
}

TEST(ReshapePermute, ReshapeRoundTripBitwise) {
  Rng rng(6);
  Tensor x = randn({6, 4, 5}, rng);
  Tensor y = reshape(reshape(x, {2, 3, 4, 5}), {6, 4, 5});
  for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(ReshapePermute, PermuteRoundTripBitwise) {
  Rng rng(7);
  Tensor x = randn({2, 3, 4, 5}, rng);
  Tensor y = permute(permute(x, {2, 0, 3, 1}), {1, 3, 0, 2});
  ASSERT_EQ(y.shape(), x.shape());
  for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(ReshapePermute, IndexFormulaOracle) {
  // arange [m, n, t, c]; merging (m, n) must give y[m*N + n, t, c].
  const size_t M = 2, N = 3, T = 4, C = 5;
  Tensor x({M, N, T, C});
  for (size_t i = 0; i < x.size(); ++i) x[i] = double(i);
  Tensor y = reshape(x, {M * N, T, C});
  for (size_t m = 0; m < M; ++m)
    for (size_t n = 0; n < N; ++n)
      for (size_t t = 0; t < T; ++t)
        for (size_t c = 0; c < C; ++c)
          EXPECT_EQ(y.at({m * N + n, t, c}), x.at({m, n, t, c}));
}

TEST(ReshapePermute, CountMismatchRaises) {
  Tensor x({2, 3});
  EXPECT_THROW(reshape(x, {4, 2}), ShapeError);
  EXPECT_THROW(permute(x, {0, 0}), ShapeError);
}

TEST(ReshapePermute, GradientFlowsThroughPermute) {
  Rng rng(8);
  Tensor x = randn({3, 4, 5}, rng);
  Tensor w = randn({3, 4, 5}, rng);
  double err = grad_check(
      [&](const Tensor& t) {
        return sum(mul(permute(t, {2, 0, 1}), permute(w, {2, 0, 1})));
      },
      x, 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(ConcatSlice, WidthArithmetic) {
  std::vector<Tensor> xs;
  for (size_t d : {24u, 24u, 24u, 16u, 80u}) xs.push_back(Tensor({2, d}));
  Tensor y = concat_last(xs);
  EXPECT_EQ(y.shape(), (Shape{2, 168}));
}

TEST(ConcatSlice, SingleInputIdentity) {
  Rng rng(9);
  Tensor x = randn({3, 4}, rng);
  Tensor y = concat_last({x});
  for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(ConcatSlice, SliceBackRecoversInputsBitwise) {
  Rng rng(10);
  Tensor a = randn({2, 3, 4}, rng);
  Tensor b = randn({2, 3, 7}, rng);
  Tensor c = randn({2, 3, 1}, rng);
  Tensor y = concat_last({a, b, c});
  ASSERT_EQ(y.shape(), (Shape{2, 3, 12}));
  Tensor sa = slice_last(y, 0, 4), sb = slice_last(y, 4, 7),
         sc = slice_last(y, 11, 1);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(sa[i], a[i]);
  for (size_t i = 0; i < b.size(); ++i) EXPECT_EQ(sb[i], b[i]);
  for (size_t i = 0; i < c.size(); ++i) EXPECT_EQ(sc[i], c[i]);
}

TEST(ConcatSlice, LeadingShapeMismatchRaises) {
  EXPECT_THROW(concat_last({Tensor({2, 3}), Tensor({3, 3})}), ShapeError);
}

TEST(ConcatSlice, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  Tensor a = randn({2, 3}, rng);
  Tensor b = randn({2, 5}, rng);
  double err = grad_check(
      [&](const Tensor& t) {
        Tensor y = concat_last({t, b});
        return sum(mul(slice_last(y, 2, 4), slice_last(y, 2, 4)));
      },
      a, 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(Expand, RepeatsAndSumsBack) {
  Tensor x = Tensor::from({2}, {3, 4});
  Tensor y = expand(x, 0, 3);
  ASSERT_EQ(y.shape(), (Shape{3, 2}));
  for (size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y[r * 2 + 0], 3);
    EXPECT_EQ(y[r * 2 + 1], 4);
  }
  Rng rng(12);
  Tensor z = randn({4}, rng);
  double err = grad_check(
      [&](const Tensor& t) {
        Tensor e = expand(t, 0, 5);
        return sum(mul(e, e));
      },
      z, 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(ReorderAxis, PermutesSlices) {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor y = reorder_axis(x, 0, {2, 0, 1});
  EXPECT_EQ(y[0], 5);
  EXPECT_EQ(y[1], 6);
  EXPECT_EQ(y[2], 1);
  EXPECT_EQ(y[3], 2);
  EXPECT_EQ(y[4], 3);
  EXPECT_EQ(y[5], 4);
  EXPECT_THROW(reorder_axis(x, 0, {0, 0, 1}), ShapeError);
}

TEST(ReorderAxis, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor x = randn({2, 4, 3}, rng);
  Tensor w = randn({2, 4, 3}, rng);
  double err = grad_check(
      [&](const Tensor& t) {
        return sum(mul(reorder_axis(t, 1, {3, 1, 0, 2}), w));
      },
      x, 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(EmbeddingLookup, RowGather) {
  Tensor table = Tensor::from({2, 2}, {1, 2, 3, 4});
  IntTensor idx({2}, {1, 0});
  Tensor y = embedding_lookup(table, idx);
  EXPECT_EQ(y[0], 3);
  EXPECT_EQ(y[1], 4);
  EXPECT_EQ(y[2], 1);
  EXPECT_EQ(y[3], 2);
}

TEST(EmbeddingLookup, OutOfRangeNamesTableSizeAndValue) {
  Tensor table({2, 2});
  IntTensor idx({1}, {2});
  try {
    embedding_lookup(table, idx);
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
  }
}

TEST(EmbeddingLookup, GradientIsOccurrenceCount) {
  Tensor table = Tensor::full({3, 2}, 1.0);
  table.set_requires_grad(true);
  IntTensor idx({4}, {0, 2, 2, 2});
  Tape tape;
  Tensor y = embedding_lookup(table, idx);
  Tensor loss = sum(y);
  tape.backward(loss);
  const double* g = table.grad();
  EXPECT_EQ(g[0], 1);
  EXPECT_EQ(g[1], 1);
  EXPECT_EQ(g[2], 0);
  EXPECT_EQ(g[3], 0);
  EXPECT_EQ(g[4], 3);
  EXPECT_EQ(g[5], 3);
}

TEST(Dropout, IdentityCases) {
  Rng rng(14);
  Tensor x = randn({4, 4}, rng);
  Tensor y0 = dropout(x, 0.0, true, {1, 2, 3});
  Tensor y1 = dropout(x, 0.5, false, {1, 2, 3});
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(y0[i], x[i]);
    EXPECT_EQ(y1[i], x[i]);
  }
  EXPECT_THROW(dropout(x, 1.0, true, {1, 2, 3}), ConfigError);
}

TEST(Dropout, BinomialConcentration) {
  Tensor x = Tensor::full({1000000}, 1.0);
  Tensor y = dropout(x, 0.1, true, {7, 1, 9});
  size_t zeros = 0;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] == 0.0) ++zeros;
  const double frac = double(zeros) / double(y.size());
  EXPECT_NEAR(frac, 0.1, 0.003);
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] != 0.0) {
      EXPECT_NEAR(y[i], 1.0 / 0.9, 1e-12);
      break;
    }
}

TEST(Dropout, MaskIsAPureFunctionOfTheKey) {
  Rng rng(15);
  Tensor x = randn({128}, rng);
  Tensor a = dropout(x, 0.3, true, {5, 2, 11});
  Tensor b = dropout(x, 0.3, true, {5, 2, 11});
  Tensor c = dropout(x, 0.3, true, {5, 2, 12});
  bool differs = false;
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    differs = differs || a[i] != c[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Conv1dCausal, SeesOnlyThePast) {
  // One channel, kernel [1, 1, 1]: output is a trailing windowed sum.
  Tensor x = Tensor::from({1, 4, 1}, {1, 2, 3, 4});
  Tensor w = Tensor::full({1, 3}, 1.0);
  Tensor b = Tensor::full({1}, 0.0);
  Tensor y = conv1d_causal(x, w, b);
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[1], 3);
  EXPECT_EQ(y[2], 6);
  EXPECT_EQ(y[3], 9);
}

TEST(Conv1dCausal, GradientMatchesFiniteDifferences) {
  Rng rng(16);
  Tensor x = randn({2, 5, 3}, rng);
  Tensor w = randn({3, 4}, rng);
  Tensor b = randn({3}, rng);
  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    Tensor y = conv1d_causal(xx, ww, bb);
    return sum(mul(y, y));
  };
  EXPECT_LT(grad_check([&](const Tensor& t) { return loss(t, w, b); }, x,
                       1e-5),
            1e-5);
  EXPECT_LT(grad_check([&](const Tensor& t) { return loss(x, t, b); }, w,
                       1e-5),
            1e-5);
  EXPECT_LT(grad_check([&](const Tensor& t) { return loss(x, w, t); }, b,
                       1e-5),
            1e-5);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({3}, {5, -1, 2});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 1.0);
}

TEST(Backward, SquareSumClosedForm) {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(mul(x, x));
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossIsAContractError) {
  Tensor x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = mul(x, x);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, DetachedGraphIsAContractError) {
  Tensor x = Tensor::from({1}, {3});
  Tape tape;
  Tensor y = mul(x, x);  // x does not require grad, y is untracked
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(GradCheck, FlagsACorruptedBackwardRule) {
  // Forward computes sum(x^2) but the hand-registered backward rule drops
  // the factor two. The checker must notice.
  auto bad = [](const Tensor& x) {
    Tensor y = Tensor::scalar(0);
    double s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
    y[0] = s;
    if (x.requires_grad() && Tape::active()) {
      y.set_requires_grad(true);
      Tensor xc = x, yc = y;
      Tape::active()->record([xc, yc]() mutable {
        xc.ensure_grad();
        for (size_t i = 0; i < xc.size(); ++i)
          xc.grad()[i] += yc.grad()[0] * xc[i];  // wrong: should be 2x
      });
    }
    return y;
  };
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5});
  EXPECT_GT(grad_check(bad, x, 1e-5), 1e-2);
}

TEST(GradCheck, NonScalarTargetIsAContractError) {
  Tensor x = Tensor::from({2}, {1, 2});
  EXPECT_THROW(
      grad_check([](const Tensor& t) { return mul(t, t); }, x, 1e-5),
      ContractError);
}

TEST(Finiteness, CheckFiniteThrowsOnInf) {
  Tensor x = Tensor::from({2}, {1, 2});
  EXPECT_NO_THROW(check_finite(x, "probe"));
  x[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(check_finite(x, "probe"), NumericError);
}

TEST(MseLoss, MeanOfSquares) {
  Tensor p = Tensor::from({2}, {1, 5});
  Tensor t = Tensor::from({2}, {2, 4});
  EXPECT_EQ(mse_loss(p, t)[0], 1.0);
  Rng rng(17);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({3, 4}, rng);
  EXPECT_LT(grad_check([&](const Tensor& x) { return mse_loss(x, b); }, a,
                       1e-5),
            1e-5);
}
