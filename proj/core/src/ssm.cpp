#include "mcst/ssm.hpp"

#include <cmath>

#include "mcst/init.hpp"
#include "mcst/scan.hpp"

namespace mcst {

void SelectiveSSMConfig::validate() const {
  if (d_model < 1 || expand < 1 || state_dim < 1 || dt_rank < 1 ||
      conv_kernel < 1)
    throw ConfigError("every selective SSM dimension must be >= 1");
}

SelectiveSSMParams init_selective_ssm(const SelectiveSSMConfig& cfg,
                                      Rng& rng) {
  cfg.validate();
  const size_t d = cfg.d_model, di = cfg.d_inner(), N = cfg.state_dim;
  const size_t R = cfg.dt_rank, K = cfg.conv_kernel;

  SelectiveSSMParams p;
  p.w_in = xavier_uniform({d, 2 * di}, d, 2 * di, rng);
  const double conv_limit = std::sqrt(1.0 / static_cast<double>(K));
  p.conv_w = uniform_init({di, K}, -conv_limit, conv_limit, rng);
  p.conv_b = Tensor({di});
  p.w_x = xavier_uniform({di, R + 2 * N}, di, R + 2 * N, rng);
  p.w_dt = xavier_uniform({R, di}, R, di, rng);
  // Bias the softplus so initial step sizes land in [1e-3, 0.1], log-spaced.
  p.dt_bias = Tensor({di});
  for (size_t i = 0; i < di; ++i) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
    p.dt_bias[i] = std::log(std::expm1(dt));
  }
  // A = -exp(a_log) spans -1..-N across the state index.
  p.a_log = Tensor({di, N});
  for (size_t i = 0; i < di; ++i)
    for (size_t j = 0; j < N; ++j)
      p.a_log[i * N + j] = std::log(static_cast<double>(j + 1));
  p.d_skip = Tensor::full({di}, 1.0);
  p.w_out = xavier_uniform({di, d}, di, d, rng);
  mark_trainable(p.w_in, p.conv_w, p.conv_b, p.w_x, p.w_dt, p.dt_bias,
                 p.a_log, p.d_skip, p.w_out);
  return p;
}

McstBlockParams init_mcst_block(const SelectiveSSMConfig& cfg, size_t d_ff,
                                Rng& rng) {
  if (d_ff < 1) throw ConfigError("feed-forward width must be >= 1");
  const size_t d = cfg.d_model;
  McstBlockParams b;
  b.norm1 = {Tensor::full({d}, 1.0), Tensor({d})};
  b.mamba = init_selective_ssm(cfg, rng);
  b.norm2 = {Tensor::full({d}, 1.0), Tensor({d})};
  b.ffn.w1 = xavier_uniform({d, d_ff}, d, d_ff, rng);
  b.ffn.b1 = Tensor({d_ff});
  b.ffn.w2 = xavier_uniform({d_ff, d}, d_ff, d, rng);
  b.ffn.b2 = Tensor({d});
  mark_trainable(b.norm1.gamma, b.norm1.beta, b.norm2.gamma, b.norm2.beta,
                 b.ffn.w1, b.ffn.b1, b.ffn.w2, b.ffn.b2);
  return b;
}

namespace {

Tensor as_rows(const Tensor& U, bool& was_rank2) {
  was_rank2 = U.rank() == 2;
  if (was_rank2) return U.reshaped({1, U.shape()[0], U.shape()[1]});
  if (U.rank() != 3)
    throw ShapeError("block input must be [rows, len, width] or [len, "
                     "width], got " +
                     shape_str(U.shape()));
  return U;
}

Tensor from_rows(const Tensor& Y, bool was_rank2) {
  if (!was_rank2) return Y;
  return Y.reshaped({Y.shape()[1], Y.shape()[2]});
}

}  // namespace

Tensor mamba_block_forward(const SelectiveSSMParams& p,
                           const SelectiveSSMConfig& cfg, const Tensor& U) {
  bool was_rank2 = false;
  Tensor X = as_rows(U, was_rank2);
  if (X.shape()[2] != cfg.d_model)
    throw ShapeError("block width " + std::to_string(cfg.d_model) +
                     " expected, got input " + shape_str(U.shape()));
  const size_t di = cfg.d_inner();
  const size_t N = cfg.state_dim;
  const size_t R = cfg.dt_rank;

  Tensor xz = matmul(X, p.w_in);
  Tensor v = slice_last(xz, 0, di);
  Tensor g = slice_last(xz, di, di);
  v = silu(conv1d_causal(v, p.conv_w, p.conv_b));

  Tensor lat = matmul(v, p.w_x);
  Tensor dt_latent = slice_last(lat, 0, R);
  Tensor B_k = slice_last(lat, R, N);
  Tensor C_k = slice_last(lat, R + N, N);
  Tensor delta = softplus(add(matmul(dt_latent, p.w_dt), p.dt_bias));

  Tensor A = scale(exp(p.a_log), -1.0);
  Tensor y = ssm_scan(v, delta, A, B_k, C_k, p.d_skip);
  Tensor out = matmul(mul(y, silu(g)), p.w_out);
  return from_rows(out, was_rank2);
}

Tensor mcst_block_forward(const McstBlockParams& p,
                          const SelectiveSSMConfig& cfg, const Tensor& U,
                          bool training, double dropout_rate,
                          const DropoutKey& key) {
  bool was_rank2 = false;
  Tensor X = as_rows(U, was_rank2);
  Tensor h = add(X, mamba_block_forward(
                        p.mamba, cfg,
                        layer_norm(X, p.norm1.gamma, p.norm1.beta)));
  Tensor z = layer_norm(h, p.norm2.gamma, p.norm2.beta);
  Tensor f = relu(add(matmul(z, p.ffn.w1), p.ffn.b1));
  f = dropout(f, dropout_rate, training, key);
  f = add(matmul(f, p.ffn.w2), p.ffn.b2);
  return from_rows(add(h, f), was_rank2);
}

}  // namespace mcst
