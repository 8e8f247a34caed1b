#pragma once

#include "mcst/ops.hpp"
#include "mcst/rng.hpp"
#include "mcst/tensor.hpp"

namespace mcst {

/// Widths of one selective state-space block.
struct SelectiveSSMConfig {
  size_t d_model = 96;
  size_t expand = 2;
  size_t state_dim = 32;
  size_t dt_rank = 6;
  size_t conv_kernel = 4;

  size_t d_inner() const { return expand * d_model; }
  void validate() const;
};

/// Trainable tensors of one selective SSM. Linear maps are stored
/// [in, out] so they right-multiply row-major activations.
struct SelectiveSSMParams {
  Tensor w_in;     // [d_model, 2*d_inner], value and gate branches
  Tensor conv_w;   // [d_inner, conv_kernel] depthwise causal
  Tensor conv_b;   // [d_inner]
  Tensor w_x;      // [d_inner, dt_rank + 2*state_dim]
  Tensor w_dt;     // [dt_rank, d_inner]
  Tensor dt_bias;  // [d_inner]
  Tensor a_log;    // [d_inner, state_dim]; transition A = -exp(a_log)
  Tensor d_skip;   // [d_inner] direct feedthrough
  Tensor w_out;    // [d_inner, d_model]
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct FFNParams {
  Tensor w1;  // [d_model, d_ff]
  Tensor b1;  // [d_ff]
  Tensor w2;  // [d_ff, d_model]
  Tensor b2;  // [d_model]
};

/// One residual unit: pre-norm selective SSM, then a pre-norm FFN.
struct McstBlockParams {
  LayerNormParams norm1;
  SelectiveSSMParams mamba;
  LayerNormParams norm2;
  FFNParams ffn;
};

SelectiveSSMParams init_selective_ssm(const SelectiveSSMConfig& cfg, Rng& rng);
McstBlockParams init_mcst_block(const SelectiveSSMConfig& cfg, size_t d_ff,
                                Rng& rng);

/// Selective SSM pipeline over U: [rows, len, d_model] (a rank-2 [len,
/// d_model] input is treated as one row and returned rank-2). Causal:
/// output at step k depends only on inputs at steps <= k.
Tensor mamba_block_forward(const SelectiveSSMParams& p,
                           const SelectiveSSMConfig& cfg, const Tensor& U);

/// h = U + mamba(norm1(U)); out = h + FFN(norm2(h)). Dropout is applied to
/// the FFN hidden activation during training.
Tensor mcst_block_forward(const McstBlockParams& p,
                          const SelectiveSSMConfig& cfg, const Tensor& U,
                          bool training, double dropout_rate,
                          const DropoutKey& key);

}  // namespace mcst
