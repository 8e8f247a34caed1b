#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcst/embeddings.hpp"
#include "mcst/ssm.hpp"

namespace mcst {

struct ModelConfig {
  size_t n_nodes = 1;
  size_t t_in = 12;
  size_t t_out = 12;
  size_t c_features = 3;
  size_t blocks_per_pathway = 1;
  size_t d_ff = 192;
  double dropout = 0.1;
  SelectiveSSMConfig ssm;
  EmbeddingConfig emb;

  void validate() const;
};

/// Intermediate results a forward pass can expose for inspection.
struct ForwardTrace {
  Tensor e_proj;      // [m, t_in, n, d_mamba] after projection
  Tensor y_temporal;  // [m, t_in, n, d_mamba]
  Tensor y_spatial;   // [m, t_in, n, d_mamba]
  Tensor y_combined;  // [m, t_in, n, d_mamba]
};

/// The forecaster: embeddings, a temporal and a spatial stack of blocks,
/// learned scalar fusion, and a per-node affine head.
class MCSTModel {
 public:
  MCSTModel() = default;
  MCSTModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// Node order for the spatial pathway. Defaults to the dataset order;
  /// must be a permutation of [0, n_nodes). Not part of checkpoints.
  void set_spatial_order(std::vector<size_t> order);
  const std::vector<size_t>& spatial_order() const { return spatial_order_; }

  /// All trainable tensors in a fixed, documented order with unique
  /// dotted names. The tensors alias the model's own storage.
  std::vector<Parameter> parameters() const;

  /// X: [m, t_in, n, c]; tod_idx, dow_idx: [m, t_in].
  /// Returns [m, t_out, n, c]. `key.layer`/`key.step` seed the dropout
  /// masks; pass distinct steps across optimizer steps.
  Tensor forward(const Tensor& X, const IntTensor& tod_idx,
                 const IntTensor& dow_idx, bool training,
                 const DropoutKey& key, ForwardTrace* trace = nullptr) const;

  size_t parameter_count() const;
  /// Component subtotals: embedding, temporal, spatial, fusion, head, total.
  std::map<std::string, size_t> parameter_breakdown() const;

  EmbeddingTables& embedding_tables() { return emb_; }
  std::vector<McstBlockParams>& temporal_blocks() { return temporal_; }
  std::vector<McstBlockParams>& spatial_blocks() { return spatial_; }
  Tensor& fuse_temporal_weight() { return w_t_; }
  Tensor& fuse_spatial_weight() { return w_s_; }

 private:
  ModelConfig cfg_;
  EmbeddingTables emb_;
  std::vector<McstBlockParams> temporal_;
  std::vector<McstBlockParams> spatial_;
  Tensor w_t_, w_s_;  // scalar fusion weights
  LayerNormParams head_norm_;
  Tensor head_w_;  // [t_in * d_mamba, t_out * c_features]
  Tensor head_b_;  // [t_out * c_features]
  std::vector<size_t> spatial_order_;
};

/// [m, t, n, d] -> [m*n, t, d]; element (s, k, v) lands at row s*n + v,
/// position k. Inverse restores the input bitwise.
Tensor reshape_temporal(const Tensor& E);
Tensor reshape_temporal_inverse(const Tensor& Y, size_t m, size_t n);

/// [m, t, n, d] -> [m*t, n, d]; element (s, k, v) lands at row s*t + k,
/// position v. Inverse restores the input bitwise.
Tensor reshape_spatial(const Tensor& E);
Tensor reshape_spatial_inverse(const Tensor& Y, size_t m, size_t t);

/// Elementwise w_t * Y_t + w_s * Y_s with trainable scalar weights.
Tensor combine_pathways(const Tensor& y_temporal, const Tensor& y_spatial,
                        const Tensor& w_t, const Tensor& w_s);

/// Reconstructs the architecture a set of named checkpoint tensors was
/// built with (dropout is not recoverable and keeps its default).
ModelConfig model_config_from_params(const std::vector<Parameter>& params);

/// Copies named tensors into the model; every model parameter must be
/// present with a matching shape.
void load_parameters(MCSTModel& model, const std::vector<Parameter>& params);

}  // namespace mcst
