#pragma once

#include <utility>

#include "mcst/ops.hpp"
#include "mcst/rng.hpp"
#include "mcst/tensor.hpp"

namespace mcst {

/// Widths of the per-(sample, timestep, node) representation.
struct EmbeddingConfig {
  size_t n_nodes = 1;
  size_t t_in = 12;
  size_t c_features = 3;
  size_t d_feat = 24;
  size_t d_tod = 24;
  size_t d_dow = 24;
  size_t d_spatial = 16;
  size_t d_adaptive = 80;
  size_t tod_slots = 288;
  size_t dow_slots = 7;
  size_t d_mamba = 96;

  size_t d_concat() const {
    return d_feat + d_tod + d_dow + d_spatial + d_adaptive;
  }
  void validate() const;
};

/// Trainable embedding stores. The adaptive table is position-aware:
/// indexed by (timestep within the window, node), not by wall clock.
struct EmbeddingTables {
  Tensor w_feat;    // [c_features, d_feat], bias-free
  Tensor tod;       // [tod_slots, d_tod]
  Tensor dow;       // [dow_slots, d_dow]
  Tensor spatial;   // [n_nodes, d_spatial]
  Tensor adaptive;  // [t_in, n_nodes, d_adaptive]
  Tensor w_proj;    // [d_concat, d_mamba]
  Tensor b_proj;    // [d_mamba]
};

EmbeddingTables init_embedding_tables(const EmbeddingConfig& cfg, Rng& rng);

/// Slot indices for a window of t steps starting at (start_slot,
/// start_dow): tod[k] = (start_slot + k*stride) mod slots, with the day of
/// week advancing each time the slot count wraps past midnight.
std::pair<IntTensor, IntTensor> time_indices(size_t start_slot,
                                             size_t start_dow, size_t t,
                                             size_t stride,
                                             size_t tod_slots = 288,
                                             size_t dow_slots = 7);

/// Concatenated representation per (sample, timestep, node):
/// [feature-projected X | time-of-day | day-of-week | spatial | adaptive].
/// X: [m, t_in, n, c]; tod_idx, dow_idx: [m, t_in]. Returns [m, t_in, n,
/// d_concat].
Tensor assemble_embedding(const EmbeddingTables& tables,
                          const EmbeddingConfig& cfg, const Tensor& X,
                          const IntTensor& tod_idx, const IntTensor& dow_idx);

/// Affine map of the last axis from d_concat to d_mamba.
Tensor project(const EmbeddingTables& tables, const EmbeddingConfig& cfg,
               const Tensor& Z);

}  // namespace mcst
