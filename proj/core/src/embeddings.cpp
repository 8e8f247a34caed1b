#include "mcst/embeddings.hpp"

#include "mcst/init.hpp"

namespace mcst {

void EmbeddingConfig::validate() const {
  if (n_nodes < 1 || t_in < 1 || c_features < 1)
    throw ConfigError("embedding needs n_nodes, t_in, c_features >= 1");
  if (d_feat < 1 || d_tod < 1 || d_dow < 1 || d_spatial < 1 ||
      d_adaptive < 1 || d_mamba < 1)
    throw ConfigError("every embedding width must be >= 1");
  if (tod_slots < 1 || dow_slots < 1)
    throw ConfigError("slot counts must be >= 1");
}

EmbeddingTables init_embedding_tables(const EmbeddingConfig& cfg, Rng& rng) {
  cfg.validate();
  EmbeddingTables t;
  t.w_feat = xavier_uniform({cfg.c_features, cfg.d_feat}, cfg.c_features,
                            cfg.d_feat, rng);
  t.tod = uniform_init({cfg.tod_slots, cfg.d_tod}, -0.07, 0.07, rng);
  t.dow = uniform_init({cfg.dow_slots, cfg.d_dow}, -0.07, 0.07, rng);
  t.spatial = uniform_init({cfg.n_nodes, cfg.d_spatial}, -0.07, 0.07, rng);
  t.adaptive = uniform_init({cfg.t_in, cfg.n_nodes, cfg.d_adaptive}, -0.07,
                            0.07, rng);
  t.w_proj = xavier_uniform({cfg.d_concat(), cfg.d_mamba}, cfg.d_concat(),
                            cfg.d_mamba, rng);
  t.b_proj = Tensor({cfg.d_mamba});
  mark_trainable(t.w_feat, t.tod, t.dow, t.spatial, t.adaptive, t.w_proj,
                 t.b_proj);
  return t;
}

std::pair<IntTensor, IntTensor> time_indices(size_t start_slot,
                                             size_t start_dow, size_t t,
                                             size_t stride, size_t tod_slots,
                                             size_t dow_slots) {
  if (start_slot >= tod_slots)
    throw ConfigError("start slot " + std::to_string(start_slot) +
                      " outside a day of " + std::to_string(tod_slots) +
                      " slots");
  if (start_dow >= dow_slots)
    throw ConfigError("start day " + std::to_string(start_dow) +
                      " outside a week of " + std::to_string(dow_slots) +
                      " days");
  IntTensor tod{{t}, std::vector<int64_t>(t)};
  IntTensor dow{{t}, std::vector<int64_t>(t)};
  for (size_t k = 0; k < t; ++k) {
    const size_t absolute = start_slot + k * stride;
    tod.data[k] = static_cast<int64_t>(absolute % tod_slots);
    dow.data[k] =
        static_cast<int64_t>((start_dow + absolute / tod_slots) % dow_slots);
  }
  return {std::move(tod), std::move(dow)};
}

Tensor assemble_embedding(const EmbeddingTables& tables,
                          const EmbeddingConfig& cfg, const Tensor& X,
                          const IntTensor& tod_idx,
                          const IntTensor& dow_idx) {
  if (X.rank() != 4)
    throw ShapeError("embedding input must be [samples, steps, nodes, "
                     "channels], got " +
                     shape_str(X.shape()));
  const size_t m = X.shape()[0], t = X.shape()[1], n = X.shape()[2],
               c = X.shape()[3];
  if (t != cfg.t_in || n != cfg.n_nodes || c != cfg.c_features)
    throw ShapeError("embedding input " + shape_str(X.shape()) +
                     " does not match configured [*, " +
                     std::to_string(cfg.t_in) + ", " +
                     std::to_string(cfg.n_nodes) + ", " +
                     std::to_string(cfg.c_features) + "]");
  const Shape idx_shape{m, t};
  if (tod_idx.shape != idx_shape || dow_idx.shape != idx_shape)
    throw ShapeError("time indices must be " + shape_str(idx_shape));

  Tensor feat = matmul(X, tables.w_feat);                   // [m,t,n,d_feat]
  Tensor tod_e = embedding_lookup(tables.tod, tod_idx);     // [m,t,d_tod]
  Tensor dow_e = embedding_lookup(tables.dow, dow_idx);     // [m,t,d_dow]
  tod_e = expand(tod_e, 2, n);
  dow_e = expand(dow_e, 2, n);
  Tensor spat = expand(expand(tables.spatial, 0, t), 0, m);  // [m,t,n,d_sp]
  Tensor adap = expand(tables.adaptive, 0, m);               // [m,t,n,d_ad]
  return concat_last({feat, tod_e, dow_e, spat, adap});
}

Tensor project(const EmbeddingTables& tables, const EmbeddingConfig& cfg,
               const Tensor& Z) {
  if (Z.rank() < 1 || Z.shape().back() != cfg.d_concat())
    throw ShapeError("projection expects last axis " +
                     std::to_string(cfg.d_concat()) + ", got " +
                     shape_str(Z.shape()));
  return add(matmul(Z, tables.w_proj), tables.b_proj);
}

}  // namespace mcst
