#include "mcst/model.hpp"

#include <algorithm>
#include <set>

#include "mcst/init.hpp"

namespace mcst {

void ModelConfig::validate() const {
  if (t_in < 1 || t_out < 1 || c_features < 1 || n_nodes < 1)
    throw ConfigError("model needs t_in, t_out, c_features, n_nodes >= 1");
  if (blocks_per_pathway < 1)
    throw ConfigError("blocks_per_pathway must be >= 1");
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must lie in [0, 1)");
  ssm.validate();
  emb.validate();
  if (emb.d_mamba != ssm.d_model)
    throw ConfigError("embedding output width " +
                      std::to_string(emb.d_mamba) +
                      " must equal block width " +
                      std::to_string(ssm.d_model));
  if (emb.n_nodes != n_nodes || emb.t_in != t_in ||
      emb.c_features != c_features)
    throw ConfigError("embedding node/step/channel counts must match the "
                      "model's");
}

MCSTModel::MCSTModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::derive(seed, streams::kParamInit);
  emb_ = init_embedding_tables(cfg_.emb, rng);
  for (size_t i = 0; i < cfg_.blocks_per_pathway; ++i)
    temporal_.push_back(init_mcst_block(cfg_.ssm, cfg_.d_ff, rng));
  for (size_t i = 0; i < cfg_.blocks_per_pathway; ++i)
    spatial_.push_back(init_mcst_block(cfg_.ssm, cfg_.d_ff, rng));
  w_t_ = Tensor::scalar(0.5);
  w_s_ = Tensor::scalar(0.5);
  const size_t d = cfg_.ssm.d_model;
  head_norm_ = {Tensor::full({d}, 1.0), Tensor({d})};
  const size_t head_in = cfg_.t_in * d;
  const size_t head_out = cfg_.t_out * cfg_.c_features;
  head_w_ = xavier_uniform({head_in, head_out}, head_in, head_out, rng);
  head_b_ = Tensor({head_out});
  mark_trainable(w_t_, w_s_, head_norm_.gamma, head_norm_.beta, head_w_,
                 head_b_);
  spatial_order_.resize(cfg_.n_nodes);
  for (size_t v = 0; v < cfg_.n_nodes; ++v) spatial_order_[v] = v;
}

void MCSTModel::set_spatial_order(std::vector<size_t> order) {
  if (order.size() != cfg_.n_nodes)
    throw ConfigError("spatial order needs " + std::to_string(cfg_.n_nodes) +
                      " entries, got " + std::to_string(order.size()));
  std::vector<bool> seen(order.size(), false);
  for (size_t v : order) {
    if (v >= order.size() || seen[v])
      throw ConfigError("spatial order is not a permutation of the nodes");
    seen[v] = true;
  }
  spatial_order_ = std::move(order);
}

namespace {

void collect_block(const std::string& prefix, const McstBlockParams& b,
                   std::vector<Parameter>& out) {
  out.push_back({prefix + ".norm1.gamma", b.norm1.gamma});
  out.push_back({prefix + ".norm1.beta", b.norm1.beta});
  out.push_back({prefix + ".mamba.w_in", b.mamba.w_in});
  out.push_back({prefix + ".mamba.conv.w", b.mamba.conv_w});
  out.push_back({prefix + ".mamba.conv.b", b.mamba.conv_b});
  out.push_back({prefix + ".mamba.w_x", b.mamba.w_x});
  out.push_back({prefix + ".mamba.w_dt", b.mamba.w_dt});
  out.push_back({prefix + ".mamba.dt_bias", b.mamba.dt_bias});
  out.push_back({prefix + ".mamba.a_log", b.mamba.a_log});
  out.push_back({prefix + ".mamba.d_skip", b.mamba.d_skip});
  out.push_back({prefix + ".mamba.w_out", b.mamba.w_out});
  out.push_back({prefix + ".norm2.gamma", b.norm2.gamma});
  out.push_back({prefix + ".norm2.beta", b.norm2.beta});
  out.push_back({prefix + ".ffn.w1", b.ffn.w1});
  out.push_back({prefix + ".ffn.b1", b.ffn.b1});
  out.push_back({prefix + ".ffn.w2", b.ffn.w2});
  out.push_back({prefix + ".ffn.b2", b.ffn.b2});
}

}  // namespace

std::vector<Parameter> MCSTModel::parameters() const {
  std::vector<Parameter> out;
  out.push_back({"emb.feat.w", emb_.w_feat});
  out.push_back({"emb.tod", emb_.tod});
  out.push_back({"emb.dow", emb_.dow});
  out.push_back({"emb.spatial", emb_.spatial});
  out.push_back({"emb.adaptive", emb_.adaptive});
  out.push_back({"emb.proj.w", emb_.w_proj});
  out.push_back({"emb.proj.b", emb_.b_proj});
  for (size_t i = 0; i < temporal_.size(); ++i)
    collect_block("model.temporal." + std::to_string(i), temporal_[i], out);
  for (size_t i = 0; i < spatial_.size(); ++i)
    collect_block("model.spatial." + std::to_string(i), spatial_[i], out);
  out.push_back({"model.fuse.w_t", w_t_});
  out.push_back({"model.fuse.w_s", w_s_});
  out.push_back({"model.head.norm.gamma", head_norm_.gamma});
  out.push_back({"model.head.norm.beta", head_norm_.beta});
  out.push_back({"model.head.w", head_w_});
  out.push_back({"model.head.b", head_b_});

  std::set<std::string> names;
  for (const Parameter& p : out) {
    if (!names.insert(p.name).second)
      throw ContractError("duplicate parameter name " + p.name);
  }
  return out;
}

Tensor reshape_temporal(const Tensor& E) {
  if (E.rank() != 4)
    throw ShapeError("pathway input must be [samples, steps, nodes, width], "
                     "got " +
                     shape_str(E.shape()));
  const size_t m = E.shape()[0], t = E.shape()[1], n = E.shape()[2],
               d = E.shape()[3];
  return reshape(permute(E, {0, 2, 1, 3}), {m * n, t, d});
}

Tensor reshape_temporal_inverse(const Tensor& Y, size_t m, size_t n) {
  if (Y.rank() != 3 || Y.shape()[0] != m * n)
    throw ShapeError("pathway output rows " + shape_str(Y.shape()) +
                     " do not factor as " + std::to_string(m) + "*" +
                     std::to_string(n));
  const size_t t = Y.shape()[1], d = Y.shape()[2];
  return permute(reshape(Y, {m, n, t, d}), {0, 2, 1, 3});
}

Tensor reshape_spatial(const Tensor& E) {
  if (E.rank() != 4)
    throw ShapeError("pathway input must be [samples, steps, nodes, width], "
                     "got " +
                     shape_str(E.shape()));
  const size_t m = E.shape()[0], t = E.shape()[1], n = E.shape()[2],
               d = E.shape()[3];
  return reshape(E, {m * t, n, d});
}

Tensor reshape_spatial_inverse(const Tensor& Y, size_t m, size_t t) {
  if (Y.rank() != 3 || Y.shape()[0] != m * t)
    throw ShapeError("pathway output rows " + shape_str(Y.shape()) +
                     " do not factor as " + std::to_string(m) + "*" +
                     std::to_string(t));
  return reshape(Y, {m, t, Y.shape()[1], Y.shape()[2]});
}

Tensor combine_pathways(const Tensor& y_temporal, const Tensor& y_spatial,
                        const Tensor& w_t, const Tensor& w_s) {
  if (y_temporal.shape() != y_spatial.shape())
    throw ShapeError("pathway outputs differ: " +
                     shape_str(y_temporal.shape()) + " vs " +
                     shape_str(y_spatial.shape()));
  if (w_t.size() != 1 || w_s.size() != 1)
    throw ShapeError("fusion weights must be scalars");
  return add(mul(y_temporal, w_t), mul(y_spatial, w_s));
}

Tensor MCSTModel::forward(const Tensor& X, const IntTensor& tod_idx,
                          const IntTensor& dow_idx, bool training,
                          const DropoutKey& key, ForwardTrace* trace) const {
  const size_t m = X.rank() == 4 ? X.shape()[0] : 0;
  Tensor Z = assemble_embedding(emb_, cfg_.emb, X, tod_idx, dow_idx);
  Tensor E = project(emb_, cfg_.emb, Z);
  if (trace) trace->e_proj = E;
  DropoutKey k = key;
  k.layer = 0;
  E = dropout(E, cfg_.dropout, training, k);

  const size_t t = cfg_.t_in, n = cfg_.n_nodes;
  Tensor ht = reshape_temporal(E);
  for (size_t i = 0; i < temporal_.size(); ++i) {
    k.layer = 1 + i;
    ht = mcst_block_forward(temporal_[i], cfg_.ssm, ht, training,
                            cfg_.dropout, k);
  }
  Tensor y_t = reshape_temporal_inverse(ht, m, n);

  bool identity_order = true;
  for (size_t v = 0; v < spatial_order_.size(); ++v) {
    if (spatial_order_[v] != v) identity_order = false;
  }
  Tensor Es = identity_order ? E : reorder_axis(E, 2, spatial_order_);
  Tensor hs = reshape_spatial(Es);
  for (size_t i = 0; i < spatial_.size(); ++i) {
    k.layer = 1 + temporal_.size() + i;
    hs = mcst_block_forward(spatial_[i], cfg_.ssm, hs, training, cfg_.dropout,
                            k);
  }
  Tensor y_s = reshape_spatial_inverse(hs, m, t);
  if (!identity_order) {
    std::vector<size_t> inv(spatial_order_.size());
    for (size_t i = 0; i < spatial_order_.size(); ++i)
      inv[spatial_order_[i]] = i;
    y_s = reorder_axis(y_s, 2, inv);
  }

  if (trace) {
    trace->y_temporal = y_t;
    trace->y_spatial = y_s;
  }
  Tensor y_c = combine_pathways(y_t, y_s, w_t_, w_s_);
  if (trace) trace->y_combined = y_c;

  Tensor H = layer_norm(y_c, head_norm_.gamma, head_norm_.beta);
  const size_t d = cfg_.ssm.d_model;
  H = reshape(permute(H, {0, 2, 1, 3}), {m, n, t * d});
  Tensor out = add(matmul(H, head_w_), head_b_);
  out = reshape(out, {m, n, cfg_.t_out, cfg_.c_features});
  return permute(out, {0, 2, 1, 3});
}

size_t MCSTModel::parameter_count() const {
  size_t total = 0;
  for (const Parameter& p : parameters()) total += p.tensor.size();
  return total;
}

std::map<std::string, size_t> MCSTModel::parameter_breakdown() const {
  std::map<std::string, size_t> b;
  for (const Parameter& p : parameters()) {
    std::string group;
    if (p.name.rfind("emb.", 0) == 0) group = "embedding";
    else if (p.name.rfind("model.temporal.", 0) == 0) group = "temporal";
    else if (p.name.rfind("model.spatial.", 0) == 0) group = "spatial";
    else if (p.name.rfind("model.fuse.", 0) == 0) group = "fusion";
    else group = "head";
    b[group] += p.tensor.size();
    b["total"] += p.tensor.size();
  }
  return b;
}

namespace {

const Tensor& find_param(const std::vector<Parameter>& params,
                         const std::string& name) {
  for (const Parameter& p : params) {
    if (p.name == name) return p.tensor;
  }
  throw FormatError("checkpoint is missing parameter " + name);
}

}  // namespace

ModelConfig model_config_from_params(const std::vector<Parameter>& params) {
  ModelConfig cfg;
  const Tensor& feat = find_param(params, "emb.feat.w");
  const Tensor& tod = find_param(params, "emb.tod");
  const Tensor& dow = find_param(params, "emb.dow");
  const Tensor& spatial = find_param(params, "emb.spatial");
  const Tensor& adaptive = find_param(params, "emb.adaptive");
  const Tensor& proj = find_param(params, "emb.proj.w");
  if (feat.rank() != 2 || tod.rank() != 2 || dow.rank() != 2 ||
      spatial.rank() != 2 || adaptive.rank() != 3 || proj.rank() != 2)
    throw FormatError("embedding tensors have unexpected ranks");
  cfg.emb.c_features = feat.shape()[0];
  cfg.emb.d_feat = feat.shape()[1];
  cfg.emb.tod_slots = tod.shape()[0];
  cfg.emb.d_tod = tod.shape()[1];
  cfg.emb.dow_slots = dow.shape()[0];
  cfg.emb.d_dow = dow.shape()[1];
  cfg.emb.n_nodes = spatial.shape()[0];
  cfg.emb.d_spatial = spatial.shape()[1];
  cfg.emb.t_in = adaptive.shape()[0];
  cfg.emb.d_adaptive = adaptive.shape()[2];
  cfg.emb.d_mamba = proj.shape()[1];
  if (proj.shape()[0] != cfg.emb.d_concat())
    throw FormatError("projection width does not match the embedding "
                      "widths");

  size_t blocks = 0;
  while (true) {
    const std::string probe =
        "model.temporal." + std::to_string(blocks) + ".mamba.w_in";
    bool found = false;
    for (const Parameter& p : params) {
      if (p.name == probe) found = true;
    }
    if (!found) break;
    ++blocks;
  }
  if (blocks == 0) throw FormatError("checkpoint holds no pathway blocks");
  cfg.blocks_per_pathway = blocks;

  const Tensor& w_in = find_param(params, "model.temporal.0.mamba.w_in");
  const Tensor& a_log = find_param(params, "model.temporal.0.mamba.a_log");
  const Tensor& w_dt = find_param(params, "model.temporal.0.mamba.w_dt");
  const Tensor& conv_w = find_param(params, "model.temporal.0.mamba.conv.w");
  const Tensor& ffn_w1 = find_param(params, "model.temporal.0.ffn.w1");
  cfg.ssm.d_model = w_in.shape()[0];
  const size_t d_inner = a_log.shape()[0];
  if (cfg.ssm.d_model == 0 || d_inner % cfg.ssm.d_model != 0)
    throw FormatError("inner width is not a multiple of the block width");
  cfg.ssm.expand = d_inner / cfg.ssm.d_model;
  cfg.ssm.state_dim = a_log.shape()[1];
  cfg.ssm.dt_rank = w_dt.shape()[0];
  cfg.ssm.conv_kernel = conv_w.shape()[1];
  cfg.d_ff = ffn_w1.shape()[1];

  const Tensor& head_w = find_param(params, "model.head.w");
  cfg.n_nodes = cfg.emb.n_nodes;
  cfg.t_in = cfg.emb.t_in;
  cfg.c_features = cfg.emb.c_features;
  if (head_w.shape()[1] % cfg.c_features != 0)
    throw FormatError("head output width is not a multiple of the channel "
                      "count");
  cfg.t_out = head_w.shape()[1] / cfg.c_features;
  cfg.validate();
  return cfg;
}

void load_parameters(MCSTModel& model, const std::vector<Parameter>& params) {
  for (Parameter& dst : model.parameters()) {
    const Tensor& src = find_param(params, dst.name);
    if (src.shape() != dst.tensor.shape())
      throw FormatError("parameter " + dst.name + " has shape " +
                        shape_str(src.shape()) + ", expected " +
                        shape_str(dst.tensor.shape()));
    std::copy_n(src.data(), src.size(), dst.tensor.data());
  }
}

}  // namespace mcst
