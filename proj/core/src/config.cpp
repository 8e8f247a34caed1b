#include "mcst/config.hpp"

#include <charconv>
#include <cstdlib>

#include "mcst/error.hpp"
#include "wire.hpp"

namespace mcst {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

uint64_t parse_u64(const std::string& section, const std::string& key,
                   const std::string& val) {
  uint64_t out = 0;
  auto res = std::from_chars(val.data(), val.data() + val.size(), out);
  if (res.ec != std::errc{} || res.ptr != val.data() + val.size())
    throw ConfigError("key '" + key + "' in [" + section +
                      "]: not an integer: '" + val + "'");
  return out;
}

double parse_f64(const std::string& section, const std::string& key,
                 const std::string& val) {
  double out = 0;
  auto res = std::from_chars(val.data(), val.data() + val.size(), out);
  if (res.ec != std::errc{} || res.ptr != val.data() + val.size())
    throw ConfigError("key '" + key + "' in [" + section +
                      "]: not a number: '" + val + "'");
  return out;
}

/// Hands out a section's keys one by one and complains about leftovers.
class SectionReader {
 public:
  SectionReader(std::string name,
                const std::vector<std::pair<std::string, std::string>>& kv)
      : name_(std::move(name)) {
    for (const auto& [k, v] : kv) pending_.emplace_back(k, v);
  }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : pending_)
      if (k == key) return true;
    return false;
  }

  bool take_str(const std::string& key, std::string& out) {
    for (size_t i = 0; i < pending_.size(); ++i)
      if (pending_[i].first == key) {
        out = pending_[i].second;
        pending_.erase(pending_.begin() + i);
        return true;
      }
    return false;
  }

  void take_size(const std::string& key, size_t& out) {
    std::string v;
    if (take_str(key, v))
      out = static_cast<size_t>(parse_u64(name_, key, v));
  }

  void take_u64(const std::string& key, uint64_t& out) {
    std::string v;
    if (take_str(key, v)) out = parse_u64(name_, key, v);
  }

  void take_f64(const std::string& key, double& out) {
    std::string v;
    if (take_str(key, v)) out = parse_f64(name_, key, v);
  }

  void finish() const {
    if (!pending_.empty())
      throw ConfigError("unknown key '" + pending_.front().first +
                        "' in [" + name_ + "]");
  }

 private:
  std::string name_;
  std::vector<std::pair<std::string, std::string>> pending_;
};

}  // namespace

IniDoc parse_ini(const std::string& text) {
  IniDoc doc;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;

    if (line[0] == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError("line " + std::to_string(line_no) +
                          ": malformed section header: " + line);
      std::string name = trim(line.substr(1, line.size() - 2));
      for (const auto& [n, kv] : doc.sections)
        if (n == name)
          throw ConfigError("line " + std::to_string(line_no) +
                            ": duplicate section [" + name + "]");
      doc.sections.emplace_back(
          name, std::vector<std::pair<std::string, std::string>>{});
      continue;
    }

    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value, got: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (doc.sections.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": key '" +
                        key + "' outside any section");
    auto& kv = doc.sections.back().second;
    for (const auto& [k, v] : kv)
      if (k == key)
        throw ConfigError("line " + std::to_string(line_no) +
                          ": duplicate key '" + key + "' in [" +
                          doc.sections.back().first + "]");
    kv.emplace_back(key, val);
  }
  return doc;
}

RunConfig RunConfig::from_text(const std::string& text) {
  IniDoc doc = parse_ini(text);
  RunConfig rc;
  bool lr_min_set = false;

  for (const auto& [name, kv] : doc.sections) {
    SectionReader s(name, kv);
    if (name == "data") {
      s.take_str("path", rc.data_path);
      s.take_size("nodes", rc.nodes);
      s.take_size("days", rc.days);
      s.take_u64("seed", rc.seed);
    } else if (name == "model") {
      s.take_size("t_in", rc.t_in);
      s.take_size("t_out", rc.t_out);
      s.take_size("d_model", rc.d_model);
      s.take_size("expand", rc.expand);
      s.take_size("state_dim", rc.state_dim);
      s.take_size("dt_rank", rc.dt_rank);
      s.take_size("conv_kernel", rc.conv_kernel);
      s.take_size("d_feat", rc.d_feat);
      s.take_size("d_tod", rc.d_tod);
      s.take_size("d_dow", rc.d_dow);
      s.take_size("d_spatial", rc.d_spatial);
      s.take_size("d_adaptive", rc.d_adaptive);
      s.take_size("blocks", rc.blocks);
      s.take_size("d_ff", rc.d_ff);
      s.take_f64("dropout", rc.dropout);
      s.take_str("spatial_order", rc.spatial_order);
    } else if (name == "train") {
      lr_min_set = s.has("lr_min");
      s.take_f64("lr_init", rc.train.lr_init);
      s.take_f64("lr_min", rc.train.lr_min);
      s.take_f64("beta1", rc.train.beta1);
      s.take_f64("beta2", rc.train.beta2);
      s.take_f64("adam_eps", rc.train.adam_eps);
      s.take_size("max_epochs", rc.train.max_epochs);
      s.take_size("patience", rc.train.patience);
      s.take_size("batch_size", rc.train.batch_size);
      s.take_f64("clip_norm", rc.train.clip_norm);
    } else if (name == "output") {
      s.take_str("dir", rc.out_dir);
    } else {
      throw ConfigError("unknown section [" + name + "]");
    }
    s.finish();
  }

  if (rc.dt_rank == 0) rc.dt_rank = (rc.d_model + 15) / 16;
  if (rc.d_ff == 0) rc.d_ff = 2 * rc.d_model;
  if (!lr_min_set) rc.train.lr_min = rc.train.lr_init / 100.0;
  rc.train.seed = rc.seed;

  if (rc.spatial_order != "identity" && rc.spatial_order != "reverse" &&
      rc.spatial_order != "shuffled")
    throw ConfigError("spatial_order must be identity, reverse, or "
                      "shuffled; got '" + rc.spatial_order + "'");
  if (!(rc.dropout >= 0.0 && rc.dropout < 1.0))
    throw ConfigError("dropout must lie in [0, 1)");
  rc.train.validate();
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_text(wire::read_file(path));
}

std::string RunConfig::resolved() const {
  std::string o;
  o += "[data]\n";
  o += "path = " + data_path + "\n";
  o += "nodes = " + std::to_string(nodes) + "\n";
  o += "days = " + std::to_string(days) + "\n";
  o += "seed = " + std::to_string(seed) + "\n";
  o += "\n[model]\n";
  o += "t_in = " + std::to_string(t_in) + "\n";
  o += "t_out = " + std::to_string(t_out) + "\n";
  o += "d_model = " + std::to_string(d_model) + "\n";
  o += "expand = " + std::to_string(expand) + "\n";
  o += "state_dim = " + std::to_string(state_dim) + "\n";
  o += "dt_rank = " + std::to_string(dt_rank) + "\n";
  o += "conv_kernel = " + std::to_string(conv_kernel) + "\n";
  o += "d_feat = " + std::to_string(d_feat) + "\n";
  o += "d_tod = " + std::to_string(d_tod) + "\n";
  o += "d_dow = " + std::to_string(d_dow) + "\n";
  o += "d_spatial = " + std::to_string(d_spatial) + "\n";
  o += "d_adaptive = " + std::to_string(d_adaptive) + "\n";
  o += "blocks = " + std::to_string(blocks) + "\n";
  o += "d_ff = " + std::to_string(d_ff) + "\n";
  o += "dropout = " + fmt_double(dropout) + "\n";
  o += "spatial_order = " + spatial_order + "\n";
  o += "\n[train]\n";
  o += "lr_init = " + fmt_double(train.lr_init) + "\n";
  o += "lr_min = " + fmt_double(train.lr_min) + "\n";
  o += "beta1 = " + fmt_double(train.beta1) + "\n";
  o += "beta2 = " + fmt_double(train.beta2) + "\n";
  o += "adam_eps = " + fmt_double(train.adam_eps) + "\n";
  o += "max_epochs = " + std::to_string(train.max_epochs) + "\n";
  o += "patience = " + std::to_string(train.patience) + "\n";
  o += "batch_size = " + std::to_string(train.batch_size) + "\n";
  o += "clip_norm = " + fmt_double(train.clip_norm) + "\n";
  o += "\n[output]\n";
  o += "dir = " + out_dir + "\n";
  return o;
}

ModelConfig RunConfig::model_config(size_t n_nodes,
                                    size_t tod_slots) const {
  ModelConfig mc;
  mc.n_nodes = n_nodes;
  mc.t_in = t_in;
  mc.t_out = t_out;
  mc.c_features = 3;
  mc.blocks_per_pathway = blocks;
  mc.d_ff = d_ff;
  mc.dropout = dropout;
  mc.ssm.d_model = d_model;
  mc.ssm.expand = expand;
  mc.ssm.state_dim = state_dim;
  mc.ssm.dt_rank = dt_rank;
  mc.ssm.conv_kernel = conv_kernel;
  mc.emb.n_nodes = n_nodes;
  mc.emb.t_in = t_in;
  mc.emb.c_features = 3;
  mc.emb.d_feat = d_feat;
  mc.emb.d_tod = d_tod;
  mc.emb.d_dow = d_dow;
  mc.emb.d_spatial = d_spatial;
  mc.emb.d_adaptive = d_adaptive;
  mc.emb.tod_slots = tod_slots;
  mc.emb.dow_slots = 7;
  mc.emb.d_mamba = d_model;
  mc.validate();
  return mc;
}

}  // namespace mcst
