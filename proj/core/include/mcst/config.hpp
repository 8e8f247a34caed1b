#pragma once

#include <map>
#include <string>
#include <vector>

#include "mcst/model.hpp"
#include "mcst/training.hpp"

namespace mcst {

/// One parsed INI-style document: '#'/';' comment lines, [section]
/// headers, key = value pairs. Keys keep source order per section.
struct IniDoc {
  std::vector<std::pair<std::string,
                        std::vector<std::pair<std::string, std::string>>>>
      sections;
};

/// Throws ConfigError with a line number on malformed lines, keys outside
/// a section, or duplicate keys within one.
IniDoc parse_ini(const std::string& text);

/// A full run description: where data comes from, the model dimensions,
/// the optimizer settings, and where artifacts land. Unknown sections or
/// keys are rejected; anything omitted takes the documented default.
struct RunConfig {
  // [data]
  std::string data_path;  // empty: synthesize from nodes/days/seed
  size_t nodes = 6;
  size_t days = 3;
  uint64_t seed = 1;

  // [model]; n_nodes and tod_slots are taken from the dataset at run time
  size_t t_in = 12;
  size_t t_out = 12;
  size_t d_model = 96;
  size_t expand = 2;
  size_t state_dim = 32;
  size_t dt_rank = 0;  // 0: derive ceil(d_model / 16)
  size_t conv_kernel = 4;
  size_t d_feat = 24;
  size_t d_tod = 24;
  size_t d_dow = 24;
  size_t d_spatial = 16;
  size_t d_adaptive = 80;
  size_t blocks = 1;
  size_t d_ff = 0;  // 0: derive 2 * d_model
  double dropout = 0.1;
  std::string spatial_order = "identity";  // identity | reverse | shuffled

  // [train]
  TrainConfig train;  // train.seed mirrors [data] seed

  // [output]
  std::string out_dir = "runs/mcst";

  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);

  /// Every key written out explicitly with full precision. Feeding the
  /// result back through from_text reproduces it byte for byte.
  std::string resolved() const;

  /// Concrete model dimensions for a dataset with the given node count
  /// and slots per day. Validates the combination.
  ModelConfig model_config(size_t n_nodes, size_t tod_slots) const;
};

}  // namespace mcst
