#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcst/tensor.hpp"

namespace mcst {

/// A traffic series with its calendar anchoring. Channels are flow
/// (vehicles per interval), speed (>= 0), occupancy (fraction in [0, 1]).
struct TrafficTensorFile {
  Tensor raw;  // [T_total, n_nodes, 3]
  uint16_t interval_minutes = 5;
  uint16_t start_slot = 0;  // slot-of-day of step 0
  uint8_t start_dow = 0;    // 0 = Monday
  std::vector<std::string> sensor_ids;

  size_t steps() const { return raw.defined() ? raw.shape()[0] : 0; }
  size_t nodes() const { return raw.defined() ? raw.shape()[1] : 0; }
  size_t channels() const { return raw.defined() ? raw.shape()[2] : 0; }
  size_t slots_per_day() const { return (24 * 60) / interval_minutes; }
};

void save_dataset(const std::string& path, const TrafficTensorFile& file);
TrafficTensorFile load_dataset(const std::string& path);

struct Range {
  size_t begin = 0;
  size_t end = 0;
  size_t length() const { return end - begin; }
};

struct SplitRanges {
  Range train, val, test;
};

/// Contiguous 70/10/20 split: [0, ⌊0.7T⌋), [⌊0.7T⌋, ⌊0.7T⌋+⌊0.1T⌋),
/// remainder. T must be at least 10.
SplitRanges split_chronological(size_t t_total);

/// Per-channel z-score transform whose statistics come from one range of
/// one series only.
class Normalizer {
 public:
  Normalizer() = default;

  /// Statistics over steps [range.begin, range.end) of raw [T, n, c].
  /// A constant channel is guarded with sigma = 1e-8 and a warning on
  /// stderr.
  static Normalizer fit(const Tensor& raw, Range range);

  /// (x - mean) / sigma over the last axis. Any rank; last extent must
  /// equal the fitted channel count.
  Tensor apply(const Tensor& x) const;
  /// x * sigma + mean; exact inverse of apply up to rounding.
  Tensor invert(const Tensor& x) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& sigma() const { return sigma_; }

 private:
  std::vector<double> mean_, sigma_;
};

/// A batch of normalized windows. Element x[w] covers source steps
/// [start_w, start_w + t_in) and y[w] the t_out steps immediately after.
struct WindowBatch {
  Tensor x;       // [m, t_in, n, c]
  Tensor y;       // [m, t_out, n, c]
  IntTensor tod;  // [m, t_in]
  IntTensor dow;  // [m, t_in]
  std::vector<size_t> starts;  // source index of each window's first step
};

/// Number of stride-1 windows fully inside the range.
size_t window_count(Range range, size_t t_in, size_t t_out);

/// Builds batches of `batch_size` windows (last batch may be short).
/// shuffle_seed != 0 shuffles the window order with that seed; 0 keeps
/// source order.
std::vector<WindowBatch> make_window_batches(const TrafficTensorFile& file,
                                             const Normalizer& norm,
                                             Range range, size_t t_in,
                                             size_t t_out, size_t batch_size,
                                             uint64_t shuffle_seed);

/// Deterministic synthetic network: per node, a two-peak daily flow
/// profile with weekend damping and spatially-coupled AR(1) noise;
/// occupancy follows flow through a logistic curve; speed falls
/// quadratically with occupancy. Starts Monday 00:00, 5-minute steps.
TrafficTensorFile synthetic_generate(size_t n_nodes, size_t days,
                                     uint64_t seed);

}  // namespace mcst
