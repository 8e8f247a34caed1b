#include "mcst/data.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "mcst/error.hpp"
#include "mcst/rng.hpp"
#include "wire.hpp"

namespace mcst {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'T', 'D'};
constexpr uint32_t kDatasetVersion = 1;
constexpr size_t kMinSteps = 24;  // one 12-in/12-out window

const char* channel_name(size_t c) {
  static const char* names[3] = {"flow", "speed", "occupancy"};
  return names[c];
}

// Flow and speed are non-negative, occupancy is a fraction; everything
// must be finite. `where` names the producer for the error message.
void check_values(const Tensor& raw, const std::string& where) {
  const size_t t = raw.shape()[0], n = raw.shape()[1], c = raw.shape()[2];
  for (size_t k = 0; k < t; ++k)
    for (size_t v = 0; v < n; ++v)
      for (size_t ch = 0; ch < c; ++ch) {
        const double x = raw[(k * n + v) * c + ch];
        const bool bad = !std::isfinite(x) || x < 0.0 ||
                         (ch == 2 && x > 1.0);
        if (bad)
          throw DataError(where + ": " + channel_name(ch) +
                          " value out of range at step " +
                          std::to_string(k) + ", node " + std::to_string(v) +
                          ": " + std::to_string(x));
      }
}

void check_file_struct(const TrafficTensorFile& file,
                       const std::string& where) {
  if (!file.raw.defined() || file.raw.rank() != 3)
    throw DataError(where + ": series tensor must be [steps, nodes, 3]");
  if (file.raw.shape()[2] != 3)
    throw DataError(where + ": expected 3 channels, got " +
                    std::to_string(file.raw.shape()[2]));
  if (file.interval_minutes == 0 || (24 * 60) % file.interval_minutes != 0)
    throw DataError(where + ": interval " +
                    std::to_string(file.interval_minutes) +
                    " minutes does not divide a day");
  if (file.start_slot >= file.slots_per_day())
    throw DataError(where + ": start slot " +
                    std::to_string(file.start_slot) + " not below " +
                    std::to_string(file.slots_per_day()));
  if (file.start_dow >= 7)
    throw DataError(where + ": start day-of-week " +
                    std::to_string(file.start_dow) + " not below 7");
  if (file.sensor_ids.size() != file.nodes())
    throw DataError(where + ": " + std::to_string(file.sensor_ids.size()) +
                    " sensor ids for " + std::to_string(file.nodes()) +
                    " nodes");
  if (file.steps() < kMinSteps)
    throw DataError(where + ": series of " + std::to_string(file.steps()) +
                    " steps is shorter than one window (" +
                    std::to_string(kMinSteps) + ")");
}

}  // namespace

void save_dataset(const std::string& path, const TrafficTensorFile& file) {
  check_file_struct(file, path);
  check_values(file.raw, path);
  for (const std::string& id : file.sensor_ids)
    if (id.find('\n') != std::string::npos)
      throw ContractError("sensor id contains a newline: " + id);

  std::string out;
  out.append(kMagic, 4);
  wire::put_le<uint32_t>(out, kDatasetVersion);
  wire::put_le<uint32_t>(out, static_cast<uint32_t>(file.steps()));
  wire::put_le<uint32_t>(out, static_cast<uint32_t>(file.nodes()));
  wire::put_le<uint32_t>(out, static_cast<uint32_t>(file.channels()));
  wire::put_le<uint16_t>(out, file.interval_minutes);
  wire::put_le<uint16_t>(out, file.start_slot);
  out.push_back(static_cast<char>(file.start_dow));
  for (size_t i = 0; i < file.raw.size(); ++i)
    wire::put_f64(out, file.raw[i]);
  wire::put_le<uint32_t>(out, static_cast<uint32_t>(file.sensor_ids.size()));
  for (size_t i = 0; i < file.sensor_ids.size(); ++i) {
    if (i) out.push_back('\n');
    out.append(file.sensor_ids[i]);
  }
  wire::write_file(path, out);
}

TrafficTensorFile load_dataset(const std::string& path) {
  wire::Reader r(wire::read_file(path), path);
  r.expect_magic(kMagic, "dataset");
  const uint32_t version = r.le<uint32_t>();
  if (version != kDatasetVersion)
    r.fail("unsupported dataset version " + std::to_string(version));
  const uint32_t t = r.le<uint32_t>();
  const uint32_t n = r.le<uint32_t>();
  const uint32_t c = r.le<uint32_t>();
  if (t == 0 || n == 0) r.fail("empty series shape in header");
  if (c != 3)
    r.fail("expected 3 channels, got " + std::to_string(c));

  TrafficTensorFile file;
  file.interval_minutes = r.le<uint16_t>();
  file.start_slot = r.le<uint16_t>();
  file.start_dow = r.le<uint8_t>();

  std::vector<double> values(static_cast<size_t>(t) * n * c);
  for (double& v : values) v = r.f64();
  file.raw = Tensor({t, n, c}, std::move(values));

  const uint32_t id_count = r.le<uint32_t>();
  if (id_count != n)
    r.fail(std::to_string(id_count) + " sensor ids for " +
           std::to_string(n) + " nodes");
  std::string blob = r.rest();
  size_t pos = 0;
  for (uint32_t i = 0; i < id_count; ++i) {
    size_t nl = (i + 1 == id_count) ? blob.size() : blob.find('\n', pos);
    if (nl == std::string::npos)
      throw FormatError(path + ": sensor id list holds fewer than " +
                        std::to_string(id_count) + " entries");
    file.sensor_ids.push_back(blob.substr(pos, nl - pos));
    pos = nl + 1;
  }

  check_file_struct(file, path);
  check_values(file.raw, path);
  return file;
}

SplitRanges split_chronological(size_t t_total) {
  if (t_total < 10)
    throw ConfigError("cannot split a series of " + std::to_string(t_total) +
                      " steps; need at least 10");
  const size_t train_end = t_total * 7 / 10;
  const size_t val_end = train_end + t_total / 10;
  return {{0, train_end}, {train_end, val_end}, {val_end, t_total}};
}

Normalizer Normalizer::fit(const Tensor& raw, Range range) {
  if (raw.rank() != 3)
    throw ShapeError("normalizer expects a [steps, nodes, channels] tensor");
  if (range.begin >= range.end || range.end > raw.shape()[0])
    throw ConfigError("normalizer range [" + std::to_string(range.begin) +
                      ", " + std::to_string(range.end) +
                      ") outside series of " +
                      std::to_string(raw.shape()[0]) + " steps");
  const size_t n = raw.shape()[1], c = raw.shape()[2];
  const size_t rows = range.length() * n;

  Normalizer out;
  out.mean_.assign(c, 0.0);
  out.sigma_.assign(c, 0.0);
  for (size_t k = range.begin; k < range.end; ++k)
    for (size_t v = 0; v < n; ++v)
      for (size_t ch = 0; ch < c; ++ch)
        out.mean_[ch] += raw[(k * n + v) * c + ch];
  for (size_t ch = 0; ch < c; ++ch) out.mean_[ch] /= double(rows);
  for (size_t k = range.begin; k < range.end; ++k)
    for (size_t v = 0; v < n; ++v)
      for (size_t ch = 0; ch < c; ++ch) {
        const double d = raw[(k * n + v) * c + ch] - out.mean_[ch];
        out.sigma_[ch] += d * d;
      }
  for (size_t ch = 0; ch < c; ++ch) {
    out.sigma_[ch] = std::sqrt(out.sigma_[ch] / double(rows));
    if (out.sigma_[ch] < 1e-8) {
      std::cerr << "warning: channel " << channel_name(ch)
                << " is constant over the fit range; clamping sigma to 1e-8"
                << std::endl;
      out.sigma_[ch] = 1e-8;
    }
  }
  return out;
}

Tensor Normalizer::apply(const Tensor& x) const {
  if (mean_.empty()) throw ContractError("normalizer was never fitted");
  if (x.rank() == 0 || x.shape().back() != mean_.size())
    throw ShapeError("normalizer fitted for " + std::to_string(mean_.size()) +
                     " channels; last axis is " +
                     std::to_string(x.rank() ? x.shape().back() : 0));
  Tensor y(x.shape());
  const size_t c = mean_.size();
  for (size_t i = 0; i < x.size(); ++i)
    y[i] = (x[i] - mean_[i % c]) / sigma_[i % c];
  return y;
}

Tensor Normalizer::invert(const Tensor& x) const {
  if (mean_.empty()) throw ContractError("normalizer was never fitted");
  if (x.rank() == 0 || x.shape().back() != mean_.size())
    throw ShapeError("normalizer fitted for " + std::to_string(mean_.size()) +
                     " channels; last axis is " +
                     std::to_string(x.rank() ? x.shape().back() : 0));
  Tensor y(x.shape());
  const size_t c = mean_.size();
  for (size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] * sigma_[i % c] + mean_[i % c];
  return y;
}

size_t window_count(Range range, size_t t_in, size_t t_out) {
  const size_t need = t_in + t_out;
  if (range.length() < need)
    throw ConfigError("range of " + std::to_string(range.length()) +
                      " steps cannot fit one " + std::to_string(need) +
                      "-step window");
  return range.length() - need + 1;
}

std::vector<WindowBatch> make_window_batches(const TrafficTensorFile& file,
                                             const Normalizer& norm,
                                             Range range, size_t t_in,
                                             size_t t_out, size_t batch_size,
                                             uint64_t shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (range.end > file.steps())
    throw ConfigError("window range ends at " + std::to_string(range.end) +
                      " but the series has " + std::to_string(file.steps()) +
                      " steps");
  const size_t count = window_count(range, t_in, t_out);
  const size_t n = file.nodes(), c = file.channels();
  const size_t slots = file.slots_per_day();

  std::vector<size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed != 0) {
    Rng rng(shuffle_seed);
    for (size_t i = count; i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
  }

  auto copy_rows = [&](Tensor& dst, size_t w, size_t first, size_t steps) {
    const size_t row = n * c;
    for (size_t j = 0; j < steps; ++j) {
      const size_t src = (first + j) * row;
      // dst is [m, steps, n, c]
      double* out = &dst[(w * steps + j) * row];
      for (size_t i = 0; i < row; ++i) out[i] = file.raw[src + i];
    }
  };

  std::vector<WindowBatch> batches;
  for (size_t at = 0; at < count; at += batch_size) {
    const size_t m = std::min(batch_size, count - at);
    WindowBatch b;
    Tensor rx({m, t_in, n, c});
    Tensor ry({m, t_out, n, c});
    b.tod = IntTensor({m, t_in}, std::vector<int64_t>(m * t_in));
    b.dow = IntTensor({m, t_in}, std::vector<int64_t>(m * t_in));
    for (size_t w = 0; w < m; ++w) {
      const size_t start = range.begin + order[at + w];
      b.starts.push_back(start);
      copy_rows(rx, w, start, t_in);
      copy_rows(ry, w, start + t_in, t_out);
      for (size_t j = 0; j < t_in; ++j) {
        const size_t abs = file.start_slot + start + j;
        b.tod.data[w * t_in + j] = static_cast<int64_t>(abs % slots);
        b.dow.data[w * t_in + j] =
            static_cast<int64_t>((file.start_dow + abs / slots) % 7);
      }
    }
    b.x = norm.apply(rx);
    b.y = norm.apply(ry);
    batches.push_back(std::move(b));
  }
  return batches;
}

TrafficTensorFile synthetic_generate(size_t n_nodes, size_t days,
                                     uint64_t seed) {
  if (n_nodes == 0) throw ConfigError("node count must be positive");
  if (days == 0) throw ConfigError("day count must be positive");
  const size_t slots = 288;
  const size_t t = days * slots;
  Rng rng = Rng::derive(seed, streams::kSynthetic);

  // Per-node character: demand scale, capacity headroom, free-flow speed.
  std::vector<double> base(n_nodes), cap(n_nodes), free_speed(n_nodes);
  for (size_t v = 0; v < n_nodes; ++v) {
    base[v] = rng.uniform(60.0, 140.0);
    cap[v] = base[v] * rng.uniform(1.6, 2.0);
    free_speed[v] = rng.uniform(90.0, 115.0);
  }

  // Two-peak daily demand curve: morning commute around 08:00 (slot 96)
  // and a broader evening peak around 17:30 (slot 210).
  std::vector<double> profile(slots);
  for (size_t s = 0; s < slots; ++s) {
    const double am = std::exp(-0.5 * std::pow((double(s) - 96.0) / 18.0, 2));
    const double pm =
        std::exp(-0.5 * std::pow((double(s) - 210.0) / 24.0, 2));
    profile[s] = 0.25 + 0.9 * am + 1.0 * pm;
  }

  Tensor raw({t, n_nodes, 3});
  std::vector<double> ar(n_nodes, 0.0), e_raw(n_nodes);
  for (size_t k = 0; k < t; ++k) {
    const size_t dow = (k / slots) % 7;
    const double weekend = dow >= 5 ? 0.6 : 1.0;
    const double prof = profile[k % slots] * weekend;
    for (size_t v = 0; v < n_nodes; ++v)
      e_raw[v] = rng.normal() * 0.05 * base[v];
    for (size_t v = 0; v < n_nodes; ++v) {
      // Neighboring sensors share half of each other's shock, which gives
      // the spatial correlation a graph-aware model can exploit.
      double e = e_raw[v];
      if (v > 0) e += 0.5 * e_raw[v - 1];
      if (v + 1 < n_nodes) e += 0.5 * e_raw[v + 1];
      ar[v] = 0.7 * ar[v] + e;

      const double flow = std::max(0.0, base[v] * prof + ar[v]);
      const double occ =
          1.0 / (1.0 + std::exp(-6.0 * (flow / cap[v] - 0.6)));
      const double speed = std::max(
          0.0, free_speed[v] * (1.0 - 0.75 * occ * occ) +
                   rng.normal() * 1.0);
      double* cell = &raw[(k * n_nodes + v) * 3];
      cell[0] = flow;
      cell[1] = speed;
      cell[2] = std::min(1.0, std::max(0.0, occ));
    }
  }

  TrafficTensorFile file;
  file.raw = std::move(raw);
  file.interval_minutes = 5;
  file.start_slot = 0;
  file.start_dow = 0;
  for (size_t v = 0; v < n_nodes; ++v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synthetic-%03zu", v);
    file.sensor_ids.push_back(buf);
  }
  return file;
}

}  // namespace mcst
