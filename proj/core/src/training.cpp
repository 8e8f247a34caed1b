#include "mcst/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "mcst/checkpoint.hpp"
#include "mcst/error.hpp"
#include "mcst/ops.hpp"
#include "mcst/rng.hpp"
#include "mcst/tape.hpp"

namespace mcst {

void TrainConfig::validate() const {
  if (!(lr_init > 0) || !(lr_min > 0) || lr_min > lr_init)
    throw ConfigError("learning rates must satisfy 0 < lr_min <= lr_init");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam epsilon must be positive");
  if (max_epochs == 0) throw ConfigError("max epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (clip_norm < 0) throw ConfigError("clip norm must be non-negative");
}

AdamState init_adam(const std::vector<Parameter>& params) {
  AdamState s;
  for (const Parameter& p : params) {
    s.m.emplace_back(p.tensor.shape());
    s.v.emplace_back(p.tensor.shape());
  }
  return s;
}

void adam_step(std::vector<Parameter>& params, AdamState& state,
               const TrainConfig& cfg, double lr) {
  if (state.m.size() != params.size())
    throw ContractError("adam state does not match the parameter list");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (!p.has_grad())
      throw ContractError("parameter " + params[i].name +
                          " has no gradient for the optimizer step");
    const double* g = p.grad();
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
    }
  }
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0;
  for (Parameter& p : params) {
    if (!p.tensor.has_grad()) continue;
    const double* g = p.tensor.grad();
    for (size_t j = 0; j < p.tensor.size(); ++j) sq += g[j] * g[j];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter& p : params) {
      if (!p.tensor.has_grad()) continue;
      double* g = p.tensor.grad();
      for (size_t j = 0; j < p.tensor.size(); ++j) g[j] *= scale;
    }
  }
  return norm;
}

double cosine_lr(size_t epoch, size_t max_epochs, double lr_init,
                 double lr_min) {
  if (max_epochs == 0 || epoch >= max_epochs) return lr_min;
  const double phase = 3.14159265358979323846 * double(epoch) /
                       double(max_epochs);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

std::pair<bool, EarlyStopState> early_stop_update(const EarlyStopState& s,
                                                  double current_val,
                                                  size_t patience) {
  if (current_val < s.best_val) return {false, {current_val, 0}};
  EarlyStopState next{s.best_val, s.counter + 1};
  return {next.counter >= patience, next};
}

namespace {

struct ErrorGrid {
  size_t horizons = 0, channels = 0;
  std::vector<double> abs_sum, sq_sum, ape_sum;
  std::vector<size_t> count, ape_count;

  void init(size_t h, size_t c) {
    horizons = h;
    channels = c;
    abs_sum.assign(h * c, 0);
    sq_sum.assign(h * c, 0);
    ape_sum.assign(h * c, 0);
    count.assign(h * c, 0);
    ape_count.assign(h * c, 0);
  }

  void add(const Tensor& pred, const Tensor& target, double floor) {
    // Both [m, horizons, n, channels] on the measurement scale.
    const size_t m = pred.shape()[0], n = pred.shape()[2];
    for (size_t w = 0; w < m; ++w)
      for (size_t h = 0; h < horizons; ++h)
        for (size_t v = 0; v < n; ++v)
          for (size_t c = 0; c < channels; ++c) {
            const size_t i = ((w * horizons + h) * n + v) * channels + c;
            const double e = pred[i] - target[i];
            const size_t cell = h * channels + c;
            abs_sum[cell] += std::abs(e);
            sq_sum[cell] += e * e;
            ++count[cell];
            if (std::abs(target[i]) >= floor) {
              ape_sum[cell] += std::abs(e) / std::abs(target[i]);
              ++ape_count[cell];
            }
          }
  }

  MetricsReport report() const {
    MetricsReport r;
    double ta = 0, ts = 0, tp = 0;
    size_t tc = 0, tpc = 0;
    auto emit = [](double a, double s, double p, size_t c, size_t pc,
                   double& mae, double& rmse, double& mape) {
      mae = c ? a / double(c) : 0;
      rmse = c ? std::sqrt(s / double(c)) : 0;
      mape = pc ? 100.0 * p / double(pc) : 0;
    };
    for (size_t c = 0; c < channels; ++c) {
      double a = 0, s = 0, p = 0;
      size_t n = 0, pn = 0;
      for (size_t h = 0; h < horizons; ++h) {
        const size_t cell = h * channels + c;
        a += abs_sum[cell];
        s += sq_sum[cell];
        p += ape_sum[cell];
        n += count[cell];
        pn += ape_count[cell];
      }
      r.mae_per_channel.push_back(0);
      r.rmse_per_channel.push_back(0);
      r.mape_per_channel.push_back(0);
      emit(a, s, p, n, pn, r.mae_per_channel.back(),
           r.rmse_per_channel.back(), r.mape_per_channel.back());
      ta += a;
      ts += s;
      tp += p;
      tc += n;
      tpc += pn;
    }
    for (size_t h = 0; h < horizons; ++h) {
      double a = 0, s = 0, p = 0;
      size_t n = 0, pn = 0;
      for (size_t c = 0; c < channels; ++c) {
        const size_t cell = h * channels + c;
        a += abs_sum[cell];
        s += sq_sum[cell];
        p += ape_sum[cell];
        n += count[cell];
        pn += ape_count[cell];
      }
      r.mae_per_horizon.push_back(0);
      r.rmse_per_horizon.push_back(0);
      r.mape_per_horizon.push_back(0);
      emit(a, s, p, n, pn, r.mae_per_horizon.back(),
           r.rmse_per_horizon.back(), r.mape_per_horizon.back());
    }
    emit(ta, ts, tp, tc, tpc, r.mae, r.rmse, r.mape);
    r.mape_excluded_fraction =
        tc ? double(tc - tpc) / double(tc) : 0;
    return r;
  }
};

}  // namespace

MetricsReport metrics_from_errors(const Tensor& pred, const Tensor& target,
                                  double mape_floor) {
  if (pred.shape() != target.shape())
    throw ShapeError("metrics need matching prediction/target shapes");
  Tensor p4 = pred, t4 = target;
  if (pred.rank() != 4) {
    // Fold anything else into one sample, one horizon, one node.
    p4 = pred.reshaped({1, 1, 1, pred.size()});
    t4 = target.reshaped({1, 1, 1, target.size()});
  }
  ErrorGrid grid;
  grid.init(p4.shape()[1], p4.shape()[3]);
  grid.add(p4, t4, mape_floor);
  return grid.report();
}

MetricsReport evaluate(const Predictor& predict,
                       const std::vector<WindowBatch>& batches,
                       const Normalizer& norm, double mape_floor) {
  if (batches.empty())
    throw ConfigError("evaluation split holds no windows");
  ErrorGrid grid;
  for (const WindowBatch& b : batches) {
    Tensor pred = predict(b);
    if (pred.shape() != b.y.shape())
      throw ShapeError("predictor output shape does not match targets");
    Tensor p = norm.invert(pred);
    Tensor t = norm.invert(b.y);
    if (grid.horizons == 0) grid.init(p.shape()[1], p.shape()[3]);
    grid.add(p, t, mape_floor);
  }
  return grid.report();
}

Tensor historical_baseline(const Tensor& x, size_t t_out,
                           const std::string& mode) {
  if (x.rank() != 4)
    throw ShapeError("baseline expects [m, t_in, n, c] history");
  const size_t m = x.shape()[0], t_in = x.shape()[1];
  const size_t row = x.shape()[2] * x.shape()[3];
  Tensor out({m, t_out, x.shape()[2], x.shape()[3]});
  if (mode == "inertia") {
    for (size_t w = 0; w < m; ++w)
      for (size_t h = 0; h < t_out; ++h)
        for (size_t i = 0; i < row; ++i)
          out[(w * t_out + h) * row + i] =
              x[(w * t_in + (t_in - 1)) * row + i];
  } else if (mode == "mean") {
    for (size_t w = 0; w < m; ++w) {
      for (size_t i = 0; i < row; ++i) {
        double s = 0;
        for (size_t j = 0; j < t_in; ++j) s += x[(w * t_in + j) * row + i];
        s /= double(t_in);
        for (size_t h = 0; h < t_out; ++h)
          out[(w * t_out + h) * row + i] = s;
      }
    }
  } else {
    throw ConfigError("unknown baseline mode: " + mode);
  }
  return out;
}

TrainResult train(MCSTModel& model, const TrafficTensorFile& data,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (mc.n_nodes != data.nodes())
    throw ConfigError("model built for " + std::to_string(mc.n_nodes) +
                      " nodes but the series has " +
                      std::to_string(data.nodes()));
  if (mc.emb.tod_slots != data.slots_per_day())
    throw ConfigError("model expects " + std::to_string(mc.emb.tod_slots) +
                      " slots per day but the series has " +
                      std::to_string(data.slots_per_day()));

  const SplitRanges splits = split_chronological(data.steps());
  const Normalizer norm = Normalizer::fit(data.raw, splits.train);
  const std::vector<WindowBatch> val_batches =
      make_window_batches(data, norm, splits.val, mc.t_in, mc.t_out,
                          cfg.batch_size, 0);

  std::vector<Parameter> params = model.parameters();
  AdamState adam = init_adam(params);
  const uint64_t dropout_seed = mix64(cfg.seed, streams::kDropout);

  Predictor eval_fwd = [&](const WindowBatch& b) {
    return model.forward(b.x, b.tod, b.dow, false, {0, 0, 0});
  };

  TrainResult result;
  EarlyStopState stop_state{std::numeric_limits<double>::infinity(), 0};
  size_t global_step = 0;

  for (size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr_init,
                                cfg.lr_min);

    uint64_t shuffle = mix64(mix64(cfg.seed, streams::kShuffle), epoch);
    if (shuffle == 0) shuffle = 1;
    const std::vector<WindowBatch> train_batches =
        make_window_batches(data, norm, splits.train, mc.t_in, mc.t_out,
                            cfg.batch_size, shuffle);

    double loss_sum = 0;
    size_t sample_count = 0;
    for (const WindowBatch& b : train_batches) {
      Tape tape;
      Tensor pred = model.forward(b.x, b.tod, b.dow, true,
                                  {dropout_seed, 0, global_step});
      Tensor loss = mse_loss(pred, b.y);
      const double lv = loss[0];
      if (!std::isfinite(lv))
        throw NumericError("training diverged at step " +
                           std::to_string(global_step) +
                           ": loss is not finite");
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam_step(params, adam, cfg, lr);
      for (Parameter& p : params) p.tensor.zero_grad();
      const size_t m = b.x.shape()[0];
      loss_sum += lv * double(m);
      sample_count += m;
      ++global_step;
    }

    const MetricsReport val = evaluate(eval_fwd, val_batches, norm);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back({epoch, loss_sum / double(sample_count),
                              val.mae, val.rmse, val.mape, lr, seconds});
    if (on_epoch) on_epoch(result.history.back());

    auto [stop, next] = early_stop_update(stop_state, val.mae,
                                          cfg.patience);
    if (next.counter == 0) {
      result.best_params.clear();
      for (const Parameter& p : params)
        result.best_params.push_back({p.name, p.tensor.clone()});
      result.best_epoch = epoch;
      result.best_val_mae = val.mae;
      result.val_metrics = val;
    }
    stop_state = next;
    if (stop) break;
  }

  load_parameters(model, result.best_params);
  return result;
}

}  // namespace mcst
