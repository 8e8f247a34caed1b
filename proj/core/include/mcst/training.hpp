#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mcst/data.hpp"
#include "mcst/model.hpp"
#include "mcst/tensor.hpp"

namespace mcst {

struct TrainConfig {
  double lr_init = 1e-3;
  double lr_min = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  size_t max_epochs = 30;
  size_t patience = 15;
  size_t batch_size = 64;
  double clip_norm = 5.0;  // global-norm gradient clip; 0 disables
  uint64_t seed = 1;
  void validate() const;
};

/// First and second moment accumulators, parallel to the parameter list
/// they were initialized from.
struct AdamState {
  std::vector<Tensor> m, v;
  size_t t = 0;
};

AdamState init_adam(const std::vector<Parameter>& params);

/// One Adam update over all parameters at the given learning rate.
/// Every parameter must carry a gradient; a missing one is a contract
/// violation.
void adam_step(std::vector<Parameter>& params, AdamState& state,
               const TrainConfig& cfg, double lr);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 leaves gradients untouched.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

/// Cosine decay from lr_init to lr_min over max_epochs; epochs past the
/// schedule hold lr_min.
double cosine_lr(size_t epoch, size_t max_epochs, double lr_init,
                 double lr_min);

struct EarlyStopState {
  double best_val;
  size_t counter;
};

/// Strict-improvement early stopping: current < best resets the counter
/// and becomes the new best; otherwise the counter grows, and the run
/// stops once it reaches `patience`.
std::pair<bool, EarlyStopState> early_stop_update(const EarlyStopState& s,
                                                  double current_val,
                                                  size_t patience);

/// Errors on the original measurement scale. MAPE is in percent and
/// skips targets with |y| < floor; the skipped share is reported.
struct MetricsReport {
  double mae = 0, rmse = 0, mape = 0;
  std::vector<double> mae_per_channel, rmse_per_channel, mape_per_channel;
  std::vector<double> mae_per_horizon, rmse_per_horizon, mape_per_horizon;
  double mape_excluded_fraction = 0;
};

/// Pools |pred - target| statistics over every element of every batch.
/// Inputs are normalized [m, t_out, n, c] tensors; both are denormalized
/// before the errors are taken.
using Predictor = std::function<Tensor(const WindowBatch&)>;
MetricsReport evaluate(const Predictor& predict,
                       const std::vector<WindowBatch>& batches,
                       const Normalizer& norm, double mape_floor = 1e-4);

/// Element-wise metrics for one (pred, target) pair already on the
/// measurement scale. Used by evaluate and handy for oracles.
MetricsReport metrics_from_errors(const Tensor& pred, const Tensor& target,
                                  double mape_floor = 1e-4);

/// Forecast from history alone: "inertia" repeats the last observed step
/// t_out times; "mean" repeats the history average. x is normalized
/// [m, t_in, n, c]; the result is normalized [m, t_out, n, c].
Tensor historical_baseline(const Tensor& x, size_t t_out,
                           const std::string& mode);

struct EpochRecord {
  size_t epoch;
  double train_loss;
  double val_mae, val_rmse, val_mape;
  double lr;
  double seconds;
};

struct TrainResult {
  std::vector<Parameter> best_params;  // deep copies of the best epoch
  size_t best_epoch = 0;
  double best_val_mae = 0;
  std::vector<EpochRecord> history;
  MetricsReport val_metrics;  // of the best epoch
};

/// Full loop: chronological split, per-epoch reshuffled minibatches,
/// Adam with cosine decay, early stopping on validation MAE. The model is
/// left holding the best parameters. Throws NumericError naming the step
/// if the loss leaves the finite range. `on_epoch`, if set, fires after
/// every epoch record.
TrainResult train(MCSTModel& model, const TrafficTensorFile& data,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace mcst
