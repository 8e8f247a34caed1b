#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mcst/rng.hpp"
#include "mcst/training.hpp"

using namespace mcst;

namespace {

Parameter named(const std::string& name, Tensor t) {
  return Parameter{name, std::move(t)};
}

ModelConfig small_model_config(size_t n_nodes, size_t t_in, size_t t_out) {
  ModelConfig cfg;
  cfg.n_nodes = n_nodes;
  cfg.t_in = t_in;
  cfg.t_out = t_out;
  cfg.blocks_per_pathway = 1;
  cfg.d_ff = 32;
  cfg.dropout = 0.1;
  cfg.ssm.d_model = 16;
  cfg.ssm.expand = 2;
  cfg.ssm.state_dim = 4;
  cfg.ssm.dt_rank = 1;
  cfg.ssm.conv_kernel = 3;
  cfg.emb.n_nodes = n_nodes;
  cfg.emb.t_in = t_in;
  cfg.emb.c_features = 3;
  cfg.emb.d_feat = 6;
  cfg.emb.d_tod = 6;
  cfg.emb.d_dow = 6;
  cfg.emb.d_spatial = 6;
  cfg.emb.d_adaptive = 8;
  cfg.emb.d_mamba = 16;
  return cfg;
}

}  // namespace

TEST(Adam, FirstStepMovesByTheLearningRate) {
  std::vector<Parameter> params;
  params.push_back(named("w", Tensor::full({3}, 0.0)));
  params[0].tensor.ensure_grad();
  for (size_t i = 0; i < 3; ++i) params[0].tensor.grad()[i] = 1.0;

  AdamState state = init_adam(params);
  TrainConfig cfg;
  adam_step(params, state, cfg, 0.001);
  // Bias-corrected first step: m̂=g, v̂=g², update = lr·g/(|g|+eps).
  for (size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(params[0].tensor[i], -0.001, 1e-6);
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersBitwiseUnchanged) {
  std::vector<Parameter> params;
  params.push_back(named("w", Tensor::from({2}, {0.5, -1.25})));
  params[0].tensor.ensure_grad();
  params[0].tensor.zero_grad();
  AdamState state = init_adam(params);
  TrainConfig cfg;
  adam_step(params, state, cfg, 0.001);
  EXPECT_EQ(params[0].tensor[0], 0.5);
  EXPECT_EQ(params[0].tensor[1], -1.25);
}

TEST(Adam, MissingGradientIsAContractError) {
  std::vector<Parameter> params;
  params.push_back(named("w", Tensor::full({2}, 1.0)));
  AdamState state = init_adam(params);
  TrainConfig cfg;
  EXPECT_THROW(adam_step(params, state, cfg, 0.001), ContractError);
}

TEST(Adam, DeterministicTrajectories) {
  auto run = [] {
    std::vector<Parameter> params;
    params.push_back(named("w", Tensor::from({2}, {1.0, -2.0})));
    params[0].tensor.ensure_grad();
    AdamState state = init_adam(params);
    TrainConfig cfg;
    Rng rng(5);
    std::vector<double> trace;
    for (int step = 0; step < 20; ++step) {
      for (size_t i = 0; i < 2; ++i)
        params[0].tensor.grad()[i] = rng.normal();
      adam_step(params, state, cfg, 0.01);
      trace.push_back(params[0].tensor[0]);
      trace.push_back(params[0].tensor[1]);
      params[0].tensor.zero_grad();
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(GradClip, ScalesOnlyWhenAboveTheLimit) {
  std::vector<Parameter> params;
  params.push_back(named("w", Tensor::full({2}, 0.0)));
  params[0].tensor.ensure_grad();
  params[0].tensor.grad()[0] = 3.0;
  params[0].tensor.grad()[1] = 4.0;

  double norm = clip_grad_norm(params, 10.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_DOUBLE_EQ(params[0].tensor.grad()[0], 3.0);

  norm = clip_grad_norm(params, 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(params[0].tensor.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(params[0].tensor.grad()[1], 0.8, 1e-12);

  params[0].tensor.grad()[0] = 7.0;
  norm = clip_grad_norm(params, 0.0);  // disabled
  EXPECT_DOUBLE_EQ(params[0].tensor.grad()[0], 7.0);
}

TEST(CosineSchedule, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 30, 1e-3, 1e-5), 1e-3);
  EXPECT_DOUBLE_EQ(cosine_lr(30, 30, 1e-3, 1e-5), 1e-5);
  EXPECT_NEAR(cosine_lr(15, 30, 1e-3, 1e-5), (1e-3 + 1e-5) / 2, 1e-18);
  EXPECT_DOUBLE_EQ(cosine_lr(99, 30, 1e-3, 1e-5), 1e-5);  // clamped
}

TEST(EarlyStop, StrictImprovementNeverStops) {
  EarlyStopState s{1e30, 0};
  for (int epoch = 0; epoch < 100; ++epoch) {
    auto [stop, next] = early_stop_update(s, 100.0 - epoch, 15);
    EXPECT_FALSE(stop);
    EXPECT_EQ(next.counter, 0u);
    s = next;
  }
}

TEST(EarlyStop, PlateauStopsExactlyAtPatience) {
  EarlyStopState s{1.0, 0};
  for (int k = 1; k <= 15; ++k) {
    auto [stop, next] = early_stop_update(s, 1.0, 15);  // ties don't improve
    EXPECT_EQ(next.counter, size_t(k));
    EXPECT_EQ(stop, k == 15);
    s = next;
  }
}

TEST(EarlyStop, ImprovementResetsTheCounter) {
  EarlyStopState s{1.0, 0};
  for (int k = 0; k < 14; ++k) s = early_stop_update(s, 2.0, 15).second;
  EXPECT_EQ(s.counter, 14u);
  auto [stop, next] = early_stop_update(s, 0.5, 15);
  EXPECT_FALSE(stop);
  EXPECT_EQ(next.counter, 0u);
  EXPECT_DOUBLE_EQ(next.best_val, 0.5);
}

TEST(Metrics, HandOracle) {
  Tensor target = Tensor::from({2}, {2.0, 4.0});
  Tensor pred = Tensor::from({2}, {1.0, 5.0});
  MetricsReport r = metrics_from_errors(pred, target);
  EXPECT_DOUBLE_EQ(r.mae, 1.0);
  EXPECT_DOUBLE_EQ(r.rmse, 1.0);
  EXPECT_NEAR(r.mape, 37.5, 1e-12);
  EXPECT_DOUBLE_EQ(r.mape_excluded_fraction, 0.0);
}

TEST(Metrics, MapeFloorExcludesNearZeroTargets) {
  Tensor target = Tensor::from({4}, {0.0, 2.0, 1e-5, 4.0});
  Tensor pred = Tensor::from({4}, {1.0, 1.0, 2.0, 2.0});
  MetricsReport r = metrics_from_errors(pred, target);
  EXPECT_DOUBLE_EQ(r.mape_excluded_fraction, 0.5);
  EXPECT_NEAR(r.mape, 100.0 * (0.5 + 0.5) / 2.0, 1e-12);
}

TEST(Metrics, MaeNeverExceedsRmse) {
  Rng rng(90);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor target({2, 3, 2, 3});
    Tensor pred({2, 3, 2, 3});
    for (size_t i = 0; i < target.size(); ++i) {
      target[i] = rng.uniform(0.5, 10.0);
      pred[i] = target[i] + rng.normal();
    }
    MetricsReport r = metrics_from_errors(pred, target);
    EXPECT_LE(r.mae, r.rmse + 1e-12);
    EXPECT_GE(r.mae, 0.0);
    for (size_t c = 0; c < r.mae_per_channel.size(); ++c)
      EXPECT_LE(r.mae_per_channel[c], r.rmse_per_channel[c] + 1e-12);
  }
}

TEST(Metrics, PooledMaeIsTheWeightedChannelMean) {
  Rng rng(91);
  Tensor target({2, 4, 3, 3});
  Tensor pred({2, 4, 3, 3});
  for (size_t i = 0; i < target.size(); ++i) {
    target[i] = rng.uniform(1.0, 5.0);
    pred[i] = target[i] + rng.normal();
  }
  MetricsReport r = metrics_from_errors(pred, target);
  // Equal element counts per channel, so the pooled value is the plain mean.
  double mean = 0;
  for (double v : r.mae_per_channel) mean += v;
  mean /= double(r.mae_per_channel.size());
  EXPECT_NEAR(r.mae, mean, 1e-12);
}

TEST(Metrics, PerHorizonRampOracle) {
  // One window, one node; every channel walks 1..24 in lockstep. The
  // inertia forecast holds 12, so horizon h misses by exactly h+1.
  const size_t t_in = 12, t_out = 12;
  Tensor x({1, t_in, 1, 3}), future({1, t_out, 1, 3});
  for (size_t k = 0; k < t_in; ++k)
    for (size_t c = 0; c < 3; ++c) x[k * 3 + c] = double(k + 1);
  for (size_t k = 0; k < t_out; ++k)
    for (size_t c = 0; c < 3; ++c) future[k * 3 + c] = double(t_in + k + 1);

  Tensor pred = historical_baseline(x, t_out, "inertia");
  MetricsReport r = metrics_from_errors(pred, future);
  ASSERT_EQ(r.mae_per_horizon.size(), t_out);
  for (size_t h = 0; h < t_out; ++h)
    EXPECT_DOUBLE_EQ(r.mae_per_horizon[h], double(h + 1));
  EXPECT_DOUBLE_EQ(r.mae, 6.5);
}

TEST(Baselines, InertiaRepeatsTheLastStep) {
  Rng rng(92);
  Tensor x({2, 5, 3, 3});
  for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Tensor y = historical_baseline(x, 4, "inertia");
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3, 3}));
  for (size_t s = 0; s < 2; ++s)
    for (size_t h = 0; h < 4; ++h)
      for (size_t v = 0; v < 3; ++v)
        for (size_t c = 0; c < 3; ++c)
          EXPECT_EQ(y.at({s, h, v, c}), x.at({s, 4, v, c}));
}

TEST(Baselines, MeanRepeatsTheWindowAverage) {
  Tensor x({1, 4, 1, 3});
  for (size_t k = 0; k < 4; ++k)
    for (size_t c = 0; c < 3; ++c) x[k * 3 + c] = double(k);  // mean 1.5
  Tensor y = historical_baseline(x, 3, "mean");
  for (size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 1.5);
}

TEST(Baselines, ConstantSeriesIsForecastPerfectly) {
  Tensor x = Tensor::full({1, 12, 2, 3}, 3.25);
  Tensor future = Tensor::full({1, 12, 2, 3}, 3.25);
  for (const char* mode : {"inertia", "mean"}) {
    Tensor pred = historical_baseline(x, 12, mode);
    MetricsReport r = metrics_from_errors(pred, future);
    EXPECT_DOUBLE_EQ(r.mae, 0.0);
    EXPECT_DOUBLE_EQ(r.rmse, 0.0);
  }
}

TEST(Baselines, UnknownModeIsAConfigError) {
  Tensor x = Tensor::full({1, 2, 1, 3}, 1.0);
  EXPECT_THROW(historical_baseline(x, 2, "oracle"), ConfigError);
}

TEST(Evaluate, PerfectPredictorScoresZero) {
  TrafficTensorFile f = synthetic_generate(2, 1, 7);
  SplitRanges s = split_chronological(f.steps());
  Normalizer norm = Normalizer::fit(f.raw, s.train);
  auto batches = make_window_batches(f, norm, s.val, 12, 12, 64, 0);
  ASSERT_FALSE(batches.empty());
  MetricsReport r = evaluate(
      [](const WindowBatch& b) { return b.y; }, batches, norm);
  EXPECT_DOUBLE_EQ(r.mae, 0.0);
  EXPECT_DOUBLE_EQ(r.rmse, 0.0);
  EXPECT_DOUBLE_EQ(r.mape, 0.0);
}

TEST(Evaluate, EmptySplitIsAConfigError) {
  Normalizer norm;
  std::vector<WindowBatch> none;
  EXPECT_THROW(
      evaluate([](const WindowBatch& b) { return b.y; }, none, norm),
      ConfigError);
}

TEST(Evaluate, InvariantToWindowOrder) {
  TrafficTensorFile f = synthetic_generate(2, 1, 8);
  SplitRanges s = split_chronological(f.steps());
  Normalizer norm = Normalizer::fit(f.raw, s.train);
  auto ordered = make_window_batches(f, norm, s.val, 12, 12, 16, 0);
  auto shuffled = make_window_batches(f, norm, s.val, 12, 12, 16, 55);

  auto noisy = [](const WindowBatch& b) {
    Tensor p = b.y.clone();
    for (size_t i = 0; i < p.size(); ++i) p[i] += 0.25;
    return p;
  };
  MetricsReport a = evaluate(noisy, ordered, norm);
  MetricsReport b = evaluate(noisy, shuffled, norm);
  EXPECT_NEAR(a.mae, b.mae, 1e-9);
  EXPECT_NEAR(a.rmse, b.rmse, 1e-9);
  EXPECT_NEAR(a.mape, b.mape, 1e-9);
}

TEST(TrainLoop, LossFallsOnATinySyntheticSet) {
  TrafficTensorFile data = synthetic_generate(3, 2, 11);
  ModelConfig mc = small_model_config(3, 12, 12);
  MCSTModel model(mc, 17);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.batch_size = 64;
  cfg.seed = 17;

  TrainResult result = train(model, data, cfg);
  ASSERT_EQ(result.history.size(), 5u);
  int improved = 0;
  for (size_t e = 1; e < result.history.size(); ++e)
    if (result.history[e].train_loss < result.history[e - 1].train_loss)
      ++improved;
  EXPECT_GE(improved, 3);

  double best = 1e300;
  for (const EpochRecord& r : result.history)
    best = std::min(best, r.val_mae);
  EXPECT_DOUBLE_EQ(result.best_val_mae, best);
}

TEST(TrainLoop, SeededRunsProduceIdenticalHistories) {
  TrafficTensorFile data = synthetic_generate(2, 1, 3);
  auto run = [&] {
    ModelConfig mc = small_model_config(2, 12, 12);
    MCSTModel model(mc, 5);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = 5;
    return train(model, data, cfg);
  };
  TrainResult a = run();
  TrainResult b = run();
  ASSERT_EQ(a.history.size(), b.history.size());
  for (size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_mae, b.history[e].val_mae);
    EXPECT_EQ(a.history[e].lr, b.history[e].lr);
  }
  ASSERT_EQ(a.best_params.size(), b.best_params.size());
  for (size_t i = 0; i < a.best_params.size(); ++i) {
    ASSERT_EQ(a.best_params[i].name, b.best_params[i].name);
    for (size_t j = 0; j < a.best_params[i].tensor.size(); ++j)
      EXPECT_EQ(a.best_params[i].tensor[j], b.best_params[i].tensor[j]);
  }
}

TEST(TrainLoop, DivergenceAbortsWithADiagnostic) {
  TrafficTensorFile data = synthetic_generate(2, 1, 19);
  ModelConfig mc = small_model_config(2, 12, 12);
  MCSTModel model(mc, 23);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.lr_init = 1e12;  // guarantees an overflow within a few steps
  cfg.lr_min = 1e10;
  cfg.clip_norm = 0.0;
  cfg.seed = 23;
  EXPECT_THROW(train(model, data, cfg), NumericError);
}

TEST(TrainConfigValidation, RejectsBadRanges) {
  TrainConfig cfg;
  cfg.patience = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr_min = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr_min = 2e-3;  // above lr_init
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  EXPECT_NO_THROW(cfg.validate());
}
