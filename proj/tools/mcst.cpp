// Command-line front end: data generation, training, evaluation,
// prediction, scan benchmarking, and gradient checking, all reproducible
// from a single seed.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcst/checkpoint.hpp"
#include "mcst/config.hpp"
#include "mcst/data.hpp"
#include "mcst/error.hpp"
#include "mcst/model.hpp"
#include "mcst/ops.hpp"
#include "mcst/rng.hpp"
#include "mcst/scan.hpp"
#include "mcst/tape.hpp"
#include "mcst/training.hpp"

using nlohmann::ordered_json;
using namespace mcst;

namespace {

// Shortest decimal form that parses back to the same double, so CSV and
// JSON artifacts round-trip bit for bit.
std::string fmt_g(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

ordered_json metrics_json(const MetricsReport& r) {
  ordered_json m;
  m["mae"] = r.mae;
  m["rmse"] = r.rmse;
  m["mape"] = r.mape;
  m["mae_per_channel"] = r.mae_per_channel;
  m["rmse_per_channel"] = r.rmse_per_channel;
  m["mape_per_channel"] = r.mape_per_channel;
  m["mae_per_horizon"] = r.mae_per_horizon;
  m["rmse_per_horizon"] = r.rmse_per_horizon;
  m["mape_per_horizon"] = r.mape_per_horizon;
  m["mape_excluded_fraction"] = r.mape_excluded_fraction;
  return m;
}

TrafficTensorFile open_dataset(const RunConfig& rc) {
  if (!rc.data_path.empty()) return load_dataset(rc.data_path);
  return synthetic_generate(rc.nodes, rc.days, rc.seed);
}

struct LoadedModel {
  ModelConfig cfg;
  MCSTModel model;
};

LoadedModel restore_model(const std::string& ckpt_path) {
  std::vector<Parameter> params = load_checkpoint(ckpt_path);
  ModelConfig mc = model_config_from_params(params);
  LoadedModel lm{mc, MCSTModel(mc, 0)};
  load_parameters(lm.model, params);
  return lm;
}

void check_compatible(const ModelConfig& mc, const TrafficTensorFile& file) {
  if (mc.n_nodes != file.nodes())
    throw ConfigError("checkpoint expects " + std::to_string(mc.n_nodes) +
                      " nodes but the dataset has " +
                      std::to_string(file.nodes()));
  if (mc.emb.tod_slots != file.slots_per_day())
    throw ConfigError("checkpoint expects " +
                      std::to_string(mc.emb.tod_slots) +
                      " slots per day but the dataset has " +
                      std::to_string(file.slots_per_day()));
}

Predictor model_predictor(const MCSTModel& model) {
  return [&model](const WindowBatch& b) {
    return model.forward(b.x, b.tod, b.dow, false, {0, 0, 0});
  };
}

Predictor baseline_predictor(const std::string& mode, size_t t_out) {
  return [mode, t_out](const WindowBatch& b) {
    return historical_baseline(b.x, t_out, mode);
  };
}

Range pick_split(const SplitRanges& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw ConfigError("unknown split '" + name +
                    "'; expected train, val, or test");
}

int cmd_gen_data(size_t nodes, size_t days, uint64_t seed,
                 const std::string& out) {
  TrafficTensorFile file = synthetic_generate(nodes, days, seed);
  save_dataset(out, file);
  double lo[3], hi[3];
  for (int c = 0; c < 3; ++c) {
    lo[c] = file.raw[c];
    hi[c] = file.raw[c];
  }
  for (size_t i = 0; i < file.raw.size(); ++i) {
    const int c = int(i % 3);
    lo[c] = std::min(lo[c], file.raw[i]);
    hi[c] = std::max(hi[c], file.raw[i]);
  }
  std::cout << "wrote " << out << ": " << file.steps() << " steps, "
            << file.nodes() << " nodes\n";
  const char* names[3] = {"flow", "speed", "occupancy"};
  for (int c = 0; c < 3; ++c)
    std::cout << "  " << names[c] << " in [" << fmt_g(lo[c]) << ", "
              << fmt_g(hi[c]) << "]\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  RunConfig rc = RunConfig::from_file(config_path);
  TrafficTensorFile file = open_dataset(rc);
  ModelConfig mc = rc.model_config(file.nodes(), file.slots_per_day());
  MCSTModel model(mc, rc.seed);

  if (rc.spatial_order == "reverse") {
    std::vector<size_t> order(mc.n_nodes);
    for (size_t i = 0; i < mc.n_nodes; ++i) order[i] = mc.n_nodes - 1 - i;
    model.set_spatial_order(order);
  } else if (rc.spatial_order == "shuffled") {
    std::vector<size_t> order(mc.n_nodes);
    for (size_t i = 0; i < mc.n_nodes; ++i) order[i] = i;
    Rng rng = Rng::derive(rc.seed, streams::kSpatialOrder);
    for (size_t i = mc.n_nodes; i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    model.set_spatial_order(order);
  }

  std::cout << "dataset: " << file.steps() << " steps, " << file.nodes()
            << " nodes; model parameters: " << model.parameter_count()
            << "\n";

  TrainResult result =
      train(model, file, rc.train, [](const EpochRecord& r) {
        std::cout << "epoch " << r.epoch << ": train_loss "
                  << fmt_g(r.train_loss) << " val_mae " << fmt_g(r.val_mae)
                  << " lr " << fmt_g(r.lr) << " (" << fmt_g(r.seconds)
                  << "s)\n";
      });

  std::filesystem::create_directories(rc.out_dir);
  write_text(rc.out_dir + "/config.resolved", rc.resolved());
  save_checkpoint(rc.out_dir + "/checkpoint.best", result.best_params);

  std::string history;
  for (const EpochRecord& r : result.history) {
    ordered_json line;
    line["epoch"] = r.epoch;
    line["train_loss"] = r.train_loss;
    line["val_mae"] = r.val_mae;
    line["val_rmse"] = r.val_rmse;
    line["val_mape"] = r.val_mape;
    line["lr"] = r.lr;
    line["seconds"] = r.seconds;
    history += line.dump() + "\n";
  }
  write_text(rc.out_dir + "/history.jsonl", history);

  // The report carries no timing so a same-seed rerun reproduces it byte
  // for byte.
  const SplitRanges splits = split_chronological(file.steps());
  const Normalizer norm = Normalizer::fit(file.raw, splits.train);
  const auto test_batches = make_window_batches(
      file, norm, splits.test, mc.t_in, mc.t_out, rc.train.batch_size, 0);
  ordered_json report;
  report["parameters"] = model.parameter_count();
  report["epochs_run"] = result.history.size();
  report["best_epoch"] = result.best_epoch;
  report["val"] = metrics_json(result.val_metrics);
  report["test"] =
      metrics_json(evaluate(model_predictor(model), test_batches, norm));
  report["baselines"]["inertia"] = metrics_json(evaluate(
      baseline_predictor("inertia", mc.t_out), test_batches, norm));
  report["baselines"]["mean"] = metrics_json(
      evaluate(baseline_predictor("mean", mc.t_out), test_batches, norm));
  write_text(rc.out_dir + "/report.json", report.dump(2) + "\n");

  std::cout << "best epoch " << result.best_epoch << ", val mae "
            << fmt_g(result.best_val_mae) << "; artifacts in " << rc.out_dir
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& split, const std::string& out) {
  LoadedModel lm = restore_model(ckpt);
  TrafficTensorFile file = load_dataset(data);
  check_compatible(lm.cfg, file);

  const SplitRanges splits = split_chronological(file.steps());
  const Normalizer norm = Normalizer::fit(file.raw, splits.train);
  const Range range = pick_split(splits, split);
  const auto batches = make_window_batches(file, norm, range, lm.cfg.t_in,
                                           lm.cfg.t_out, 64, 0);

  ordered_json report;
  report["split"] = split;
  report["range"] = {range.begin, range.end};
  report["windows"] = window_count(range, lm.cfg.t_in, lm.cfg.t_out);
  report["metrics"] =
      metrics_json(evaluate(model_predictor(lm.model), batches, norm));
  report["baselines"]["inertia"] = metrics_json(
      evaluate(baseline_predictor("inertia", lm.cfg.t_out), batches, norm));
  report["baselines"]["mean"] = metrics_json(
      evaluate(baseline_predictor("mean", lm.cfg.t_out), batches, norm));

  const std::string text = report.dump(2) + "\n";
  if (!out.empty())
    write_text(out, text);
  else
    std::cout << text;
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& data, size_t at,
                const std::string& out) {
  LoadedModel lm = restore_model(ckpt);
  TrafficTensorFile file = load_dataset(data);
  check_compatible(lm.cfg, file);
  const size_t t_in = lm.cfg.t_in, t_out = lm.cfg.t_out;
  if (at < t_in)
    throw ConfigError("forecast origin " + std::to_string(at) + " needs " +
                      std::to_string(t_in) + " steps of history");
  if (at > file.steps())
    throw ConfigError("forecast origin " + std::to_string(at) +
                      " lies past the series end " +
                      std::to_string(file.steps()));

  const SplitRanges splits = split_chronological(file.steps());
  const Normalizer norm = Normalizer::fit(file.raw, splits.train);

  const size_t n = file.nodes(), c = file.channels();
  const size_t start = at - t_in;
  Tensor rx({1, t_in, n, c});
  for (size_t i = 0; i < t_in * n * c; ++i)
    rx[i] = file.raw[start * n * c + i];
  IntTensor tod({1, t_in}, std::vector<int64_t>(t_in));
  IntTensor dow({1, t_in}, std::vector<int64_t>(t_in));
  const size_t slots = file.slots_per_day();
  for (size_t j = 0; j < t_in; ++j) {
    const size_t abs = file.start_slot + start + j;
    tod.data[j] = static_cast<int64_t>(abs % slots);
    dow.data[j] = static_cast<int64_t>((file.start_dow + abs / slots) % 7);
  }

  Tensor pred = lm.model.forward(norm.apply(rx), tod, dow, false, {0, 0, 0});
  Tensor y = norm.invert(pred);  // [1, t_out, n, c]

  const double occ_mu = norm.mean()[2], occ_sd = norm.sigma()[2];
  std::string csv = "horizon,node,flow,speed,occupancy\n";
  for (size_t h = 0; h < t_out; ++h)
    for (size_t v = 0; v < n; ++v) {
      const double* cell = &y[(h * n + v) * c];
      csv += std::to_string(h + 1) + "," + std::to_string(v) + "," +
             fmt_g(cell[0]) + "," + fmt_g(cell[1]) + "," + fmt_g(cell[2]) +
             "\n";
      if (std::abs(cell[2] - occ_mu) > 3.0 * occ_sd)
        std::cerr << "warning: occupancy at horizon " << h + 1 << ", node "
                  << v << " outside the 3-sigma band: " << fmt_g(cell[2])
                  << "\n";
    }
  if (!out.empty())
    write_text(out, csv);
  else
    std::cout << csv;
  return 0;
}

int cmd_bench_scan(size_t len, size_t d_inner, size_t state,
                   const std::vector<size_t>& chunks, uint64_t seed) {
  if (len == 0 || d_inner == 0 || state == 0)
    throw ConfigError("bench sizes must be positive");
  Rng rng(seed);
  Tensor A({d_inner, state});
  for (size_t i = 0; i < A.size(); ++i) A[i] = rng.uniform(-2.0, -0.1);
  Tensor delta({len, d_inner});
  for (size_t i = 0; i < delta.size(); ++i)
    delta[i] = rng.uniform(0.001, 0.1);
  Tensor B({len, state}), C({len, state});
  for (size_t i = 0; i < B.size(); ++i) B[i] = rng.normal();
  for (size_t i = 0; i < C.size(); ++i) C[i] = rng.normal();
  Tensor u({len, d_inner});
  for (size_t i = 0; i < u.size(); ++i) u[i] = rng.normal();
  Tensor D({d_inner});
  for (size_t i = 0; i < D.size(); ++i) D[i] = 1.0;

  auto [A_bar, B_bar] = discretize(A, B, delta);

  auto timed = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor y = fn();
    const auto dt = std::chrono::steady_clock::now() - t0;
    return std::pair<Tensor, uint64_t>(
        std::move(y),
        std::chrono::duration_cast<std::chrono::nanoseconds>(dt).count());
  };

  std::string csv = "len,d_inner,state,chunk,mode,wall_ns,flops,"
                    "max_abs_diff\n";
  ScanStats seq_stats;
  auto [y_seq, seq_ns] = timed([&] {
    return selective_scan_sequential(A_bar, B_bar, u, C, D, &seq_stats);
  });
  csv += std::to_string(len) + "," + std::to_string(d_inner) + "," +
         std::to_string(state) + ",0,seq," + std::to_string(seq_ns) + "," +
         std::to_string(seq_stats.flops) + ",0\n";

  for (size_t chunk : chunks) {
    ScanStats par_stats;
    auto [y_par, par_ns] = timed([&] {
      return selective_scan_parallel(A_bar, B_bar, u, C, D, chunk,
                                     &par_stats);
    });
    double diff = 0;
    for (size_t i = 0; i < y_par.size(); ++i)
      diff = std::max(diff, std::abs(y_par[i] - y_seq[i]));
    csv += std::to_string(len) + "," + std::to_string(d_inner) + "," +
           std::to_string(state) + "," + std::to_string(chunk) + ",par," +
           std::to_string(par_ns) + "," + std::to_string(par_stats.flops) +
           "," + fmt_g(diff) + "\n";
  }
  std::cout << csv;
  return 0;
}

ModelConfig tiny_gradcheck_config() {
  ModelConfig mc;
  mc.n_nodes = 4;
  mc.t_in = 3;
  mc.t_out = 2;
  mc.c_features = 3;
  mc.blocks_per_pathway = 1;
  mc.d_ff = 16;
  mc.dropout = 0.0;
  mc.ssm.d_model = 8;
  mc.ssm.expand = 2;
  mc.ssm.state_dim = 4;
  mc.ssm.dt_rank = 1;
  mc.ssm.conv_kernel = 3;
  mc.emb.n_nodes = 4;
  mc.emb.t_in = 3;
  mc.emb.c_features = 3;
  mc.emb.d_feat = 4;
  mc.emb.d_tod = 4;
  mc.emb.d_dow = 4;
  mc.emb.d_spatial = 4;
  mc.emb.d_adaptive = 8;
  mc.emb.tod_slots = 288;
  mc.emb.dow_slots = 7;
  mc.emb.d_mamba = 8;
  mc.validate();
  return mc;
}

int cmd_gradcheck(const std::string& config_path) {
  ModelConfig mc;
  uint64_t seed = 1;
  if (config_path.empty()) {
    mc = tiny_gradcheck_config();
  } else {
    RunConfig rc = RunConfig::from_file(config_path);
    mc = rc.model_config(rc.nodes, 288);
    seed = rc.seed;
  }
  MCSTModel model(mc, seed);
  const size_t cap = 50000;
  if (model.parameter_count() > cap) {
    std::cerr << "gradcheck needs a tiny model: "
              << model.parameter_count() << " parameters exceeds the cap of "
              << cap << "\n";
    return 2;
  }

  const size_t m = 2;
  Rng rng(1234);
  Tensor X({m, mc.t_in, mc.n_nodes, mc.c_features});
  for (size_t i = 0; i < X.size(); ++i) X[i] = rng.normal();
  Tensor Y({m, mc.t_out, mc.n_nodes, mc.c_features});
  for (size_t i = 0; i < Y.size(); ++i) Y[i] = rng.normal();
  std::vector<int64_t> tod_v(m * mc.t_in), dow_v(m * mc.t_in);
  const size_t starts[2] = {0, 137};
  for (size_t w = 0; w < m; ++w)
    for (size_t j = 0; j < mc.t_in; ++j) {
      const size_t abs = starts[w] + j;
      tod_v[w * mc.t_in + j] = static_cast<int64_t>(abs % 288);
      dow_v[w * mc.t_in + j] = static_cast<int64_t>((abs / 288) % 7);
    }
  IntTensor tod({m, mc.t_in}, std::move(tod_v));
  IntTensor dow({m, mc.t_in}, std::move(dow_v));

  auto loss_value = [&]() {
    Tensor p = model.forward(X, tod, dow, false, {0, 0, 0});
    return mse_loss(p, Y)[0];
  };

  std::vector<Parameter> params = model.parameters();
  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape tape;
    Tensor p = model.forward(X, tod, dow, false, {0, 0, 0});
    Tensor loss = mse_loss(p, Y);
    tape.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) {
      const Tensor& t = params[i].tensor;
      analytic[i].assign(t.size(), 0.0);
      if (t.has_grad())
        for (size_t j = 0; j < t.size(); ++j) analytic[i][j] = t.grad()[j];
    }
    for (Parameter& p2 : params) p2.tensor.zero_grad();
  }

  // Central differences balance truncation (eps^2) against cancellation
  // (machine eps / eps) near eps = cbrt(3 * 1e-16); 5e-6 sits at that
  // optimum for the exponential transition path.
  const double eps = 5e-6, tol = 1e-4;
  std::printf("%-28s %8s %14s  %s\n", "parameter", "count", "max_rel_err",
              "status");
  bool all_ok = true;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    double worst = 0;
    for (size_t j = 0; j < t.size(); ++j) {
      const double old = t[j];
      t[j] = old + eps;
      const double lp = loss_value();
      t[j] = old - eps;
      const double lm = loss_value();
      t[j] = old;
      const double numeric = (lp - lm) / (2.0 * eps);
      worst = std::max(worst, rel_err(analytic[i][j], numeric));
    }
    const bool ok = worst < tol;
    all_ok = all_ok && ok;
    std::printf("%-28s %8zu %14.3e  %s\n", params[i].name.c_str(), t.size(),
                worst, ok ? "pass" : "FAIL");
  }
  std::printf("gradcheck: %s\n", all_ok ? "all parameters pass" : "FAILED");
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective state-space traffic forecasting toolkit"};
  app.require_subcommand(1);

  size_t nodes = 6, days = 3;
  uint64_t seed = 1;
  std::string out_path, config_path, ckpt_path, data_path;
  std::string split = "test", out_file;
  size_t at = 0;
  size_t len = 4096, dinner = 32, state = 16;
  std::vector<size_t> chunks = {64, 256, 1024};

  CLI::App* gen = app.add_subcommand("gen-data",
                                     "write a synthetic traffic series");
  gen->add_option("--nodes", nodes, "sensor count");
  gen->add_option("--days", days, "days of 5-minute steps");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_path, "output file")->required();

  CLI::App* tr = app.add_subcommand("train", "train a model from a config");
  tr->add_option("--config", config_path, "run config file")->required();

  CLI::App* ev = app.add_subcommand("eval",
                                    "evaluate a checkpoint on one split");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->add_option("--split", split, "train, val, or test");
  ev->add_option("--out", out_file, "write the report here instead of "
                                    "stdout");

  CLI::App* pr = app.add_subcommand("predict",
                                    "forecast from one history window");
  pr->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  pr->add_option("--data", data_path, "dataset file")->required();
  pr->add_option("--at", at, "forecast origin step")->required();
  pr->add_option("--out", out_file, "write the CSV here instead of stdout");

  CLI::App* be = app.add_subcommand("bench-scan",
                                    "time sequential vs chunked scans");
  be->add_option("--len", len, "sequence length");
  be->add_option("--dinner", dinner, "inner width");
  be->add_option("--state", state, "state dimension");
  be->add_option("--chunks", chunks, "chunk sizes")->delimiter(',');
  be->add_option("--seed", seed, "input seed");

  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "compare gradients against finite "
                                    "differences");
  gc->add_option("--config", config_path,
                 "run config (defaults to a built-in tiny model)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(nodes, days, seed, out_path);
    if (tr->parsed()) return cmd_train(config_path);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path, split, out_file);
    if (pr->parsed()) return cmd_predict(ckpt_path, data_path, at, out_file);
    if (be->parsed()) return cmd_bench_scan(len, dinner, state, chunks,
                                            seed);
    if (gc->parsed()) return cmd_gradcheck(config_path);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
