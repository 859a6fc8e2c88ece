#pragma once

// Command implementations behind the lte_lab executable. Each cmd_* function
// writes only inside its output directory and returns a process exit code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "lte/costmodel.hpp"
#include "lte/error.hpp"
#include "lte/io.hpp"
#include "lte/run_analysis.hpp"
#include "lte/training.hpp"

namespace lte {

inline constexpr std::string_view kVersion = "lte-lab 0.1.0";

using Json = nlohmann::ordered_json;

namespace detail {

template <class T>
T json_get(const Json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(key, "has the wrong type");
  }
}

inline std::size_t json_count(const Json& j, const std::string& key) {
  const Json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(key, "must be a non-negative integer");
  if (v.get<std::int64_t>() < 0) throw ConfigError(key, "must be non-negative");
  return v.get<std::size_t>();
}

inline InitScheme parse_scheme(const std::string& field, const std::string& name, double gain) {
  try {
    return {parse_init_kind(name), gain};
  } catch (const ContractViolation&) {
    throw ConfigError(field, "unknown init scheme '" + name + "'");
  }
}

}  // namespace detail

/// Parse a flat JSON config. Unknown keys and wrongly typed values raise
/// ConfigError naming the key; cross-field checks run in RunConfig::validate.
inline RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
  static const std::vector<std::string> known = {
      "method",        "m",           "n",          "target_rank",      "task_seed",     "hidden",
      "activation",    "N",           "r",          "alpha",            "T",             "reset_B",
      "reset_A",       "reset_opt",   "exact_correction", "optimizer",  "lr",            "beta1",
      "beta2",         "eps",         "weight_decay", "lora_init",      "init_gain",     "base_init",
      "base_gain",     "batch_size",  "steps",      "snapshot_interval", "seed",         "quantize_bits",
      "analysis",      "parallel_workers", "keep_worker_deltas", "loss_threshold", "eval_batch"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(key, "unknown key");
  }
  using detail::json_count;
  using detail::json_get;
  RunConfig c;
  if (j.contains("method")) c.method = parse_method(json_get<std::string>(j, "method"));
  if (j.contains("m")) c.m = json_count(j, "m");
  if (j.contains("n")) c.n = json_count(j, "n");
  c.target_rank = j.contains("target_rank") ? json_count(j, "target_rank") : std::min(c.m, c.n);
  if (j.contains("task_seed") && !j.at("task_seed").is_null()) c.task_seed = json_count(j, "task_seed");
  if (j.contains("hidden")) {
    if (!j.at("hidden").is_array()) throw ConfigError("hidden", "must be an array of layer widths");
    for (std::size_t i = 0; i < j.at("hidden").size(); ++i) {
      const Json& v = j.at("hidden")[i];
      if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
        throw ConfigError("hidden[" + std::to_string(i) + "]", "must be a positive integer");
      c.hidden.push_back(v.get<std::size_t>());
    }
  }
  if (j.contains("activation")) {
    const auto a = json_get<std::string>(j, "activation");
    if (a == "identity") c.activation = Activation::Identity;
    else if (a == "relu") c.activation = Activation::ReLU;
    else throw ConfigError("activation", "unknown activation '" + a + "'");
  }
  if (j.contains("N")) c.heads = json_count(j, "N");
  else if (c.method == Method::Lora) c.heads = 1;
  if (j.contains("r")) c.rank = json_count(j, "r");
  c.alpha = j.contains("alpha") ? json_get<double>(j, "alpha") : static_cast<double>(c.rank);
  if (j.contains("T")) c.policy.period = j.at("T").is_null() ? 0 : json_count(j, "T");
  if (j.contains("reset_B")) c.policy.reset_B = json_get<bool>(j, "reset_B");
  if (j.contains("reset_A")) c.policy.reset_A = json_get<bool>(j, "reset_A");
  if (j.contains("reset_opt")) c.policy.reset_opt = json_get<bool>(j, "reset_opt");
  if (j.contains("exact_correction")) {
    c.policy.exact_correction = json_get<bool>(j, "exact_correction");
    // Exact mode keeps heads; default reset_B off unless explicitly requested.
    if (c.policy.exact_correction && !j.contains("reset_B")) c.policy.reset_B = false;
  }
  if (j.contains("optimizer")) {
    const auto name = json_get<std::string>(j, "optimizer");
    if (name == "sgd") c.optimizer = OptimizerKind::Sgd;
    else if (name == "adamw") c.optimizer = OptimizerKind::AdamW;
    else throw ConfigError("optimizer", "unknown optimizer '" + name + "'");
  }
  if (j.contains("lr")) c.optim.lr = json_get<double>(j, "lr");
  if (j.contains("beta1")) c.optim.beta1 = json_get<double>(j, "beta1");
  if (j.contains("beta2")) c.optim.beta2 = json_get<double>(j, "beta2");
  if (j.contains("eps")) c.optim.eps = json_get<double>(j, "eps");
  if (j.contains("weight_decay")) c.optim.weight_decay = json_get<double>(j, "weight_decay");
  const double gain = j.contains("init_gain") ? json_get<double>(j, "init_gain") : 1.0;
  if (!(gain > 0.0)) throw ConfigError("init_gain", "must be > 0");
  c.lora_init = detail::parse_scheme("lora_init", j.contains("lora_init") ? json_get<std::string>(j, "lora_init")
                                                                          : "semi_orthogonal", gain);
  const double base_gain = j.contains("base_gain") ? json_get<double>(j, "base_gain") : 1.0;
  if (!(base_gain > 0.0)) throw ConfigError("base_gain", "must be > 0");
  if (j.contains("base_init")) {
    const auto b = json_get<std::string>(j, "base_init");
    if (b == "zeros") c.base_init.reset();
    else c.base_init = detail::parse_scheme("base_init", b, base_gain);
  } else {
    c.base_init = InitScheme{InitKind::Xavier, base_gain};
  }
  if (j.contains("batch_size")) c.batch_size = json_count(j, "batch_size");
  if (j.contains("steps")) c.steps = json_count(j, "steps");
  if (j.contains("snapshot_interval")) c.snapshot_interval = json_count(j, "snapshot_interval");
  if (j.contains("seed")) c.seed = json_count(j, "seed");
  if (j.contains("quantize_bits")) c.quantize_bits = static_cast<int>(json_count(j, "quantize_bits"));
  if (j.contains("analysis")) c.analysis = json_get<bool>(j, "analysis");
  if (j.contains("parallel_workers")) c.parallel_workers = json_get<bool>(j, "parallel_workers");
  if (j.contains("keep_worker_deltas")) c.keep_worker_deltas = json_get<bool>(j, "keep_worker_deltas");
  if (j.contains("loss_threshold")) c.loss_threshold = json_get<double>(j, "loss_threshold");
  if (j.contains("eval_batch")) c.eval_batch = json_count(j, "eval_batch");
  c.validate();
  return c;
}

/// Full echo of a config, every key explicit. parse_run_config(to_json(c)) == c.
inline Json to_json(const RunConfig& c) {
  Json j;
  j["method"] = std::string(to_string(c.method));
  j["m"] = c.m;
  j["n"] = c.n;
  j["target_rank"] = c.target_rank;
  j["task_seed"] = c.task_seed ? Json(*c.task_seed) : Json(nullptr);
  j["hidden"] = c.hidden;
  j["activation"] = std::string(to_string(c.activation));
  j["N"] = c.heads;
  j["r"] = c.rank;
  j["alpha"] = c.alpha;
  j["T"] = c.policy.period;
  j["reset_B"] = c.policy.reset_B;
  j["reset_A"] = c.policy.reset_A;
  j["reset_opt"] = c.policy.reset_opt;
  j["exact_correction"] = c.policy.exact_correction;
  j["optimizer"] = std::string(to_string(c.optimizer));
  j["lr"] = c.optim.lr;
  j["beta1"] = c.optim.beta1;
  j["beta2"] = c.optim.beta2;
  j["eps"] = c.optim.eps;
  j["weight_decay"] = c.optim.weight_decay;
  j["lora_init"] = std::string(to_string(c.lora_init.kind));
  j["init_gain"] = c.lora_init.gain;
  j["base_init"] = c.base_init ? std::string(to_string(c.base_init->kind)) : std::string("zeros");
  j["base_gain"] = c.base_init ? c.base_init->gain : 1.0;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["snapshot_interval"] = c.snapshot_interval;
  j["seed"] = c.seed;
  j["quantize_bits"] = c.quantize_bits;
  j["analysis"] = c.analysis;
  j["parallel_workers"] = c.parallel_workers;
  j["keep_worker_deltas"] = c.keep_worker_deltas;
  j["loss_threshold"] = c.loss_threshold;
  j["eval_batch"] = c.eval_batch;
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_json(path)); }

namespace detail {

inline double mean_finite(const std::vector<double>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) sum += x, ++n;
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

/// sqrt(sum_l ||W_eff_l - W_eff_l(0)||^2)
inline double effective_weight_change(const Snapshot& s, const std::vector<Matrix>& initial) {
  double acc = 0.0;
  for (std::size_t l = 0; l < s.effective.size(); ++l) {
    const double d = frobenius_norm(s.effective[l] - initial[l]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// metrics.csv: one row per (step, worker) with the training loss, then one
/// row per snapshot with worker_id -1, the evaluation loss and the analysis
/// columns. update_eff_rank is averaged over layers.
inline void write_metrics_csv(std::ostream& os, const Trajectory& t) {
  os << "step,merge_id,worker_id,loss,eff_weight_dev,update_eff_rank,mean_cosine,mean_grassman\n";
  std::size_t snap = 0;
  std::size_t row = 0;
  for (std::size_t step = 1; step <= t.config.steps; ++step) {
    for (; row < t.steps.size() && t.steps[row].step == step; ++row) {
      const auto& r = t.steps[row];
      os << r.step << ',' << r.merge_id << ',' << r.worker << ',' << format_double(r.loss) << ",,,,\n";
    }
    if (snap < t.snapshots.size() && t.snapshots[snap].step == step) {
      const auto& s = t.snapshots[snap++];
      os << s.step << ',' << s.merge_id << ",-1," << format_double(s.eval_loss) << ','
         << format_double(detail::effective_weight_change(s, t.initial_effective)) << ','
         << format_double(detail::mean_finite(s.update_rank)) << ',' << format_double(s.mean_cosine) << ','
         << format_double(s.mean_grassman) << '\n';
    }
  }
}

/// analysis.csv: one row per (snapshot, layer, metric).
inline void write_analysis_csv(std::ostream& os, const Trajectory& t) {
  os << "step,merge_id,layer,metric,value\n";
  const auto trace = update_rank_trace(t);
  for (std::size_t i = 0; i < t.snapshots.size(); ++i) {
    const auto& s = t.snapshots[i];
    for (std::size_t l = 0; l < s.effective.size(); ++l) {
      auto row = [&](std::string_view metric, double v) {
        os << s.step << ',' << s.merge_id << ',' << l << ',' << metric << ',' << format_double(v) << '\n';
      };
      row("update_eff_rank", trace.cumulative[i].rank[l]);
      row("weight_eff_rank", trace.weights[i].rank[l]);
      row("weight_change_norm", frobenius_norm(s.effective[l] - t.initial_effective[l]));
      if (l < s.layer_cosine.size()) {
        row("mean_cosine", s.layer_cosine[l]);
        row("mean_grassman", s.layer_grassman[l]);
        row("grassman_paper_normalized", s.layer_grassman_paper[l]);
      }
    }
  }
  for (const auto& m : trace.merges) {
    for (std::size_t l = 0; l < m.rank.size(); ++l) {
      os << m.step << ',' << m.merge_id + 1 << ',' << l << ",merge_delta_eff_rank," << format_double(m.rank[l])
         << '\n';
    }
  }
}

inline Json manifest_json(const Trajectory& t) {
  Json j;
  j["version"] = kVersion;
  j["config"] = to_json(t.config);
  j["seeds"] = {{"seed", t.config.seed}, {"task_seed", t.config.task_seed.value_or(t.config.seed)}};
  j["per_worker_batch"] = t.per_worker_batch;
  j["dropped_samples_per_step"] = t.dropped_per_step;
  j["merges"] = t.merges.size();
  j["snapshots"] = t.snapshots.size();
  j["final_eval_loss"] = t.final_eval_loss();
  j["steps_to_threshold"] = t.steps_to_threshold ? Json(*t.steps_to_threshold) : Json(nullptr);
  j["task_spectrum"] = t.task.spectrum;
  return j;
}

/// Write every artifact of a finished run into `out`.
inline void write_run_artifacts(const std::filesystem::path& out, const Trajectory& t) {
  namespace fs = std::filesystem;
  fs::create_directories(out / "snapshots");
  write_json(out / "manifest.json", manifest_json(t));
  {
    std::ofstream os(out / "metrics.csv");
    write_metrics_csv(os, t);
  }
  {
    std::ofstream os(out / "analysis.csv");
    write_analysis_csv(os, t);
  }
  for (const auto& s : t.snapshots) {
    for (std::size_t l = 0; l < s.effective.size(); ++l) {
      std::ostringstream name;
      name << "step" << std::setw(7) << std::setfill('0') << s.step << "_layer" << l << ".csv";
      save_matrix(out / "snapshots" / name.str(), s.effective[l]);
    }
  }
  save_matrix(out / "target.csv", t.task.target);

  const auto ckpt = out / "checkpoint";
  for (std::size_t l = 0; l < t.network.num_layers(); ++l)
    save_layer(ckpt / ("layer" + std::to_string(l)), t.network.layer(l));
  if (t.config.optimizer == OptimizerKind::AdamW) {
    for (std::size_t k = 0; k < t.workers.size(); ++k) {
      const auto dir = ckpt / ("worker" + std::to_string(k));
      for (std::size_t l = 0; l < t.workers[k].opt_A.size(); ++l) {
        const auto tag = "layer" + std::to_string(l);
        save_adam_state(dir, tag + (t.config.method == Method::Full ? "_W" : "_A"), t.workers[k].opt_A[l]);
        if (t.config.method != Method::Full) save_adam_state(dir, tag + "_B", t.workers[k].opt_B[l]);
      }
    }
  }
  for (std::size_t k = 0; k < t.workers.size(); ++k) {
    for (std::size_t l = 0; l < t.workers[k].correction.size(); ++l) {
      std::filesystem::create_directories(ckpt / ("worker" + std::to_string(k)));
      save_matrix(ckpt / ("worker" + std::to_string(k)) / ("layer" + std::to_string(l) + "_V.csv"),
                  t.workers[k].correction[l]);
    }
  }
}

inline int report_error(const std::exception& e) {
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
    std::cerr << "config error: " << ce->what() << '\n';
    return 2;
  }
  std::cerr << "error: " << e.what() << '\n';
  return 1;
}

struct TrainOptions {
  std::filesystem::path config;
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
};

inline int cmd_train(const TrainOptions& opt, std::ostream& log = std::cout) {
  try {
    RunConfig cfg = load_run_config(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.steps) cfg.steps = *opt.steps;
    cfg.validate();
    const Trajectory t = run(cfg);
    write_run_artifacts(opt.out, t);
    log << to_string(cfg.method) << ": " << cfg.steps << " steps, " << t.merges.size() << " merges, final loss "
        << format_double(t.final_eval_loss()) << "\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

struct CompareOptions {
  std::filesystem::path a;
  std::filesystem::path b;
  std::filesystem::path out = "compare";
};

/// Default snapshot schedules of the two runs are aligned to the least common
/// multiple of their intervals so deviation is measured at shared steps.
inline void align_schedules(RunConfig& a, RunConfig& b) {
  if (a.snapshot_interval != 0 || b.snapshot_interval != 0) return;
  const std::size_t ia = a.effective_snapshot_interval(), ib = b.effective_snapshot_interval();
  if (ia == ib) return;
  a.snapshot_interval = b.snapshot_interval = std::lcm(ia, ib);
}

inline int cmd_compare(const CompareOptions& opt, std::ostream& log = std::cout) {
  try {
    RunConfig ca = load_run_config(opt.a);
    RunConfig cb = load_run_config(opt.b);
    if (ca.layer_dims() != cb.layer_dims()) throw ConfigError("m", "architectures of the two configs differ");
    if (ca.steps != cb.steps) throw ConfigError("steps", "the two configs must run the same number of steps");
    align_schedules(ca, cb);
    if (ca.effective_snapshot_interval() != cb.effective_snapshot_interval())
      throw ConfigError("snapshot_interval", "snapshot schedules differ");
    const Trajectory ta = run(ca);
    const Trajectory tb = run(cb);
    const auto dev = trajectory_deviation(ta, tb);

    std::filesystem::create_directories(opt.out);
    std::ofstream os(opt.out / "deviation.csv");
    os << "step";
    for (std::size_t l = 0; l < ca.layer_dims().size() - 1; ++l) os << ",layer" << l;
    os << ",total\n";
    double max_dev = 0.0, sum = 0.0;
    for (const auto& p : dev) {
      os << p.step;
      for (double v : p.per_layer) os << ',' << format_double(v);
      os << ',' << format_double(p.total) << '\n';
      max_dev = std::max(max_dev, p.total);
      sum += p.total;
    }
    Json s;
    s["version"] = kVersion;
    s["config_a"] = to_json(ca);
    s["config_b"] = to_json(cb);
    s["snapshots"] = dev.size();
    s["max_deviation"] = max_dev;
    s["mean_deviation"] = dev.empty() ? 0.0 : sum / static_cast<double>(dev.size());
    s["final_deviation"] = dev.empty() ? 0.0 : dev.back().total;
    s["final_loss_a"] = ta.final_eval_loss();
    s["final_loss_b"] = tb.final_eval_loss();
    write_json(opt.out / "summary.json", s);
    log << "max deviation " << format_double(max_dev) << " over " << dev.size() << " snapshots\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

struct SweepCell {
  std::size_t heads = 0, rank = 0, period = 0;
  std::vector<double> final_loss;
  std::vector<double> steps_to_threshold;  // +inf when never reached
  std::vector<double> final_update_rank;
  std::vector<double> max_update_rank;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Grid file: {"base": {...run config...}, "N": [...], "r": [...], "T": [...], "seeds": [...]}.
/// Missing axes take the base config's value; seeds default to [1, 2, 3].
inline std::vector<SweepCell> run_sweep(const Json& grid) {
  if (!grid.is_object()) throw ConfigError("grid", "must be a JSON object");
  for (const auto& [key, _] : grid.items()) {
    if (key != "base" && key != "N" && key != "r" && key != "T" && key != "seeds")
      throw ConfigError(key, "unknown grid key");
  }
  const Json base = grid.value("base", Json::object());
  const RunConfig base_cfg = parse_run_config(base);
  auto axis = [&](const char* key, std::size_t fallback) {
    std::vector<std::size_t> v;
    if (!grid.contains(key)) return std::vector<std::size_t>{fallback};
    if (!grid.at(key).is_array()) throw ConfigError(key, "must be an array");
    for (const auto& x : grid.at(key)) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 0) throw ConfigError(key, "entries must be non-negative integers");
      v.push_back(x.get<std::size_t>());
    }
    if (v.empty()) throw ConfigError(key, "grid axis is empty");
    return v;
  };
  const auto heads = axis("N", base_cfg.heads);
  const auto ranks = axis("r", base_cfg.rank);
  const auto periods = axis("T", base_cfg.policy.period);
  std::vector<std::uint64_t> seeds{1, 2, 3};
  if (grid.contains("seeds")) {
    seeds.clear();
    for (const auto& x : grid.at("seeds")) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 0) throw ConfigError("seeds", "entries must be non-negative integers");
      seeds.push_back(x.get<std::uint64_t>());
    }
    if (seeds.empty()) throw ConfigError("seeds", "grid axis is empty");
  }

  std::vector<SweepCell> cells;
  for (std::size_t n : heads) {
    for (std::size_t r : ranks) {
      for (std::size_t t : periods) {
        SweepCell cell{n, r, t, {}, {}, {}, {}};
        for (std::uint64_t seed : seeds) {
          Json j = base;
          j["N"] = n;
          j["r"] = r;
          if (!base.contains("alpha")) j["alpha"] = r;
          j["T"] = t;
          j["seed"] = seed;
          const RunConfig cfg = parse_run_config(j);
          Trajectory tr;
          try {
            tr = run(cfg);
          } catch (const NumericError&) {
            // A diverged cell is a result, not a failure of the sweep.
            cell.final_loss.push_back(std::numeric_limits<double>::infinity());
            cell.steps_to_threshold.push_back(std::numeric_limits<double>::infinity());
            cell.final_update_rank.push_back(std::numeric_limits<double>::quiet_NaN());
            cell.max_update_rank.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
          }
          cell.final_loss.push_back(tr.final_eval_loss());
          cell.steps_to_threshold.push_back(tr.steps_to_threshold ? static_cast<double>(*tr.steps_to_threshold)
                                                                  : std::numeric_limits<double>::infinity());
          const auto trace = update_rank_trace(tr);
          double last = std::numeric_limits<double>::quiet_NaN(), peak = 0.0;
          for (const auto& e : trace.cumulative) {
            const double v = detail::mean_finite(e.rank);
            if (std::isnan(v)) continue;
            last = v;
            peak = std::max(peak, v);
          }
          cell.final_update_rank.push_back(last);
          cell.max_update_rank.push_back(peak);
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

inline std::string format_steps(double v) {
  if (std::isinf(v)) return "never";
  return format_double(v);
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << "N,r,T,seeds,final_loss_median,steps_to_threshold_median,final_update_rank_median,"
        "max_update_rank_median\n";
  for (const auto& c : cells) {
    os << c.heads << ',' << c.rank << ',' << c.period << ',' << c.final_loss.size() << ','
       << format_double(median(c.final_loss)) << ',' << format_steps(median(c.steps_to_threshold)) << ','
       << format_double(median(c.final_update_rank)) << ',' << format_double(median(c.max_update_rank)) << '\n';
  }
}

inline void write_sweep_table(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << std::left << std::setw(5) << "N" << std::setw(5) << "r" << std::setw(7) << "T" << std::setw(16)
     << "final loss" << std::setw(14) << "steps<=thr" << std::setw(12) << "upd rank" << "max upd rank\n";
  for (const auto& c : cells) {
    std::ostringstream loss;
    loss << std::scientific << std::setprecision(3) << median(c.final_loss);
    std::ostringstream rank, peak;
    rank << std::fixed << std::setprecision(2) << median(c.final_update_rank);
    peak << std::fixed << std::setprecision(2) << median(c.max_update_rank);
    os << std::setw(5) << c.heads << std::setw(5) << c.rank << std::setw(7) << c.period << std::setw(16)
       << loss.str() << std::setw(14) << format_steps(median(c.steps_to_threshold)) << std::setw(12) << rank.str()
       << peak.str() << '\n';
  }
}

struct SweepOptions {
  std::filesystem::path grid;
  std::filesystem::path out = "sweep";
};

inline int cmd_sweep(const SweepOptions& opt, std::ostream& log = std::cout) {
  try {
    const auto cells = run_sweep(read_json(opt.grid));
    std::filesystem::create_directories(opt.out);
    {
      std::ofstream os(opt.out / "sweep.csv");
      write_sweep_csv(os, cells);
    }
    std::ofstream txt(opt.out / "sweep.txt");
    write_sweep_table(txt, cells);
    write_sweep_table(log, cells);
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

inline Json to_json(const CostReport& r) {
  Json j;
  j["comm_allreduce_ddp"] = r.comm_allreduce_ddp;
  j["comm_allreduce_lte_paper_M"] = r.comm_allreduce_lte;
  j["comm_allreduce_lte_M_lte"] = r.comm_allreduce_lte_lora;
  j["comm_ps_ddp"] = r.comm_ps_ddp;
  j["comm_ps_lte"] = r.comm_ps_lte;
  j["mem_ddp_per_device"] = r.mem_ddp_per_device;
  j["mem_lte_per_device"] = r.mem_lte_per_device;
  j["param_ratio_M_over_M_lte"] = r.param_ratio;
  return j;
}

inline int cmd_cost(const CostInputs& in, std::ostream& os = std::cout) {
  try {
    const CostReport r = cost_report(in);
    const std::pair<const char*, double> rows[] = {
        {"all-reduce DDP", r.comm_allreduce_ddp},
        {"all-reduce LTE (with M)", r.comm_allreduce_lte},
        {"all-reduce LTE (with M_lte)", r.comm_allreduce_lte_lora},
        {"param-server DDP", r.comm_ps_ddp},
        {"param-server LTE", r.comm_ps_lte},
        {"memory DDP / device", r.mem_ddp_per_device},
        {"memory LTE / device", r.mem_lte_per_device},
        {"M / M_lte", r.param_ratio},
    };
    for (const auto& [name, v] : rows) {
      std::ostringstream num;
      num << std::setprecision(10) << v;
      os << std::left << std::setw(30) << name << std::right << std::setw(18) << num.str() << '\n';
    }
    os << to_json(r).dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

}  // namespace lte
