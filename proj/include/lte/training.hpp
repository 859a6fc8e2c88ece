#pragma once

// The LTE scheduler and its baselines.
//
// run_lte      N workers, each training its own head on a private data stream
//              for T local steps, then a synchronous merge into W.
// run_mhlora   all N heads trained jointly through the multi-head forward;
//              head n takes its gradient from worker n's shard.
// run_full     plain training of W.
//
// Every run is a pure function of its RunConfig: randomness flows from the
// config seed through labelled child streams, so worker n draws the same
// batches under LTE and MHLoRA and the order workers execute in is
// irrelevant.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "lte/analysis.hpp"
#include "lte/data.hpp"
#include "lte/error.hpp"
#include "lte/init.hpp"
#include "lte/layers.hpp"
#include "lte/network.hpp"
#include "lte/optim.hpp"
#include "lte/quantize.hpp"
#include "lte/random.hpp"

namespace lte {

enum class Method { Full, Lora, MhLora, Lte };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Full: return "full";
    case Method::Lora: return "lora";
    case Method::MhLora: return "mhlora";
    case Method::Lte: return "lte";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "full") return Method::Full;
  if (s == "lora") return Method::Lora;
  if (s == "mhlora") return Method::MhLora;
  if (s == "lte") return Method::Lte;
  throw ConfigError("method", "unknown method '" + std::string(s) + "'");
}

struct MergePolicy {
  std::size_t period = 10;  // T; 0 disables merging
  bool reset_B = true;
  bool reset_A = false;
  bool reset_opt = false;
  bool exact_correction = false;

  void validate() const {
    if (exact_correction && reset_B) throw ConfigError("reset_B", "must be false with exact_correction");
    if (exact_correction && reset_A) throw ConfigError("reset_A", "must be false with exact_correction");
    if (exact_correction && reset_opt) throw ConfigError("reset_opt", "must be false with exact_correction");
  }
};

struct RunConfig {
  Method method = Method::Lte;

  // Least-squares task.
  std::size_t m = 32;
  std::size_t n = 32;
  std::size_t target_rank = 32;
  std::optional<std::uint64_t> task_seed;  // defaults to `seed`

  // Architecture: n -> hidden... -> m, one activation for every gap.
  std::vector<std::size_t> hidden;
  Activation activation = Activation::Identity;

  std::size_t heads = 4;  // N
  std::size_t rank = 4;   // r
  double alpha = 4.0;     // s = alpha / r
  MergePolicy policy;

  OptimizerKind optimizer = OptimizerKind::Sgd;
  OptimConfig optim{.lr = 0.05};

  InitScheme lora_init{InitKind::SemiOrthogonal, 1.0};
  std::optional<InitScheme> base_init = InitScheme{InitKind::Xavier, 1.0};  // nullopt: zeros

  std::size_t batch_size = 64;  // cumulative B; each worker sees floor(B / N)
  std::size_t steps = 1000;
  std::size_t snapshot_interval = 0;  // 0: every merge (LTE) or every 10 steps
  std::uint64_t seed = 0;
  int quantize_bits = 0;  // 0: off; else workers see a quantized copy of W
  bool analysis = true;
  bool parallel_workers = false;
  bool keep_worker_deltas = false;
  double loss_threshold = 1e-4;
  std::size_t eval_batch = 256;  // used only for non-linear networks

  std::size_t num_heads() const noexcept {
    switch (method) {
      case Method::Full: return 0;
      case Method::Lora: return 1;
      default: return heads;
    }
  }

  std::size_t per_worker_batch() const noexcept {
    const std::size_t w = std::max<std::size_t>(1, num_heads());
    return batch_size / w;
  }

  bool merges() const noexcept {
    return (method == Method::Lte || method == Method::Lora) && policy.period > 0;
  }

  std::size_t effective_snapshot_interval() const noexcept {
    if (snapshot_interval > 0) return snapshot_interval;
    return merges() ? policy.period : 10;
  }

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> dims{n};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(m);
    return dims;
  }

  /// Cross-field validation; throws ConfigError naming the offending key.
  void validate() const {
    if (m < 1) throw ConfigError("m", "must be >= 1");
    if (n < 1) throw ConfigError("n", "must be >= 1");
    if (target_rank < 1 || target_rank > std::min(m, n))
      throw ConfigError("target_rank", "must be in [1, min(m, n)]");
    for (std::size_t i = 0; i < hidden.size(); ++i)
      if (hidden[i] < 1) throw ConfigError("hidden[" + std::to_string(i) + "]", "must be >= 1");
    if (method == Method::Lora && heads != 1) throw ConfigError("N", "method 'lora' uses exactly one head");
    if (method != Method::Full) {
      if (heads < 1) throw ConfigError("N", "must be >= 1");
      if (rank < 1) throw ConfigError("r", "must be >= 1");
      const auto dims = layer_dims();
      for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        if (rank > std::min(dims[l], dims[l + 1])) {
          throw ConfigError("r", "rank " + std::to_string(rank) + " exceeds min(m, n) = " +
                                     std::to_string(std::min(dims[l], dims[l + 1])) + " of layer " +
                                     std::to_string(l));
        }
      }
      if (!(alpha > 0.0)) throw ConfigError("alpha", "must be > 0");
    }
    policy.validate();
    optim.validate();
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (per_worker_batch() < 1) throw ConfigError("batch_size", "floor(batch_size / N) must be >= 1");
    if (steps < 1) throw ConfigError("steps", "must be >= 1");
    if (quantize_bits != 0 && (quantize_bits < 2 || quantize_bits > 8))
      throw ConfigError("quantize_bits", "must be 0 (off) or in [2, 8]");
    if (!(loss_threshold > 0.0)) throw ConfigError("loss_threshold", "must be > 0");
    if (eval_batch < 1) throw ConfigError("eval_batch", "must be >= 1");
  }
};

/// One LTE worker. Owns its head index, optimizer state, data stream and
/// (in exact-correction mode) the correction V per layer.
struct WorkerState {
  std::size_t head = 0;
  std::vector<AdamState> opt_A;  // per layer
  std::vector<AdamState> opt_B;
  std::vector<Matrix> correction;  // per layer; empty unless exact correction is on
  RandomSource data;
  std::size_t local_steps = 0;  // since the last merge
  std::size_t total_steps = 0;
};

/// Result of one merge.
struct UpdateRecord {
  std::size_t merge_id = 0;
  std::size_t step = 0;
  std::vector<Matrix> delta;  // per layer: what was added to W, (1/N) sum_n delta_n
  std::vector<std::vector<Matrix>> worker_deltas;  // [worker][layer]: s (B_n A_n - V_n); optional
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t merge_id = 0;  // merges completed before this step
  std::size_t worker = 0;
  double loss = 0.0;
};

struct Snapshot {
  std::size_t step = 0;
  std::size_t merge_id = 0;  // merges completed up to and including this step
  std::vector<Matrix> effective;  // per layer
  double eval_loss = 0.0;
  std::vector<double> update_rank;  // per layer rank of (effective - initial); NaN when zero
  // Per-layer head alignment (NaN for fewer than two non-zero heads) and its layer mean.
  std::vector<double> layer_cosine;
  std::vector<double> layer_grassman;
  std::vector<double> layer_grassman_paper;
  double mean_cosine = std::numeric_limits<double>::quiet_NaN();
  double mean_grassman = std::numeric_limits<double>::quiet_NaN();
  double grassman_paper = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  RunConfig config;
  LeastSquaresTask task;
  std::vector<Matrix> initial_effective;
  std::vector<StepRecord> steps;
  std::vector<double> eval_loss;  // index step - 1
  std::vector<Snapshot> snapshots;
  std::vector<UpdateRecord> merges;
  Network network;
  std::vector<WorkerState> workers;
  std::size_t per_worker_batch = 0;
  std::size_t dropped_per_step = 0;  // B mod N samples not drawn
  std::optional<std::size_t> steps_to_threshold;

  double final_eval_loss() const { return eval_loss.empty() ? 0.0 : eval_loss.back(); }
};

namespace detail {

inline std::vector<Matrix> worker_effective_weights(const Network& net, const std::vector<WorkerState>& workers,
                                                    const std::vector<Matrix>* base_override) {
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layer(l);
    Matrix w = base_override ? (*base_override)[l] : layer.weight();
    if (layer.num_heads() > 0) {
      const double c = head_coefficient(layer, ScaleMode::SharedSOverN);
      for (std::size_t h = 0; h < layer.num_heads(); ++h) {
        w.add_scaled(matmul(layer.head(h).B, layer.head(h).A), c);
      }
      for (const auto& worker : workers) {
        if (!worker.correction.empty()) w.add_scaled(worker.correction[l], -c);
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace detail

/// Effective weights W + (s/N) sum_n (B_n A_n - V_n) of every layer.
inline std::vector<Matrix> effective_weights(const Network& net, const std::vector<WorkerState>& workers) {
  return detail::worker_effective_weights(net, workers, nullptr);
}

/// One optimizer step on the worker's own head using the worker-view forward
/// (minus (s/N) V x in exact-correction mode). W and other heads are only read.
inline double local_step(WorkerState& worker, Network& net, const Batch& batch, const Optimizer& opt,
                         std::size_t schedule_step = 0) {
  const ForwardMode mode = ForwardMode::worker_view(worker.head);
  const Corrections<double> corrections(worker.correction);
  auto lg = loss_and_grad(net, batch, mode, corrections);
  if (!std::isfinite(lg.loss)) throw NumericError("local_step: non-finite loss");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& head = net.layer(l).head(worker.head);
    const auto& g = *lg.grads[l].heads[worker.head];
    opt.step(head.A, g.dA, worker.opt_A[l], schedule_step);
    opt.step(head.B, g.dB, worker.opt_B[l], schedule_step);
  }
  ++worker.local_steps;
  ++worker.total_steps;
  return lg.loss;
}

struct MergeContext {
  std::size_t merge_id = 0;
  std::size_t step = 0;
  InitScheme reset_init{};
  RandomSource reset_rng{};
  bool keep_worker_deltas = false;
};

/// Synchronous merge. Averaged mode: W += (s/N) sum_n B_n A_n, then resets per
/// policy. Exact mode: W += (s/N) sum_n (B_n A_n - V_n), V_n <- B_n A_n, heads
/// and optimizer state kept. Heads are reduced in index order.
inline UpdateRecord merge(Network& net, std::vector<WorkerState>& workers, const MergePolicy& policy,
                          const MergeContext& ctx) {
  detail::require(!workers.empty(), "merge: no workers");
  for (const auto& w : workers) {
    if (w.local_steps != workers.front().local_steps) {
      throw ContractViolation("merge: workers have completed different numbers of local steps");
    }
  }
  UpdateRecord rec;
  rec.merge_id = ctx.merge_id;
  rec.step = ctx.step;
  if (ctx.keep_worker_deltas) rec.worker_deltas.resize(workers.size());

  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& layer = net.layer(l);
    const double s = layer.scale();
    const double shared = head_coefficient(layer, ScaleMode::SharedSOverN);
    Matrix sum(layer.out_features(), layer.in_features());
    std::vector<Matrix> products;
    for (const auto& w : workers) {
      Matrix p = matmul(layer.head(w.head).B, layer.head(w.head).A);
      Matrix contribution = p;
      if (policy.exact_correction) contribution -= w.correction[l];
      sum += contribution;
      if (ctx.keep_worker_deltas) rec.worker_deltas[&w - workers.data()].push_back(s * contribution);
      products.push_back(std::move(p));
    }
    sum *= shared;
    layer.weight() += sum;
    rec.delta.push_back(std::move(sum));

    for (std::size_t k = 0; k < workers.size(); ++k) {
      auto& w = workers[k];
      auto& head = layer.head(w.head);
      if (policy.exact_correction) {
        w.correction[l] = std::move(products[k]);
        continue;
      }
      if (policy.reset_B) head.B.fill(0.0);
      if (policy.reset_A) {
        RandomSource stream = ctx.reset_rng.split("layer", l).split("head", w.head);
        head.A = init_matrix(layer.rank(), layer.in_features(), ctx.reset_init, stream);
      }
      if (policy.reset_opt) {
        w.opt_A[l].reset();
        w.opt_B[l].reset();
      }
    }
  }
  for (auto& w : workers) w.local_steps = 0;
  return rec;
}

namespace detail {

inline Optimizer make_optimizer(const RunConfig& cfg) {
  Optimizer opt;
  opt.kind = cfg.optimizer;
  opt.config = cfg.optim;
  return opt;
}

/// State shared by every run flavour: task, network, workers, bookkeeping.
class RunSession {
 public:
  explicit RunSession(const RunConfig& cfg) : root_(cfg.seed) {
    cfg.validate();
    traj_.config = cfg;
    RandomSource task_rng = RandomSource(cfg.task_seed.value_or(cfg.seed)).split("task");
    traj_.task = gen_least_squares(cfg.m, cfg.n, cfg.target_rank, task_rng);

    const auto dims = cfg.layer_dims();
    const std::size_t heads = cfg.num_heads();
    std::vector<LoraLinear> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const std::size_t in = dims[l], out = dims[l + 1];
      Matrix w(out, in);
      if (cfg.base_init) {
        RandomSource base_rng = root_.split("base", l);
        w = init_matrix(out, in, *cfg.base_init, base_rng);
      }
      const std::size_t r = heads == 0 ? 1 : cfg.rank;
      LoraLinear layer(std::move(w), heads, r, heads == 0 ? 1.0 : cfg.alpha);
      init_heads(layer, cfg.lora_init, root_.split("init").split("layer", l));
      layers.push_back(std::move(layer));
    }
    std::vector<Activation> acts(dims.size() - 2, cfg.activation);
    traj_.network = Network(std::move(layers), std::move(acts), LossKind::MeanSquaredError);

    const std::size_t streams = std::max<std::size_t>(1, heads);
    for (std::size_t k = 0; k < streams; ++k) {
      WorkerState w;
      w.head = k;
      w.data = root_.split("worker", k);
      for (const auto& layer : traj_.network.layers()) {
        const Matrix& a = heads == 0 ? layer.weight() : layer.head(k).A;
        const Matrix& b = heads == 0 ? layer.weight() : layer.head(k).B;
        w.opt_A.push_back(AdamState::zeros_like(a));
        w.opt_B.push_back(AdamState::zeros_like(b));
        if (cfg.policy.exact_correction && cfg.merges()) {
          w.correction.emplace_back(layer.out_features(), layer.in_features());
        }
      }
      traj_.workers.push_back(std::move(w));
    }
    traj_.per_worker_batch = cfg.method == Method::Full ? cfg.batch_size : cfg.per_worker_batch();
    traj_.dropped_per_step = cfg.method == Method::Full ? 0 : cfg.batch_size % std::max<std::size_t>(1, heads);

    if (!traj_.network.is_linear()) {
      RandomSource eval_rng = root_.split("eval");
      eval_batch_ = sample_batch(traj_.task, cfg.eval_batch, eval_rng);
    }
    traj_.initial_effective = current_effective();
  }

  Trajectory& trajectory() { return traj_; }
  const RunConfig& config() const { return traj_.config; }
  Network& net() { return traj_.network; }
  std::vector<WorkerState>& workers() { return traj_.workers; }
  const RandomSource& root() const { return root_; }

  /// Precise base weights while workers see a quantized copy.
  void set_precise_base(std::optional<std::vector<Matrix>> base) { precise_base_ = std::move(base); }
  const std::optional<std::vector<Matrix>>& precise_base() const { return precise_base_; }

  std::vector<Matrix> current_effective() const {
    const auto& net = traj_.network;
    if (traj_.config.method == Method::MhLora) {
      std::vector<Matrix> out;
      for (const auto& layer : net.layers()) out.push_back(effective_weight(layer));
      return out;
    }
    return worker_effective_weights(net, traj_.workers, precise_base_ ? &*precise_base_ : nullptr);
  }

  double evaluate(const std::vector<Matrix>& effective) const {
    const auto& net = traj_.network;
    if (net.is_linear()) {
      Matrix map = effective.front();
      for (std::size_t l = 1; l < effective.size(); ++l) map = matmul(effective[l], map);
      return population_loss(traj_.task, map);
    }
    std::vector<LoraLinear> layers;
    for (const auto& w : effective) layers.emplace_back(w, 0, 1, 1.0);
    Network plain(std::move(layers), net.activations(), net.loss());
    return loss_value(plain, eval_batch_, ForwardMode::full_weights());
  }

  void record_losses(std::size_t step, const std::vector<double>& losses) {
    for (std::size_t k = 0; k < losses.size(); ++k) traj_.steps.push_back({step, merges_done_, k, losses[k]});
  }

  bool snapshot_due(std::size_t step) const {
    return step % traj_.config.effective_snapshot_interval() == 0 || step == traj_.config.steps;
  }

  /// Head alignment averaged over layers; must be called while heads still
  /// hold the values to be measured (i.e. before a resetting merge).
  void measure_alignment(Snapshot& snap) const {
    const auto& net = traj_.network;
    if (!traj_.config.analysis || net.num_heads() < 2) return;
    double cos_sum = 0.0, grass_sum = 0.0, paper_sum = 0.0;
    std::size_t counted = 0;
    for (const auto& layer : net.layers()) {
      const auto rep = head_alignment(layer);
      snap.layer_cosine.push_back(rep.mean_cosine);
      snap.layer_grassman.push_back(rep.mean_grassman);
      snap.layer_grassman_paper.push_back(rep.grassman_paper_normalized);
      if (std::isnan(rep.mean_cosine)) continue;
      cos_sum += rep.mean_cosine;
      grass_sum += rep.mean_grassman;
      paper_sum += rep.grassman_paper_normalized;
      ++counted;
    }
    if (counted == 0) return;
    snap.mean_cosine = cos_sum / static_cast<double>(counted);
    snap.mean_grassman = grass_sum / static_cast<double>(counted);
    snap.grassman_paper = paper_sum / static_cast<double>(counted);
  }

  void finish_step(std::size_t step, std::optional<Snapshot> pending) {
    const auto eff = current_effective();
    const double loss = evaluate(eff);
    if (!std::isfinite(loss)) throw NumericError("run diverged: non-finite evaluation loss at step " +
                                                 std::to_string(step));
    traj_.eval_loss.push_back(loss);
    if (!traj_.steps_to_threshold && loss <= traj_.config.loss_threshold) traj_.steps_to_threshold = step;
    if (!pending) return;
    Snapshot snap = std::move(*pending);
    snap.step = step;
    snap.merge_id = merges_done_;
    snap.eval_loss = loss;
    if (traj_.config.analysis) {
      for (std::size_t l = 0; l < eff.size(); ++l) {
        const Matrix change = eff[l] - traj_.initial_effective[l];
        snap.update_rank.push_back(max_abs(change) == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                                          : effective_rank(change));
      }
    }
    snap.effective = eff;
    traj_.snapshots.push_back(std::move(snap));
  }

  std::size_t merges_done() const { return merges_done_; }
  void add_merge(UpdateRecord rec) {
    traj_.merges.push_back(std::move(rec));
    ++merges_done_;
  }

 private:
  RandomSource root_;
  Trajectory traj_;
  Batch eval_batch_;
  std::optional<std::vector<Matrix>> precise_base_;
  std::size_t merges_done_ = 0;
};

template <class F>
void for_each_worker(std::size_t count, bool parallel, F&& body) {
  if (!parallel || count < 2) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::vector<std::jthread> threads;
  threads.reserve(count);
  std::vector<std::exception_ptr> errors(count);
  for (std::size_t k = 0; k < count; ++k) {
    threads.emplace_back([&, k] {
      try {
        body(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  threads.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<Matrix> quantized_copy(std::vector<LoraLinear>& layers, int bits) {
  std::vector<Matrix> precise;
  for (auto& layer : layers) {
    precise.push_back(layer.weight());
    layer.weight() = quantize_emulate(layer.weight(), bits);
  }
  return precise;
}

inline void restore_precise(std::vector<LoraLinear>& layers, std::vector<Matrix>& precise) {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].weight() = std::move(precise[l]);
}

}  // namespace detail

/// LTE training loop (also serves method 'lora', i.e. N = 1).
inline Trajectory run_lte(const RunConfig& config) {
  detail::RunSession session(config);
  const RunConfig& cfg = session.config();
  detail::require(cfg.method == Method::Lte || cfg.method == Method::Lora, "run_lte: method must be lte or lora");
  auto& net = session.net();
  auto& workers = session.workers();
  const Optimizer opt = detail::make_optimizer(cfg);
  const std::size_t batch = cfg.per_worker_batch();
  const bool quantize = cfg.quantize_bits > 0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const bool round_start = step == 1 || (cfg.merges() && (step - 1) % cfg.policy.period == 0);
    if (quantize && round_start) {
      session.set_precise_base(detail::quantized_copy(net.layers(), cfg.quantize_bits));
    }

    std::vector<double> losses(workers.size());
    detail::for_each_worker(workers.size(), cfg.parallel_workers, [&](std::size_t k) {
      const Batch b = sample_batch(session.trajectory().task, batch, workers[k].data);
      losses[k] = local_step(workers[k], net, b, opt, step - 1);
    });
    session.record_losses(step, losses);

    std::optional<Snapshot> pending;
    if (session.snapshot_due(step)) {
      pending.emplace();
      session.measure_alignment(*pending);
    }

    const bool merging = cfg.merges() && step % cfg.policy.period == 0;
    const bool round_end = merging || step == cfg.steps;
    if (quantize && round_end) {
      auto precise = *session.precise_base();
      detail::restore_precise(net.layers(), precise);
      session.set_precise_base(std::nullopt);
    }
    if (merging) {
      MergeContext mc{session.merges_done(), step, cfg.lora_init,
                      session.root().split("reset_a", session.merges_done()), cfg.keep_worker_deltas};
      session.add_merge(merge(net, workers, cfg.policy, mc));
    }
    session.finish_step(step, std::move(pending));
  }
  return std::move(session.trajectory());
}

/// Multi-head LoRA: every step, head n receives the gradient of worker n's
/// shard through the full multi-head forward; all heads update together.
inline Trajectory run_mhlora(const RunConfig& config) {
  detail::RunSession session(config);
  const RunConfig& cfg = session.config();
  detail::require(cfg.method == Method::MhLora, "run_mhlora: method must be mhlora");
  auto& net = session.net();
  auto& workers = session.workers();
  const Optimizer opt = detail::make_optimizer(cfg);
  const std::size_t batch = cfg.per_worker_batch();

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<double> losses(workers.size());
    std::vector<std::vector<HeadGradients>> grads(workers.size());  // [worker][layer]
    detail::for_each_worker(workers.size(), cfg.parallel_workers, [&](std::size_t k) {
      const Batch b = sample_batch(session.trajectory().task, batch, workers[k].data);
      auto lg = loss_and_grad(net, b, ForwardMode::multi_head());
      losses[k] = lg.loss;
      for (auto& layer_grads : lg.grads) grads[k].push_back(std::move(*layer_grads.heads[k]));
    });
    for (double v : losses)
      if (!std::isfinite(v)) throw NumericError("run_mhlora: non-finite loss");
    for (std::size_t k = 0; k < workers.size(); ++k) {
      auto& w = workers[k];
      for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto& head = net.layer(l).head(k);
        opt.step(head.A, grads[k][l].dA, w.opt_A[l], step - 1);
        opt.step(head.B, grads[k][l].dB, w.opt_B[l], step - 1);
      }
      ++w.total_steps;
    }
    session.record_losses(step, losses);
    std::optional<Snapshot> pending;
    if (session.snapshot_due(step)) {
      pending.emplace();
      session.measure_alignment(*pending);
    }
    session.finish_step(step, std::move(pending));
  }
  return std::move(session.trajectory());
}

/// Standard training of W with the same optimizer and cumulative batch size.
inline Trajectory run_full(const RunConfig& config) {
  detail::RunSession session(config);
  const RunConfig& cfg = session.config();
  detail::require(cfg.method == Method::Full, "run_full: method must be full");
  auto& net = session.net();
  auto& worker = session.workers().front();
  const Optimizer opt = detail::make_optimizer(cfg);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch b = sample_batch(session.trajectory().task, cfg.batch_size, worker.data);
    auto lg = loss_and_grad(net, b, ForwardMode::full_weights());
    if (!std::isfinite(lg.loss)) throw NumericError("run_full: non-finite loss");
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      opt.step(net.layer(l).weight(), *lg.grads[l].dW, worker.opt_A[l], step - 1);
    }
    ++worker.total_steps;
    session.record_losses(step, {lg.loss});
    std::optional<Snapshot> pending;
    if (session.snapshot_due(step)) pending.emplace();
    session.finish_step(step, std::move(pending));
  }
  return std::move(session.trajectory());
}

/// Dispatch on config.method.
inline Trajectory run(const RunConfig& config) {
  switch (config.method) {
    case Method::Full: return run_full(config);
    case Method::MhLora: return run_mhlora(config);
    case Method::Lora:
    case Method::Lte: return run_lte(config);
  }
  throw ContractViolation("run: unknown method");
}

}  // namespace lte
