#include <gtest/gtest.h>

#include "lte/run_analysis.hpp"
#include "lte/training.hpp"

using namespace lte;

namespace {

Matrix randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  RandomSource rng(seed);
  return gaussian_matrix(r, c, rng);
}

RunConfig small_lte(std::size_t heads = 3, std::size_t period = 5) {
  RunConfig cfg;
  cfg.method = Method::Lte;
  cfg.m = cfg.n = 8;
  cfg.target_rank = 8;
  cfg.heads = heads;
  cfg.rank = 2;
  cfg.alpha = 2.0;
  cfg.policy.period = period;
  cfg.optim.lr = 0.1;
  cfg.batch_size = 24;
  cfg.steps = 40;
  cfg.seed = 5;
  return cfg;
}

// One-layer network plus workers with random heads, for direct merge tests.
struct Fixture {
  Network net;
  std::vector<WorkerState> workers;
};

Fixture random_fixture(std::size_t heads, bool exact) {
  LoraLinear layer(randn(4, 5, 1), heads, 2, 3.0);
  for (std::size_t h = 0; h < heads; ++h) layer.set_head(h, {randn(2, 5, 10 + h), randn(4, 2, 20 + h)});
  Fixture f{Network({layer}, {}, LossKind::MeanSquaredError), {}};
  for (std::size_t h = 0; h < heads; ++h) {
    WorkerState w;
    w.head = h;
    w.data = RandomSource(100 + h);
    w.opt_A.push_back(AdamState::zeros_like(layer.head(h).A));
    w.opt_B.push_back(AdamState::zeros_like(layer.head(h).B));
    if (exact) w.correction.push_back(Matrix(4, 5));
    f.workers.push_back(std::move(w));
  }
  return f;
}

Optimizer sgd(double lr) {
  Optimizer opt;
  opt.config.lr = lr;
  return opt;
}

}  // namespace

TEST(MergePolicy, Validation) {
  MergePolicy p;
  EXPECT_NO_THROW(p.validate());
  p.exact_correction = true;
  EXPECT_THROW(p.validate(), ConfigError);  // reset_B still on
  p.reset_B = false;
  EXPECT_NO_THROW(p.validate());
  p.reset_A = true;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(RunConfig, ValidationNamesField) {
  RunConfig cfg = small_lte();
  cfg.rank = 9;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "r");
  }
  cfg = small_lte();
  cfg.batch_size = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_lte();
  cfg.quantize_bits = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(LocalStep, ZeroUpstreamLeavesParameters) {
  Fixture f = random_fixture(2, false);
  const Matrix x = randn(5, 6, 30);
  Batch b{x, forward(f.net, x, ForwardMode::worker_view(1)).outputs};
  const auto before = f.net.layer(0).head(1);
  local_step(f.workers[1], f.net, b, sgd(0.1));
  EXPECT_EQ(f.net.layer(0).head(1).A, before.A);
  EXPECT_EQ(f.net.layer(0).head(1).B, before.B);
}

TEST(LocalStep, Isolation) {
  Fixture f = random_fixture(3, false);
  const Matrix w0 = f.net.layer(0).weight();
  const auto h0 = f.net.layer(0).head(0), h1 = f.net.layer(0).head(1), h2 = f.net.layer(0).head(2);
  for (int i = 0; i < 5; ++i) {
    Batch b{randn(5, 4, 40 + i), randn(4, 4, 50 + i)};
    local_step(f.workers[1], f.net, b, sgd(0.05));
  }
  EXPECT_EQ(f.net.layer(0).weight(), w0);
  EXPECT_EQ(f.net.layer(0).head(0).A, h0.A);
  EXPECT_EQ(f.net.layer(0).head(0).B, h0.B);
  EXPECT_EQ(f.net.layer(0).head(2).A, h2.A);
  EXPECT_EQ(f.net.layer(0).head(2).B, h2.B);
  EXPECT_NE(f.net.layer(0).head(1).A, h1.A);
  EXPECT_EQ(f.workers[1].local_steps, 5u);
}

TEST(LocalStep, LossDecreasesOnLeastSquares) {
  RandomSource rng(60);
  const auto task = gen_least_squares(4, 5, 2, rng);
  LoraLinear layer(Matrix(4, 5), 1, 2, 2.0);
  init_heads(layer, {InitKind::Kaiming, 1.0}, RandomSource(61));
  Network net({layer}, {}, LossKind::MeanSquaredError);
  WorkerState w;
  w.opt_A.push_back({});
  w.opt_B.push_back({});
  const Batch fixed = sample_batch(task, 32, rng);
  const double first = local_step(w, net, fixed, sgd(0.05));
  double last = first;
  for (int i = 0; i < 49; ++i) last = local_step(w, net, fixed, sgd(0.05));
  EXPECT_LT(last, 0.5 * first);
}

TEST(Merge, ZeroHeadsLeaveWUnchanged) {
  Fixture f = random_fixture(2, false);
  for (std::size_t h = 0; h < 2; ++h) f.net.layer(0).head(h).B.fill(0.0);
  const Matrix w0 = f.net.layer(0).weight();
  const auto rec = merge(f.net, f.workers, {}, {});
  EXPECT_EQ(f.net.layer(0).weight(), w0);
  EXPECT_EQ(max_abs(rec.delta[0]), 0.0);
}

TEST(Merge, HandExample) {
  LoraLinear layer(Matrix(1, 1), 2, 1, 1.0);
  layer.set_head(0, {Matrix::from_rows({{1}}), Matrix::from_rows({{1}})});
  layer.set_head(1, {Matrix::from_rows({{1}}), Matrix::from_rows({{3}})});
  Network net({layer}, {}, LossKind::MeanSquaredError);
  std::vector<WorkerState> workers(2);
  for (std::size_t h = 0; h < 2; ++h) {
    workers[h].head = h;
    workers[h].opt_A.push_back({});
    workers[h].opt_B.push_back({});
  }
  merge(net, workers, {}, {});
  EXPECT_EQ(net.layer(0).weight(), Matrix::from_rows({{2}}));
  EXPECT_EQ(max_abs(net.layer(0).head(1).B), 0.0);
}

TEST(Merge, FunctionPreservationWithResetB) {
  for (std::size_t heads : {1u, 2u, 4u}) {
    Fixture f = random_fixture(heads, false);
    const Matrix x = randn(5, 7, 70);
    const Matrix before = mhlora_forward(f.net.layer(0), x);
    const auto rec = merge(f.net, f.workers, {}, {});
    EXPECT_LE(max_abs_diff(layer_forward(f.net.layer(0), ForwardMode::full_weights(), x), before), 1e-12);
    EXPECT_LE(max_abs_diff(mhlora_forward(f.net.layer(0), x), before), 1e-12);
    EXPECT_EQ(rec.delta.size(), 1u);
  }
}

TEST(Merge, DeltaIsMeanOfWorkerDeltas) {
  Fixture f = random_fixture(3, false);
  MergeContext ctx;
  ctx.keep_worker_deltas = true;
  const auto rec = merge(f.net, f.workers, {}, ctx);
  Matrix mean(4, 5);
  for (const auto& wd : rec.worker_deltas) mean.add_scaled(wd[0], 1.0 / 3.0);
  EXPECT_LE(max_abs_diff(rec.delta[0], mean), 1e-14);
}

TEST(Merge, ExactModeKeepsHeadsAndSetsCorrection) {
  Fixture f = random_fixture(2, true);
  MergePolicy p;
  p.exact_correction = true;
  p.reset_B = false;
  const auto heads_before = f.net.layer(0).heads();
  const Matrix x = randn(5, 3, 80);
  const Matrix eff_before = effective_weights(f.net, f.workers)[0];
  merge(f.net, f.workers, p, {});
  EXPECT_EQ(f.net.layer(0).head(0).B, heads_before[0].B);
  EXPECT_EQ(f.workers[1].correction[0], matmul(heads_before[1].B, heads_before[1].A));
  // Effective weight is unchanged by the merge itself.
  EXPECT_LE(max_abs_diff(effective_weights(f.net, f.workers)[0], eff_before), 1e-12);
  // A second merge with no local progress adds nothing.
  const Matrix w1 = f.net.layer(0).weight();
  const auto rec = merge(f.net, f.workers, p, {});
  EXPECT_EQ(max_abs(rec.delta[0]), 0.0);
  EXPECT_EQ(f.net.layer(0).weight(), w1);
}

TEST(Merge, ResetOptAndResetA) {
  Fixture f = random_fixture(2, false);
  f.workers[0].opt_A[0].m.fill(1.0);
  f.workers[0].opt_A[0].step_count = 3;
  MergePolicy p;
  p.reset_A = true;
  p.reset_opt = true;
  const Matrix a_before = f.net.layer(0).head(0).A;
  MergeContext ctx;
  ctx.reset_init = {InitKind::Kaiming, 1.0};
  ctx.reset_rng = RandomSource(5);
  merge(f.net, f.workers, p, ctx);
  EXPECT_NE(f.net.layer(0).head(0).A, a_before);
  EXPECT_EQ(f.workers[0].opt_A[0].step_count, 0u);
  EXPECT_EQ(max_abs(f.workers[0].opt_A[0].m), 0.0);
}

TEST(Merge, StepCountMismatch) {
  Fixture f = random_fixture(2, false);
  f.workers[0].local_steps = 3;
  EXPECT_THROW(merge(f.net, f.workers, {}, {}), ContractViolation);
}

TEST(RunLte, Deterministic) {
  RunConfig cfg = small_lte();
  const auto a = run(cfg), b = run(cfg);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].loss, b.steps[i].loss);
  EXPECT_EQ(a.snapshots.back().effective, b.snapshots.back().effective);
}

TEST(RunLte, ParallelMatchesSequential) {
  RunConfig cfg = small_lte(4, 5);
  const auto seq = run(cfg);
  cfg.parallel_workers = true;
  const auto par = run(cfg);
  EXPECT_EQ(seq.snapshots.back().effective, par.snapshots.back().effective);
  EXPECT_EQ(seq.eval_loss, par.eval_loss);
}

TEST(RunLte, BatchingAndSchedule) {
  RunConfig cfg = small_lte(3, 5);
  cfg.batch_size = 26;
  const auto t = run(cfg);
  EXPECT_EQ(t.per_worker_batch, 8u);
  EXPECT_EQ(t.dropped_per_step, 2u);
  EXPECT_EQ(t.merges.size(), 8u);
  EXPECT_EQ(t.snapshots.size(), 8u);
  EXPECT_EQ(t.steps.size(), 40u * 3u);
  EXPECT_EQ(t.eval_loss.size(), 40u);
}

TEST(RunLte, SingleHeadExactT1IsLora) {
  RunConfig lora = small_lte(1, 0);
  lora.method = Method::Lora;
  lora.snapshot_interval = 1;
  RunConfig lte = small_lte(1, 1);
  lte.policy.exact_correction = true;
  lte.policy.reset_B = false;
  lte.snapshot_interval = 1;
  const auto a = run(lora), b = run(lte);
  const auto dev = trajectory_deviation(a, b);
  double worst = 0;
  for (const auto& p : dev) worst = std::max(worst, p.total);
  EXPECT_LE(worst, 1e-12);
}

TEST(RunLte, ExactT1MatchesMhlora) {
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::AdamW}) {
    RunConfig lte = small_lte(4, 1);
    lte.policy.exact_correction = true;
    lte.policy.reset_B = false;
    lte.optimizer = kind;
    if (kind == OptimizerKind::AdamW) lte.optim.lr = 0.01;
    lte.steps = 60;
    lte.snapshot_interval = 1;
    RunConfig mh = lte;
    mh.method = Method::MhLora;
    const auto dev = trajectory_deviation(run(lte), run(mh));
    for (const auto& p : dev) EXPECT_LE(p.total, 1e-10) << to_string(kind) << " step " << p.step;
  }
}

TEST(RunMhlora, SingleHeadIsLora) {
  RunConfig mh = small_lte(1, 0);
  mh.method = Method::MhLora;
  RunConfig lora = mh;
  lora.method = Method::Lora;
  const auto dev = trajectory_deviation(run(mh), run(lora));
  for (const auto& p : dev) EXPECT_LE(p.total, 1e-12);
}

TEST(RunMhlora, MonotoneishDescent) {
  RunConfig cfg = small_lte(2, 0);
  cfg.method = Method::MhLora;
  cfg.optim.lr = 0.02;
  cfg.steps = 300;
  const auto t = run(cfg);
  for (std::size_t w = 10; w + 10 <= t.eval_loss.size(); w += 10) {
    double prev = 0, cur = 0;
    for (std::size_t i = w - 10; i < w; ++i) prev += t.eval_loss[i];
    for (std::size_t i = w; i < w + 10; ++i) cur += t.eval_loss[i];
    EXPECT_LE(cur / 10 - prev / 10, 1e-9) << "window " << w;
  }
}

TEST(RunFull, ConvergesToSolution) {
  RunConfig cfg;
  cfg.method = Method::Full;
  cfg.m = cfg.n = cfg.target_rank = 6;
  cfg.optim.lr = 0.3;
  cfg.batch_size = 32;
  cfg.steps = 400;
  cfg.seed = 3;
  const auto t = run(cfg);
  EXPECT_LE(t.final_eval_loss(), 1e-10);
  EXPECT_LE(max_abs_diff(t.network.layer(0).weight(), t.task.target), 1e-5);
  const auto again = run(cfg);
  EXPECT_EQ(again.network.layer(0).weight(), t.network.layer(0).weight());
}

TEST(RunFull, NonLinearNetworkTrains) {
  RunConfig cfg;
  cfg.method = Method::Full;
  cfg.m = cfg.n = cfg.target_rank = 4;
  cfg.hidden = {8};
  cfg.activation = Activation::ReLU;
  cfg.base_init = InitScheme{InitKind::Kaiming, 1.0};
  cfg.optim.lr = 0.05;
  cfg.batch_size = 32;
  cfg.steps = 300;
  const auto t = run(cfg);
  EXPECT_LT(t.final_eval_loss(), 0.5 * t.eval_loss.front());
}

TEST(RunLte, MergingBeatsNoMergeOnFullRankTask) {
  RunConfig cfg = small_lte(1, 10);
  cfg.method = Method::Lora;
  cfg.rank = 2;
  cfg.base_init = std::nullopt;
  cfg.policy.reset_A = true;
  cfg.lora_init = {InitKind::Kaiming, 2.0};
  cfg.optim.lr = 0.08;
  cfg.batch_size = 16;
  cfg.steps = 2000;
  const auto merged = run(cfg);
  cfg.policy.period = 0;
  cfg.policy.reset_A = false;
  const auto frozen = run(cfg);
  EXPECT_LT(merged.final_eval_loss() * 10, frozen.final_eval_loss());
}

TEST(RunLte, QuantizedBaseRuns) {
  RunConfig cfg = small_lte(2, 5);
  cfg.quantize_bits = 4;
  const auto t = run(cfg);
  EXPECT_TRUE(std::isfinite(t.final_eval_loss()));
  EXPECT_LT(t.final_eval_loss(), t.eval_loss.front());
}

TEST(RunLte, NoMergeSnapshotsEveryTenSteps) {
  RunConfig cfg = small_lte(2, 0);
  cfg.steps = 35;
  const auto t = run(cfg);
  EXPECT_TRUE(t.merges.empty());
  ASSERT_EQ(t.snapshots.size(), 4u);
  EXPECT_EQ(t.snapshots.back().step, 35u);
}
