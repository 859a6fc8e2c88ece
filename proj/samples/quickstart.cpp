// Train LTE and multi-head LoRA on the same least-squares task and print
// how far apart their effective weights drift.

#include <cstdio>

#include "lte/lte.hpp"

int main() {
  lte::RunConfig cfg;
  cfg.m = cfg.n = 16;
  cfg.target_rank = 16;
  cfg.heads = 4;
  cfg.rank = 4;
  cfg.alpha = 4.0;
  cfg.base_init.reset();
  cfg.optim.lr = 0.3;
  cfg.steps = 400;
  cfg.seed = 7;

  cfg.method = lte::Method::MhLora;
  const auto mh = lte::run(cfg);

  cfg.method = lte::Method::Lte;
  cfg.policy.period = 10;
  cfg.policy.exact_correction = true;
  cfg.policy.reset_B = false;
  const auto lte_run = lte::run(cfg);

  std::printf("%8s %12s %12s %12s\n", "step", "mhlora", "lte", "deviation");
  for (const auto& p : lte::trajectory_deviation(mh, lte_run)) {
    if (p.step % 50) continue;
    std::printf("%8zu %12.4e %12.4e %12.4e\n", p.step, mh.eval_loss[p.step - 1], lte_run.eval_loss[p.step - 1],
                p.total);
  }
  const auto trace = lte::update_rank_trace(lte_run);
  std::printf("effective rank of the accumulated LTE update: %.2f\n", trace.cumulative.back().rank[0]);
}
