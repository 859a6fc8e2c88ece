// lte_lab: command-line front end for training runs, trajectory comparison,
// (N, r, T) sweeps and the communication/memory cost model.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lte/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"LoRA-the-Explorer laboratory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lte::kVersion));

  lte::TrainOptions train;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  auto* train_cmd = app.add_subcommand("train", "run one configuration and write its artifacts");
  train_cmd->add_option("--config", train.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = train_cmd->add_option("--seed", seed, "override the config seed");
  auto* steps_opt = train_cmd->add_option("--steps", steps, "override the number of steps")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", train.out, "output directory")->capture_default_str();

  lte::CompareOptions compare;
  auto* compare_cmd = app.add_subcommand("compare", "run two configs and measure effective-weight deviation");
  compare_cmd->add_option("--a", compare.a, "first config")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--b", compare.b, "second config")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", compare.out, "output directory")->capture_default_str();

  lte::SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid over heads, rank and merge period");
  sweep_cmd->add_option("--grid", sweep.grid, "grid spec (JSON)")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", sweep.out, "output directory")->capture_default_str();

  lte::CostInputs cost;
  auto* cost_cmd = app.add_subcommand("cost", "communication and memory per device, DDP vs LTE");
  cost_cmd->add_option("--n-ddp", cost.N_ddp, "DDP device count")->required();
  cost_cmd->add_option("--n-lte", cost.N_lte, "LTE device count")->required();
  cost_cmd->add_option("--m", cost.M, "base model parameter count")->required();
  cost_cmd->add_option("--m-lte", cost.M_lte, "LoRA parameters per device")->required();
  cost_cmd->add_option("--t", cost.T, "merge period")->required();
  cost_cmd->add_option("--q", cost.q, "quantized size ratio of the base")->default_val(1.0);

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) {
    if (*seed_opt) train.seed = seed;
    if (*steps_opt) train.steps = steps;
    return lte::cmd_train(train);
  }
  if (*compare_cmd) return lte::cmd_compare(compare);
  if (*sweep_cmd) return lte::cmd_sweep(sweep);
  if (*cost_cmd) return lte::cmd_cost(cost);
  return 1;
}
