#pragma once

// Communication and memory accounting for data-parallel training versus LTE.
// All quantities are parameter counts; multiply by bytes per parameter for
// storage units.

#include <cmath>

#include "lte/error.hpp"

namespace lte {

struct CostInputs {
  double M = 0.0;       // base model parameters
  double M_lte = 0.0;   // trainable LoRA parameters per device
  double N_ddp = 0.0;
  double N_lte = 0.0;
  double T = 1.0;       // merge period
  double q = 1.0;       // stored size of the frozen base relative to full precision

  void validate() const {
    auto positive = [](double v, const char* field) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive and finite");
    };
    positive(M, "m");
    positive(M_lte, "m_lte");
    positive(N_ddp, "n_ddp");
    positive(N_lte, "n_lte");
    positive(T, "t");
    positive(q, "q");
    if (q > 1.0) throw ConfigError("q", "must be <= 1");
    if (M_lte > M) throw ConfigError("m_lte", "must not exceed m");
  }
};

struct CostReport {
  double comm_allreduce_ddp = 0.0;          // N (N - 1) M
  double comm_allreduce_lte = 0.0;          // (1/T) N (N - 1) M, as printed in the paper
  double comm_allreduce_lte_lora = 0.0;     // (1/T) N (N - 1) M_lte, LoRA parameters only
  double comm_ps_ddp = 0.0;                 // 2 (N - 1) M
  double comm_ps_lte = 0.0;                 // (1/T) ((N - 1) M_lte + (N - 1) q M)
  double mem_ddp_per_device = 0.0;          // 3 M
  double mem_lte_per_device = 0.0;          // q M + 3 M_lte
  double param_ratio = 0.0;                 // M / M_lte
};

inline CostReport cost_report(const CostInputs& in) {
  in.validate();
  CostReport r;
  r.comm_allreduce_ddp = in.N_ddp * (in.N_ddp - 1.0) * in.M;
  r.comm_allreduce_lte = in.N_lte * (in.N_lte - 1.0) * in.M / in.T;
  r.comm_allreduce_lte_lora = in.N_lte * (in.N_lte - 1.0) * in.M_lte / in.T;
  r.comm_ps_ddp = 2.0 * (in.N_ddp - 1.0) * in.M;
  r.comm_ps_lte = ((in.N_lte - 1.0) * in.M_lte + (in.N_lte - 1.0) * in.q * in.M) / in.T;
  r.mem_ddp_per_device = 3.0 * in.M;
  r.mem_lte_per_device = in.q * in.M + 3.0 * in.M_lte;
  r.param_ratio = in.M / in.M_lte;
  return r;
}

}  // namespace lte
