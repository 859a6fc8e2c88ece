#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>

#include "lte/error.hpp"
#include "lte/matrix.hpp"

namespace lte {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must be in [0, 1)");
    if (!(eps >= 0.0)) throw ConfigError("eps", "must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  }
};

struct AdamState {
  Matrix m;
  Matrix v;
  std::size_t step_count = 0;

  static AdamState zeros_like(const Matrix& param) {
    return {Matrix::zeros_like(param), Matrix::zeros_like(param), 0};
  }

  void reset() {
    m.fill(0.0);
    v.fill(0.0);
    step_count = 0;
  }
};

/// param - eta * grad
inline Matrix sgd_step(const Matrix& param, const Matrix& grad, double eta) {
  detail::require(param.same_shape(grad), "sgd_step: parameter and gradient shapes differ");
  Matrix out = param;
  out.add_scaled(grad, -eta);
  return out;
}

/// In-place AdamW with bias correction and decoupled weight decay:
///   param <- param - lr * wd * param - lr * m_hat / (sqrt(v_hat) + eps)
inline void adamw_update(Matrix& param, const Matrix& grad, AdamState& state, const OptimConfig& cfg) {
  detail::require(param.same_shape(grad), "adamw_step: parameter and gradient shapes differ");
  if (state.m.empty() && state.v.empty()) state = AdamState::zeros_like(param);
  detail::require(state.m.same_shape(param) && state.v.same_shape(param),
                  "adamw_step: optimizer state shape differs from parameter");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = param.values();
  auto g = grad.values();
  auto m = state.m.values();
  auto v = state.v.values();
  for (std::size_t k = 0; k < p.size(); ++k) {
    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
    const double m_hat = m[k] / bc1;
    const double v_hat = v[k] / bc2;
    const double denom = std::sqrt(v_hat) + cfg.eps;
    // 0/0 only arises with eps = 0 and an all-zero gradient history.
    const double adaptive = denom == 0.0 ? 0.0 : m_hat / denom;
    p[k] = p[k] - cfg.lr * cfg.weight_decay * p[k] - cfg.lr * adaptive;
  }
}

inline std::pair<Matrix, AdamState> adamw_step(const Matrix& param, const Matrix& grad, AdamState state,
                                               const OptimConfig& cfg) {
  Matrix out = param;
  adamw_update(out, grad, state, cfg);
  return {std::move(out), std::move(state)};
}

enum class OptimizerKind { Sgd, AdamW };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("optimizer.kind", "unknown optimizer '" + std::string(s) + "'");
}

/// Learning-rate multiplier: constant, or linear warmup then cosine decay.
struct LrSchedule {
  enum class Kind { Constant, WarmupCosine };
  Kind kind = Kind::Constant;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
  double min_factor = 0.0;

  double factor(std::size_t step) const {
    if (kind == Kind::Constant) return 1.0;
    if (step < warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return 1.0;
    const double progress = std::min(
        1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
    return min_factor + (1.0 - min_factor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

struct Optimizer {
  OptimizerKind kind = OptimizerKind::Sgd;
  OptimConfig config;
  LrSchedule schedule;

  /// One update of `param`. `state` is ignored by SGD. `step` indexes the schedule.
  void step(Matrix& param, const Matrix& grad, AdamState& state, std::size_t step = 0) const {
    OptimConfig cfg = config;
    cfg.lr *= schedule.factor(step);
    if (kind == OptimizerKind::Sgd) {
      detail::require(param.same_shape(grad), "sgd_step: parameter and gradient shapes differ");
      param.add_scaled(grad, -cfg.lr);
    } else {
      adamw_update(param, grad, state, cfg);
    }
  }
};

}  // namespace lte
