#pragma once

// Analysis over whole runs: effective-weight deviation between two
// trajectories and the rank history of merged updates.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lte/analysis.hpp"
#include "lte/error.hpp"
#include "lte/training.hpp"

namespace lte {

struct DeviationPoint {
  std::size_t step = 0;
  std::vector<double> per_layer;  // ||W_eff_a - W_eff_b||_F
  double total = 0.0;             // sum over layers
};

/// Per snapshot, Frobenius distance of the two runs' effective weights.
/// Both runs must have snapshots at the same steps with the same shapes.
inline std::vector<DeviationPoint> trajectory_deviation(const Trajectory& a, const Trajectory& b) {
  if (a.snapshots.size() != b.snapshots.size()) {
    throw ContractViolation("trajectory_deviation: snapshot schedules differ (" +
                            std::to_string(a.snapshots.size()) + " vs " + std::to_string(b.snapshots.size()) +
                            " snapshots)");
  }
  std::vector<DeviationPoint> out;
  out.reserve(a.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    const auto& sa = a.snapshots[i];
    const auto& sb = b.snapshots[i];
    if (sa.step != sb.step) {
      throw ContractViolation("trajectory_deviation: snapshot " + std::to_string(i) + " is at step " +
                              std::to_string(sa.step) + " vs " + std::to_string(sb.step));
    }
    if (sa.effective.size() != sb.effective.size())
      throw ContractViolation("trajectory_deviation: architectures differ in depth");
    DeviationPoint p;
    p.step = sa.step;
    for (std::size_t l = 0; l < sa.effective.size(); ++l) {
      if (!sa.effective[l].same_shape(sb.effective[l]))
        throw ContractViolation("trajectory_deviation: layer " + std::to_string(l) + " shapes differ");
      p.per_layer.push_back(frobenius_norm(sa.effective[l] - sb.effective[l]));
      p.total += p.per_layer.back();
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct RankEntry {
  std::size_t step = 0;
  std::size_t merge_id = 0;
  std::vector<double> rank;   // per layer, NaN where skipped
  std::vector<bool> skipped;  // zero matrix, rank undefined
};

struct UpdateRankTrace {
  std::vector<RankEntry> merges;       // rank of each merged delta
  std::vector<RankEntry> cumulative;   // rank of W_eff(t) - W_eff(0) per snapshot
  std::vector<RankEntry> weights;      // rank of W_eff(t) per snapshot
};

namespace detail {

inline RankEntry rank_entry(std::size_t step, std::size_t merge_id, const std::vector<Matrix>& ms) {
  RankEntry e{step, merge_id, {}, {}};
  for (const auto& m : ms) {
    const bool zero = max_abs(m) == 0.0;
    e.skipped.push_back(zero);
    e.rank.push_back(zero ? std::numeric_limits<double>::quiet_NaN() : effective_rank(m));
  }
  return e;
}

}  // namespace detail

inline UpdateRankTrace update_rank_trace(const Trajectory& run) {
  UpdateRankTrace t;
  for (const auto& rec : run.merges) t.merges.push_back(detail::rank_entry(rec.step, rec.merge_id, rec.delta));
  for (const auto& snap : run.snapshots) {
    std::vector<Matrix> change;
    for (std::size_t l = 0; l < snap.effective.size(); ++l)
      change.push_back(snap.effective[l] - run.initial_effective[l]);
    t.cumulative.push_back(detail::rank_entry(snap.step, snap.merge_id, change));
    t.weights.push_back(detail::rank_entry(snap.step, snap.merge_id, snap.effective));
  }
  return t;
}

}  // namespace lte
