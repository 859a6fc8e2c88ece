#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lte/analysis.hpp"
#include "lte/run_analysis.hpp"

using namespace lte;

namespace {

Matrix randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  RandomSource rng(seed);
  return gaussian_matrix(r, c, rng);
}

Matrix diag(std::initializer_list<double> d) {
  std::vector<double> v(d);
  return Matrix::diagonal(std::span<const double>(v));
}

}  // namespace

TEST(EffectiveRank, Examples) {
  EXPECT_NEAR(effective_rank(Matrix::identity(4)), 4.0, 1e-12);
  EXPECT_NEAR(effective_rank(diag({1, 1, 0, 0})), 2.0, 1e-12);
  EXPECT_NEAR(effective_rank(diag({2, 1, 1})), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_THROW(effective_rank(Matrix(3, 3)), DomainError);
}

TEST(EffectiveRank, ScaleInvariantAndBounded) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RandomSource shapes(seed);
    const std::size_t m = 1 + shapes.below(12), n = 1 + shapes.below(12);
    const Matrix a = randn(m, n, seed + 100);
    const double rho = effective_rank(a);
    EXPECT_GE(rho, 1.0 - 1e-12);
    EXPECT_LE(rho, static_cast<double>(std::min(m, n)) + 1e-12);
    for (double c : {-3.0, 1e-5, 250.0}) {
      Matrix scaled = a;
      scaled *= c;
      EXPECT_NEAR(effective_rank(scaled), rho, 1e-12);
    }
  }
}

TEST(Grassman, Examples) {
  const Matrix e1 = Matrix::from_rows({{1}, {0}}), e2 = Matrix::from_rows({{0}, {1}});
  EXPECT_EQ(grassman_distance(e1, e1, 1), 0.0);
  EXPECT_NEAR(grassman_distance(e1, e2, 1), std::numbers::pi / 2, 1e-12);
  const double t = std::numbers::pi / 6;
  const Matrix rotated = Matrix::from_rows({{std::cos(t)}, {std::sin(t)}});
  EXPECT_NEAR(grassman_distance(e1, rotated, 1), t, 1e-12);
}

TEST(Grassman, RankTooSmall) {
  const Matrix rank1 = matmul(randn(4, 1, 1), randn(1, 3, 2));
  EXPECT_THROW(grassman_distance(rank1, randn(4, 3, 3), 2), ContractViolation);
}

TEST(Grassman, SymmetricAndZeroOnSameSubspace) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix p = randn(8, 3, seed), q = randn(8, 3, seed + 50);
    const double d = grassman_distance(p, q, 2);
    EXPECT_NEAR(d, grassman_distance(q, p, 2), 1e-10);
    EXPECT_GT(d, 0.0);
    EXPECT_LE(d, std::sqrt(2.0) * std::numbers::pi / 2 + 1e-12);
    // Same column space, different basis.
    const Matrix mixed = matmul(p, randn(3, 3, seed + 99));
    EXPECT_EQ(grassman_distance(p, mixed, 3), 0.0);
  }
}

TEST(HeadAlignment, DuplicatedHeads) {
  LoraLinear layer(Matrix(6, 5), 3, 2, 2.0);
  const LoraHead head{randn(2, 5, 1), randn(6, 2, 2)};
  for (std::size_t h = 0; h < 3; ++h) layer.set_head(h, head);
  const auto rep = head_alignment(layer);
  EXPECT_NEAR(rep.mean_cosine, 1.0, 1e-12);
  EXPECT_EQ(rep.mean_grassman, 0.0);
  EXPECT_EQ(rep.grassman_paper_normalized, 0.0);
}

TEST(HeadAlignment, DisjointSupport) {
  LoraLinear layer(Matrix(4, 4), 2, 1, 1.0);
  layer.set_head(0, {Matrix::from_rows({{1, 0, 0, 0}}), Matrix::from_rows({{1}, {0}, {0}, {0}})});
  layer.set_head(1, {Matrix::from_rows({{0, 0, 1, 0}}), Matrix::from_rows({{0}, {0}, {1}, {0}})});
  const auto rep = head_alignment(layer);
  EXPECT_EQ(rep.cosine(0, 1), 0.0);
  EXPECT_EQ(rep.cosine(0, 0), 1.0);
  EXPECT_NEAR(rep.grassman(0, 1), std::numbers::pi / 2, 1e-12);
}

TEST(HeadAlignment, PaperNormalizationVersusPairMean) {
  LoraLinear layer(Matrix(8, 8), 4, 2, 2.0);
  for (std::size_t h = 0; h < 4; ++h) layer.set_head(h, {randn(2, 8, 10 + h), randn(8, 2, 20 + h)});
  const auto rep = head_alignment(layer);
  double ordered = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) ordered += rep.grassman(i, j);
  EXPECT_NEAR(rep.grassman_paper_normalized, ordered / 8.0, 1e-12);
  EXPECT_NEAR(rep.mean_grassman, ordered / 2.0 / 6.0, 1e-12);
  for (double c : rep.cosine.values()) {
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(HeadAlignment, ZeroProductExcluded) {
  LoraLinear layer(Matrix(5, 5), 3, 1, 1.0);
  for (std::size_t h = 0; h < 2; ++h) layer.set_head(h, {randn(1, 5, 30 + h), randn(5, 1, 40 + h)});
  const auto rep = head_alignment(layer);
  EXPECT_TRUE(rep.zero_product[2]);
  EXPECT_FALSE(rep.zero_product[0]);
  EXPECT_NEAR(rep.mean_grassman, rep.grassman(0, 1), 1e-15);
  EXPECT_NEAR(rep.mean_cosine, rep.cosine(0, 1), 1e-15);
}

// Monte-Carlo bound: independent random rank-2 heads on 16 x 16 are nearly
// orthogonal as vectors.
TEST(HeadAlignment, RandomHeadsAreWeaklyAligned) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    LoraLinear layer(Matrix(16, 16), 4, 2, 2.0);
    for (std::size_t h = 0; h < 4; ++h)
      layer.set_head(h, {randn(2, 16, seed * 10 + h), randn(16, 2, seed * 10 + 5 + h)});
    worst = std::max(worst, std::abs(head_alignment(layer).mean_cosine));
  }
  EXPECT_LT(worst, 0.3);
}

TEST(EffectiveGradient, BZeroIsolatesTerm) {
  const Matrix a = randn(2, 4, 1), g = randn(3, 4, 2), b(3, 2);
  Matrix expected = matmul(matmul_nt(g, a), a);
  expected *= 1.5;
  EXPECT_LE(max_abs_diff(effective_gradient(a, b, g, 1.5, 0.1, EffectiveUpdateSign::Additive), expected), 1e-14);
  expected *= -1.0;
  EXPECT_LE(max_abs_diff(effective_gradient(a, b, g, 1.5, 0.1, EffectiveUpdateSign::Boxed), expected), 1e-14);
}

TEST(EffectiveGradient, ZeroScale) {
  EXPECT_EQ(max_abs(effective_gradient(randn(2, 3, 1), randn(4, 2, 2), randn(4, 3, 3), 0.0, 0.1)), 0.0);
}

TEST(EffectiveGradient, ScalarExpansion) {
  const double a = 0.8, b = -0.6, g = 1.3, s = 2.0, eta = 0.05;
  const double expected = s * (b * b * g + g * a * a) - s * s * eta * g * (b * a) * g;
  const double got = effective_gradient(Matrix::from_rows({{a}}), Matrix::from_rows({{b}}),
                                        Matrix::from_rows({{g}}), s, eta)(0, 0);
  EXPECT_NEAR(got, expected, 1e-15);
}

TEST(VerifyEffectiveUpdate, ZeroFactors) {
  const Batch batch{randn(3, 8, 1), randn(3, 8, 2)};
  const auto rep = verify_effective_update(randn(3, 3, 3), Matrix(1, 3), Matrix(3, 1), batch, 1.0);
  for (double v : rep.actual_norm) EXPECT_EQ(v, 0.0);
  for (const auto& c : rep.conventions)
    for (double v : c.full) EXPECT_EQ(v, 0.0);
}

TEST(VerifyEffectiveUpdate, OrderScalingOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t m = 6, n = 5, r = 2;
    const Batch batch{randn(n, 16, seed + 1), randn(m, 16, seed + 2)};
    const auto rep = verify_effective_update(randn(m, n, seed + 3), randn(r, n, seed + 4), randn(m, r, seed + 5),
                                             batch, 0.5);
    EXPECT_EQ(rep.confirmed, EffectiveUpdateSign::Additive);
    for (double ratio : rep.first_order_ratios(EffectiveUpdateSign::Additive)) {
      EXPECT_GE(ratio, 50.0);
      EXPECT_LE(ratio, 200.0);
    }
    // The wrong conventions leave a first-order residual.
    const auto& boxed = rep.residual(EffectiveUpdateSign::Boxed).first_order;
    EXPECT_GT(boxed.back(), 1e3 * rep.residual(EffectiveUpdateSign::Additive).first_order.back());
  }
}

TEST(VerifyEffectiveUpdate, ScalarCaseIsExact) {
  const Batch batch{Matrix::from_rows({{0.7, -1.1, 0.4}}), Matrix::from_rows({{0.2, 0.5, -0.9}})};
  const auto rep = verify_effective_update(Matrix::from_rows({{0.3}}), Matrix::from_rows({{0.9}}),
                                           Matrix::from_rows({{-0.4}}), batch, 1.7);
  for (double v : rep.residual(EffectiveUpdateSign::Additive).full) EXPECT_LE(v, 1e-12);
}

namespace {

RunConfig tiny(Method method, std::size_t period) {
  RunConfig cfg;
  cfg.method = method;
  cfg.m = cfg.n = cfg.target_rank = 8;
  cfg.heads = method == Method::Lora ? 1 : 2;
  cfg.rank = 2;
  cfg.alpha = 2.0;
  cfg.policy.period = period;
  cfg.optim.lr = 0.1;
  cfg.batch_size = 16;
  cfg.steps = 50;
  cfg.snapshot_interval = 10;
  return cfg;
}

}  // namespace

TEST(TrajectoryDeviation, SelfIsZeroAndMismatchThrows) {
  const auto a = run(tiny(Method::Lte, 5));
  for (const auto& p : trajectory_deviation(a, a)) EXPECT_EQ(p.total, 0.0);
  RunConfig other = tiny(Method::Lte, 5);
  other.snapshot_interval = 5;
  EXPECT_THROW(trajectory_deviation(a, run(other)), ContractViolation);
}

TEST(UpdateRankTrace, SingleHeadNoMergeIsLowRank) {
  RunConfig cfg = tiny(Method::Lora, 0);
  cfg.rank = 4;
  cfg.steps = 200;
  const auto trace = update_rank_trace(run(cfg));
  EXPECT_TRUE(trace.merges.empty());
  for (const auto& e : trace.cumulative) EXPECT_LE(e.rank[0], 4.1);
}

TEST(UpdateRankTrace, MergesRecordedAndZeroFlagged) {
  RunConfig cfg = tiny(Method::Lte, 10);
  const auto t = run(cfg);
  const auto trace = update_rank_trace(t);
  EXPECT_EQ(trace.merges.size(), 5u);
  for (const auto& e : trace.merges) EXPECT_FALSE(e.skipped[0]);
  // Default init has B = 0, so no update can have happened before the
  // first step; the weights snapshot is well defined throughout.
  for (const auto& e : trace.weights) EXPECT_GE(e.rank[0], 1.0);
}

TEST(UpdateRankTrace, IdentityWeightHasFullRank) {
  EXPECT_NEAR(effective_rank(Matrix::identity(7)), 7.0, 1e-12);
}
