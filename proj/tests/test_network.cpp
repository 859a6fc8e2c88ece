#include <gtest/gtest.h>

#include <cmath>

#include "lte/init.hpp"
#include "lte/network.hpp"

using namespace lte;

namespace {

Matrix randn(std::size_t r, std::size_t c, std::uint64_t seed) {
  RandomSource rng(seed);
  return gaussian_matrix(r, c, rng);
}

LoraLinear random_layer(std::size_t m, std::size_t n, std::size_t heads, std::size_t r, std::uint64_t seed,
                        bool zero_heads = false) {
  LoraLinear layer(randn(m, n, seed), heads, r, 2.0);
  if (!zero_heads)
    for (std::size_t h = 0; h < heads; ++h)
      layer.set_head(h, {randn(r, n, seed + 10 + h), randn(m, r, seed + 20 + h)});
  return layer;
}

// Entries scaled by 1 / sqrt(fan-in) so logits stay O(1) and no gradient
// entry is driven toward zero by a saturated softmax.
LoraLinear scaled_layer(std::size_t m, std::size_t n, std::size_t heads, std::size_t r, std::uint64_t seed) {
  LoraLinear layer = random_layer(m, n, heads, r, seed);
  layer.weight() *= 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t h = 0; h < heads; ++h) {
    layer.head(h).A *= 1.0 / std::sqrt(static_cast<double>(n));
    layer.head(h).B *= 1.0 / std::sqrt(static_cast<double>(r));
  }
  return layer;
}

std::vector<ForwardMode> all_modes(std::size_t heads) {
  std::vector<ForwardMode> modes{ForwardMode::full_weights(), ForwardMode::multi_head()};
  for (std::size_t h = 0; h < heads; ++h) {
    modes.push_back(ForwardMode::single_head(h));
    modes.push_back(ForwardMode::worker_view(h));
  }
  return modes;
}

}  // namespace

TEST(Network, RejectsBrokenChains) {
  EXPECT_THROW(Network({random_layer(3, 4, 1, 1, 1), random_layer(2, 4, 1, 1, 2)}, {Activation::Identity},
                       LossKind::MeanSquaredError),
               ContractViolation);
  EXPECT_THROW(Network({random_layer(3, 4, 1, 1, 1)}, {Activation::ReLU}, LossKind::MeanSquaredError),
               ContractViolation);
}

TEST(Forward, SingleLayerMatchesLayerOp) {
  const LoraLinear layer = random_layer(4, 3, 2, 2, 5);
  const Network net({layer}, {}, LossKind::MeanSquaredError);
  const Matrix x = randn(3, 6, 6);
  for (const auto& mode : all_modes(2)) EXPECT_EQ(forward(net, x, mode).outputs, layer_forward(layer, mode, x));
}

TEST(Forward, TwoLayerLinearZeroHeads) {
  const LoraLinear l1 = random_layer(5, 3, 2, 2, 7, true), l2 = random_layer(4, 5, 2, 2, 8, true);
  const Network net({l1, l2}, {Activation::Identity}, LossKind::MeanSquaredError);
  const Matrix x = randn(3, 4, 9);
  const Matrix expected = matmul(l2.weight(), matmul(l1.weight(), x));
  for (const auto& mode : all_modes(2)) EXPECT_LE(max_abs_diff(forward(net, x, mode).outputs, expected), 1e-13);
}

TEST(Forward, ReluHiddenIsNonNegative) {
  const Network net({random_layer(6, 3, 1, 1, 10), random_layer(2, 6, 1, 1, 11)}, {Activation::ReLU},
                    LossKind::MeanSquaredError);
  const auto fwd = forward(net, randn(3, 8, 12), ForwardMode::single_head(0));
  for (double v : fwd.cache.layer_inputs[1].values()) EXPECT_GE(v, 0.0);
}

TEST(Forward, ModeConsistencyWithZeroHeads) {
  const Network net({random_layer(5, 4, 3, 2, 13, true), random_layer(2, 5, 3, 2, 14, true)}, {Activation::ReLU},
                    LossKind::MeanSquaredError);
  Batch batch{randn(4, 7, 15), randn(2, 7, 16)};
  const auto ref = loss_and_grad(net, batch, ForwardMode::full_weights());
  for (const auto& mode : all_modes(3)) {
    const auto g = loss_and_grad(net, batch, mode);
    EXPECT_EQ(g.loss, ref.loss);
    for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(*g.grads[l].dW, *ref.grads[l].dW);
  }
}

TEST(Loss, ZeroWhenOutputsEqualTargets) {
  const Network net({random_layer(3, 3, 1, 1, 17)}, {}, LossKind::MeanSquaredError);
  const Matrix x = randn(3, 5, 18);
  Batch batch{x, forward(net, x, ForwardMode::single_head(0)).outputs};
  const auto g = loss_and_grad(net, batch, ForwardMode::single_head(0));
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_EQ(max_abs(*g.grads[0].dW), 0.0);
  EXPECT_EQ(max_abs(g.grads[0].heads[0]->dA), 0.0);
}

TEST(Loss, ScalarLinearHandFormula) {
  const double w = 1.5, x = 2.0, y = 1.0;
  const Network net({LoraLinear(Matrix::from_rows({{w}}), 1, 1, 1.0)}, {}, LossKind::MeanSquaredError);
  Batch batch{Matrix::from_rows({{x}}), Matrix::from_rows({{y}})};
  const auto g = loss_and_grad(net, batch, ForwardMode::full_weights());
  EXPECT_DOUBLE_EQ(g.loss, 0.5 * (w * x - y) * (w * x - y));
  EXPECT_DOUBLE_EQ((*g.grads[0].dW)(0, 0), (w * x - y) * x);
}

TEST(Loss, CrossEntropyHandValue) {
  // Two classes with logits (0, log 3): p = (1/4, 3/4).
  const Network net({LoraLinear(Matrix::from_rows({{0.0}, {std::log(3.0)}}), 1, 1, 1.0)}, {},
                    LossKind::SoftmaxCrossEntropy);
  Batch batch{Matrix::from_rows({{1.0}}), std::vector<std::size_t>{1}};
  const auto g = loss_and_grad(net, batch, ForwardMode::full_weights());
  EXPECT_NEAR(g.loss, -std::log(0.75), 1e-15);
  EXPECT_NEAR((*g.grads[0].dW)(0, 0), 0.25, 1e-15);
  EXPECT_NEAR((*g.grads[0].dW)(1, 0), -0.25, 1e-15);
}

TEST(Loss, InvalidTargets) {
  const Network mse({random_layer(2, 2, 1, 1, 19)}, {}, LossKind::MeanSquaredError);
  Batch labels{randn(2, 3, 20), std::vector<std::size_t>{0, 1, 0}};
  EXPECT_THROW(loss_and_grad(mse, labels, ForwardMode::full_weights()), ContractViolation);
  Batch wrong_shape{randn(2, 3, 20), randn(3, 3, 21)};
  EXPECT_THROW(loss_and_grad(mse, wrong_shape, ForwardMode::full_weights()), ContractViolation);
  const Network ce({random_layer(2, 2, 1, 1, 19)}, {}, LossKind::SoftmaxCrossEntropy);
  Batch bad_label{randn(2, 3, 20), std::vector<std::size_t>{0, 2, 0}};
  EXPECT_THROW(loss_and_grad(ce, bad_label, ForwardMode::full_weights()), ContractViolation);
}

TEST(Loss, NonNegativeOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Network mse({random_layer(3, 4, 2, 1, seed)}, {}, LossKind::MeanSquaredError);
    Batch b{randn(4, 5, seed + 100), randn(3, 5, seed + 200)};
    EXPECT_GE(loss_value(mse, b, ForwardMode::multi_head()), 0.0);
    const Network ce({random_layer(3, 4, 2, 1, seed)}, {}, LossKind::SoftmaxCrossEntropy);
    Batch c{randn(4, 5, seed + 100), std::vector<std::size_t>{0, 1, 2, 0, 1}};
    EXPECT_GT(loss_value(ce, c, ForwardMode::multi_head()), 0.0);
  }
}

TEST(FdCheck, PureLinearMse) {
  const Network net({random_layer(4, 5, 2, 2, 30), random_layer(3, 4, 2, 2, 31)}, {Activation::Identity},
                    LossKind::MeanSquaredError);
  Batch batch{randn(5, 6, 32), randn(3, 6, 33)};
  for (const auto& mode : all_modes(2)) {
    const auto rep = fd_check(net, batch, mode, 1e-6, RandomSource(34));
    EXPECT_GE(rep.probes, 32u);
    EXPECT_LE(rep.max_error, 1e-8);
  }
}

TEST(FdCheck, ReluAwayFromKinks) {
  const Network net({scaled_layer(6, 4, 2, 2, 40), scaled_layer(3, 6, 2, 2, 41)}, {Activation::ReLU},
                    LossKind::SoftmaxCrossEntropy);
  Matrix x = randn(4, 5, 42);
  // Keep every hidden pre-activation at least 1e-3 away from zero so the
  // step never crosses a kink.
  std::size_t checked = 0;
  for (const auto& mode : all_modes(2)) {
    const auto z = forward(net, x, mode).cache.pre_activations[0];
    bool safe = true;
    for (double v : z.values()) safe = safe && std::abs(v) > 1e-3;
    if (!safe) continue;
    ++checked;
    Batch batch{x, std::vector<std::size_t>{0, 1, 2, 1, 0}};
    EXPECT_LE(fd_check(net, batch, mode, 1e-6, RandomSource(43)).max_error, 1e-5);
  }
  EXPECT_GT(checked, 3u);
}

TEST(FdCheck, ZeroLossIsAbsolute) {
  const Network net({random_layer(3, 3, 1, 1, 50)}, {}, LossKind::MeanSquaredError);
  const Matrix x = randn(3, 4, 51);
  Batch batch{x, forward(net, x, ForwardMode::single_head(0)).outputs};
  const auto rep = fd_check(net, batch, ForwardMode::single_head(0), 1e-6, RandomSource(52));
  EXPECT_TRUE(rep.absolute);
  EXPECT_LE(rep.max_error, 1e-10);
}

TEST(FdCheck, WorkerViewWithCorrection) {
  const Network net({random_layer(4, 3, 2, 1, 60), random_layer(2, 4, 2, 1, 61)}, {Activation::Identity},
                    LossKind::MeanSquaredError);
  std::vector<Matrix> v{randn(4, 3, 62), randn(2, 4, 63)};
  Batch batch{randn(3, 5, 64), randn(2, 5, 65)};
  const auto rep = fd_check(net, batch, ForwardMode::worker_view(1), 1e-6, RandomSource(66), 32, v);
  EXPECT_LE(rep.max_error, 1e-8);
}

TEST(FdCheck, RelativeErrorDefinition) {
  EXPECT_EQ(gradient_relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1.0, 3.0), 0.5);
}
