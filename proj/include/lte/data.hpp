#pragma once

// Synthetic least-squares regression with a controlled-rank solution:
// targets y = W* x with x ~ N(0, I), noise-free.

#include <cstddef>
#include <string>
#include <vector>

#include "lte/error.hpp"
#include "lte/init.hpp"
#include "lte/linalg.hpp"
#include "lte/matrix.hpp"
#include "lte/network.hpp"
#include "lte/random.hpp"

namespace lte {

struct LeastSquaresTask {
  Matrix target;  // W*, m x n
  std::size_t rank = 0;
  std::vector<double> spectrum;  // the rank nonzero singular values of W*, descending

  std::size_t out_features() const noexcept { return target.rows(); }
  std::size_t in_features() const noexcept { return target.cols(); }
};

/// W* = U_k diag(sigma) V_k^T with random orthonormal U_k, V_k and sigma drawn
/// uniformly from [0.5, 2].
inline LeastSquaresTask gen_least_squares(std::size_t m, std::size_t n, std::size_t target_rank,
                                          RandomSource& rng) {
  if (target_rank < 1 || target_rank > std::min(m, n)) {
    throw ContractViolation("gen_least_squares: target_rank " + std::to_string(target_rank) +
                            " must be in [1, min(m, n)]");
  }
  Matrix u = qr(gaussian_matrix(m, target_rank, rng)).Q;
  Matrix v = qr(gaussian_matrix(n, target_rank, rng)).Q;
  std::vector<double> sigma(target_rank);
  for (auto& s : sigma) s = rng.uniform(0.5, 2.0);
  std::sort(sigma.rbegin(), sigma.rend());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < target_rank; ++k) u(i, k) *= sigma[k];
  return {matmul_nt(u, v), target_rank, std::move(sigma)};
}

/// Columns i.i.d. N(0, I); targets W* X exactly.
inline Batch sample_batch(const LeastSquaresTask& task, std::size_t batch_size, RandomSource& rng) {
  detail::require(batch_size >= 1, "sample_batch: batch_size must be >= 1");
  Batch b;
  b.inputs = gaussian_matrix(task.in_features(), batch_size, rng);
  b.targets = matmul(task.target, b.inputs);
  return b;
}

/// Expected MSE (with the 1/2 convention) of a linear map M under x ~ N(0, I):
/// E ||(M - W*) x||^2 / 2 = ||M - W*||_F^2 / 2.
inline double population_loss(const LeastSquaresTask& task, const Matrix& linear_map) {
  detail::require(linear_map.same_shape(task.target), "population_loss: shape mismatch");
  const double d = frobenius_norm(linear_map - task.target);
  return 0.5 * d * d;
}

}  // namespace lte
