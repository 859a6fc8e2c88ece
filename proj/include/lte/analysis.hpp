#pragma once

// Measurement toolkit: effective rank, Grassmann distance between subspaces,
// head alignment, and the effective-update-rule check for a single LoRA step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lte/error.hpp"
#include "lte/layers.hpp"
#include "lte/linalg.hpp"
#include "lte/matrix.hpp"
#include "lte/network.hpp"

namespace lte {

/// exp of the Shannon entropy of the normalized singular values.
inline double effective_rank(const Matrix& m) {
  const auto sigma = singular_values(m);
  double total = 0.0;
  for (double s : sigma) total += s;
  if (!(total > 0.0)) throw DomainError("effective_rank: undefined for the zero matrix");
  double entropy = 0.0;
  for (double s : sigma) {
    const double p = s / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

namespace detail {

constexpr double kGrassmanClamp = 1e-10;

/// First k left singular vectors of m.
inline Matrix leading_left_basis(const Matrix& m, std::size_t k) {
  return column_block(svd(m).U, 0, k);
}

/// Root-sum-square of principal angles between two orthonormal bases.
inline double grassman_between_bases(const Matrix& u, const Matrix& v) {
  const auto sigma = singular_values(matmul_tn(u, v));
  double acc = 0.0;
  for (double s : sigma) {
    double c = std::clamp(s, 0.0, 1.0);
    if (c >= 1.0 - kGrassmanClamp) c = 1.0;
    const double theta = std::acos(c);
    acc += theta * theta;
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// Grassmann distance between the k-dimensional leading left-singular
/// subspaces of p and q. Cosines within 1e-10 of one count as zero angles.
inline double grassman_distance(const Matrix& p, const Matrix& q, std::size_t k) {
  detail::require(p.rows() == q.rows(), "grassman_distance: p and q must have the same row count");
  detail::require(k >= 1, "grassman_distance: k must be >= 1");
  const auto svd_p = svd(p);
  const auto svd_q = svd(q);
  auto available = [](const std::vector<double>& s) {
    if (s.empty() || s.front() == 0.0) return std::size_t{0};
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [&](double v) { return v > 1e-10 * s.front(); }));
  };
  const std::size_t rank = std::min(available(svd_p.singular), available(svd_q.singular));
  if (k > rank) {
    throw ContractViolation("grassman_distance: k = " + std::to_string(k) + " exceeds available rank " +
                            std::to_string(rank));
  }
  return detail::grassman_between_bases(column_block(svd_p.U, 0, k), column_block(svd_q.U, 0, k));
}

inline double cosine_similarity(const Matrix& a, const Matrix& b) {
  const double na = frobenius_norm(a), nb = frobenius_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(frobenius_dot(a, b) / (na * nb), -1.0, 1.0);
}

struct AlignmentReport {
  std::size_t heads = 0;
  Matrix cosine;     // N x N, unit diagonal
  Matrix grassman;   // N x N, zero diagonal
  double mean_cosine = std::numeric_limits<double>::quiet_NaN();
  /// Plain mean over unordered pairs of non-zero heads.
  double mean_grassman = std::numeric_limits<double>::quiet_NaN();
  /// (1 / 2N) * sum over ordered pairs i != j, the normalization used in the
  /// original LTE analysis.
  double grassman_paper_normalized = std::numeric_limits<double>::quiet_NaN();
  /// Heads whose product B A is zero; excluded from every statistic.
  std::vector<bool> zero_product;
};

/// Pairwise cosine similarity of vectorized B_i A_i products and Grassmann
/// distance between their rank-r leading left subspaces.
inline AlignmentReport head_alignment(const LoraLinear& layer) {
  const std::size_t n = layer.num_heads();
  detail::require(n >= 2, "head_alignment: needs at least two heads");
  AlignmentReport r;
  r.heads = n;
  r.cosine = Matrix::identity(n);
  r.grassman = Matrix(n, n);
  r.zero_product.assign(n, false);

  std::vector<Matrix> products;
  std::vector<Matrix> bases;
  products.reserve(n);
  for (std::size_t h = 0; h < n; ++h) {
    products.push_back(matmul(layer.head(h).B, layer.head(h).A));
    r.zero_product[h] = max_abs(products.back()) == 0.0;
    bases.push_back(r.zero_product[h] ? Matrix{} : detail::leading_left_basis(products.back(), layer.rank()));
  }

  double cos_sum = 0.0, grass_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (r.zero_product[i] || r.zero_product[j]) continue;
      const double c = cosine_similarity(products[i], products[j]);
      const double g = detail::grassman_between_bases(bases[i], bases[j]);
      r.cosine(i, j) = r.cosine(j, i) = c;
      r.grassman(i, j) = r.grassman(j, i) = g;
      cos_sum += c;
      grass_sum += g;
      ++pairs;
    }
  }
  if (pairs > 0) {
    r.mean_cosine = cos_sum / static_cast<double>(pairs);
    r.mean_grassman = grass_sum / static_cast<double>(pairs);
    r.grassman_paper_normalized = 2.0 * grass_sum / (2.0 * static_cast<double>(n));
  }
  return r;
}

/// Arrangements of the two first-order terms of the effective LoRA update.
///   Boxed       s (B B^T g - g A^T A)
///   Derivation  s (g A^T A - B B^T g)
///   Additive    s (B B^T g + g A^T A)
enum class EffectiveUpdateSign { Boxed, Derivation, Additive };

inline std::string_view to_string(EffectiveUpdateSign s) {
  switch (s) {
    case EffectiveUpdateSign::Boxed: return "boxed";
    case EffectiveUpdateSign::Derivation: return "derivation";
    case EffectiveUpdateSign::Additive: return "additive";
  }
  return "?";
}

/// Effective gradient g_hat on B A for one SGD step on (A, B):
///   g_hat = s (first-order pair, per `sign`) - s^2 eta g (B A)^T g
/// so that s (B' A' - B A) = -eta * s * g_hat. `g` is dL/dW_eff (m x n).
inline Matrix effective_gradient(const Matrix& a, const Matrix& b, const Matrix& g, double s, double eta,
                                 EffectiveUpdateSign sign = EffectiveUpdateSign::Additive,
                                 bool include_second_order = true) {
  detail::require(b.cols() == a.rows(), "effective_gradient: B cols must equal A rows");
  detail::require(g.rows() == b.rows() && g.cols() == a.cols(), "effective_gradient: g must be m x n");
  const Matrix bbg = matmul(b, matmul_tn(b, g));  // B B^T g
  const Matrix gaa = matmul(matmul_nt(g, a), a);  // g A^T A
  Matrix out(g.rows(), g.cols());
  switch (sign) {
    case EffectiveUpdateSign::Boxed: out = bbg - gaa; break;
    case EffectiveUpdateSign::Derivation: out = gaa - bbg; break;
    case EffectiveUpdateSign::Additive: out = bbg + gaa; break;
  }
  out *= s;
  if (include_second_order) {
    const Matrix ba = matmul(b, a);
    const Matrix second = matmul(matmul_nt(g, ba), g);  // g (B A)^T g
    out.add_scaled(second, -s * s * eta);
  }
  return out;
}

struct EffectiveUpdateResidual {
  EffectiveUpdateSign sign;
  std::vector<double> first_order;  // ||dW_actual + eta s g_hat_1|| per eta
  std::vector<double> full;         // same with the second-order term
};

struct EffectiveUpdateReport {
  std::vector<double> etas;
  std::vector<double> actual_norm;  // ||dW_actual|| per eta
  std::vector<EffectiveUpdateResidual> conventions;
  EffectiveUpdateSign confirmed = EffectiveUpdateSign::Additive;

  const EffectiveUpdateResidual& residual(EffectiveUpdateSign s) const {
    for (const auto& c : conventions)
      if (c.sign == s) return c;
    throw ContractViolation("EffectiveUpdateReport: missing convention");
  }

  /// residual(eta_i) / residual(eta_{i+1}) of the first-order-only prediction.
  std::vector<double> first_order_ratios(EffectiveUpdateSign s) const {
    const auto& r = residual(s).first_order;
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < r.size(); ++i) out.push_back(r[i] / r[i + 1]);
    return out;
  }
};

/// Take an actual coupled SGD step on (A, B) of a least-squares LoRA layer
/// W + s B A and compare the change of the effective weight against the
/// closed-form prediction under every sign convention. The convention whose
/// full prediction has the smallest total residual is reported as confirmed.
inline EffectiveUpdateReport verify_effective_update(const Matrix& w, const Matrix& a, const Matrix& b,
                                                     const Batch& batch, double s,
                                                     std::vector<double> etas = {1e-2, 1e-3, 1e-4}) {
  detail::require(b.cols() == a.rows(), "verify_effective_update: B cols must equal A rows");
  const std::size_t r = a.rows();
  // The analytic gradients come from the layer's own backward pass.
  LoraLinear layer(w, 1, r, s * static_cast<double>(r));
  layer.set_head(0, {a, b});
  Network net({layer}, {}, LossKind::MeanSquaredError);
  const auto lg = loss_and_grad(net, batch, ForwardMode::single_head(0));
  const Matrix& g = *lg.grads[0].dW;
  const Matrix& da = lg.grads[0].heads[0]->dA;
  const Matrix& db = lg.grads[0].heads[0]->dB;
  const Matrix ba = matmul(b, a);

  EffectiveUpdateReport report;
  report.etas = etas;
  const EffectiveUpdateSign signs[] = {EffectiveUpdateSign::Boxed, EffectiveUpdateSign::Derivation,
                                       EffectiveUpdateSign::Additive};
  for (auto sign : signs) report.conventions.push_back({sign, {}, {}});

  for (double eta : etas) {
    Matrix b_next = b;
    b_next.add_scaled(db, -eta);
    Matrix a_next = a;
    a_next.add_scaled(da, -eta);
    Matrix actual = matmul(b_next, a_next) - ba;
    actual *= s;
    report.actual_norm.push_back(frobenius_norm(actual));
    for (auto& conv : report.conventions) {
      Matrix pred1 = actual;
      pred1.add_scaled(effective_gradient(a, b, g, s, eta, conv.sign, false), eta * s);
      Matrix pred2 = actual;
      pred2.add_scaled(effective_gradient(a, b, g, s, eta, conv.sign, true), eta * s);
      conv.first_order.push_back(frobenius_norm(pred1));
      conv.full.push_back(frobenius_norm(pred2));
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& conv : report.conventions) {
    double total = 0.0;
    for (double v : conv.full) total += v;
    if (total < best) {
      best = total;
      report.confirmed = conv.sign;
    }
  }
  return report;
}

}  // namespace lte
