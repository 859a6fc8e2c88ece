#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "lte/error.hpp"
#include "lte/linalg.hpp"
#include "lte/matrix.hpp"
#include "lte/random.hpp"

namespace lte {

enum class InitKind { Kaiming, Xavier, SemiOrthogonal };

struct InitScheme {
  InitKind kind = InitKind::SemiOrthogonal;
  double gain = 1.0;
};

inline std::string_view to_string(InitKind k) {
  switch (k) {
    case InitKind::Kaiming: return "kaiming";
    case InitKind::Xavier: return "xavier";
    case InitKind::SemiOrthogonal: return "semi_orthogonal";
  }
  return "?";
}

inline InitKind parse_init_kind(std::string_view s) {
  if (s == "kaiming") return InitKind::Kaiming;
  if (s == "xavier") return InitKind::Xavier;
  if (s == "semi_orthogonal") return InitKind::SemiOrthogonal;
  throw ContractViolation("unknown init scheme '" + std::string(s) + "'");
}

/// rows plays d_out and cols plays d_in.
///   Kaiming        N(0, gain^2 * 2 / cols)
///   Xavier         U(-a, a), a = gain * sqrt(6 / (rows + cols))
///   SemiOrthogonal gain * sqrt(rows / cols) * Q, Q with orthonormal rows
///                  (rows <= cols) or columns (rows > cols)
inline Matrix init_matrix(std::size_t rows, std::size_t cols, InitScheme scheme, RandomSource& rng) {
  detail::require(rows >= 1 && cols >= 1, "init_matrix: rows and cols must be positive");
  Matrix out(rows, cols);
  switch (scheme.kind) {
    case InitKind::Kaiming: {
      const double sd = scheme.gain * std::sqrt(2.0 / static_cast<double>(cols));
      for (auto& v : out.values()) v = sd * rng.normal();
      break;
    }
    case InitKind::Xavier: {
      const double a = scheme.gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (auto& v : out.values()) v = rng.uniform(-a, a);
      break;
    }
    case InitKind::SemiOrthogonal: {
      const std::size_t tall = std::max(rows, cols), wide = std::min(rows, cols);
      Matrix g(tall, wide);
      for (auto& v : g.values()) v = rng.normal();
      Matrix q = qr(g).Q;  // diag(R) >= 0 by construction, so the sign is fixed
      if (rows < cols) q = transpose(q);
      q *= scheme.gain * std::sqrt(static_cast<double>(rows) / static_cast<double>(cols));
      out = std::move(q);
      break;
    }
  }
  return out;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, RandomSource& rng) {
  Matrix out(rows, cols);
  for (auto& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace lte
