#pragma once

#include <cmath>

#include "lte/error.hpp"
#include "lte/matrix.hpp"

namespace lte {

/// Per-row absmax symmetric uniform quantization, emulated in double.
///
/// Row i is mapped onto the integer levels k in [-L, L], L = 2^(bits-1) - 1,
/// with step absmax_i / L, then rescaled. The row's absmax entry is reproduced
/// exactly, which keeps the step unchanged on a second pass and makes the
/// operation idempotent. All-zero rows pass through.
inline Matrix quantize_emulate(const Matrix& m, int bits) {
  detail::require(bits >= 2 && bits <= 8, "quantize_emulate: bits must be in [2, 8]");
  const double levels = static_cast<double>((1 << (bits - 1)) - 1);
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    auto dst = out.row(i);
    double absmax = 0.0;
    for (double v : src) absmax = std::max(absmax, std::abs(v));
    if (absmax == 0.0) continue;
    for (std::size_t j = 0; j < src.size(); ++j) {
      const double k = std::round(src[j] * levels / absmax);
      if (std::abs(k) >= levels) {
        dst[j] = std::copysign(absmax, k);
      } else {
        dst[j] = k * absmax / levels;
      }
    }
  }
  return out;
}

/// Largest possible per-entry error of quantize_emulate for a row with the
/// given absmax (half a quantization step).
inline double quantization_error_bound(double row_absmax, int bits) {
  const double levels = static_cast<double>((1 << (bits - 1)) - 1);
  return row_absmax / levels / 2.0;
}

}  // namespace lte
