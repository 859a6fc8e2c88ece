#pragma once

// Thin QR (modified Gram-Schmidt with one re-orthogonalization pass) and a
// one-sided Jacobi SVD. Both target the small matrices this library works
// with; precision matters more than speed here.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "lte/error.hpp"
#include "lte/matrix.hpp"

namespace lte {

template <class T>
struct QrResult {
  BasicMatrix<T> Q;  // m x n, orthonormal columns
  BasicMatrix<T> R;  // n x n, upper triangular with non-negative diagonal
};

/// Thin QR of an m x n matrix with m >= n. Rank-deficient columns are
/// completed with an orthonormal direction and get R(j, j) = 0.
template <class T>
QrResult<T> qr(const BasicMatrix<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  detail::require(m >= n && n > 0, "qr: requires rows >= cols > 0");
  BasicMatrix<T> q(m, n);
  BasicMatrix<T> r(n, n);
  std::vector<T> v(m);
  const T scale = std::max(max_abs(a), std::numeric_limits<T>::min());
  std::size_t fill_basis = 0;

  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) v[i] = a(i, j);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        T dot{};
        for (std::size_t i = 0; i < m; ++i) dot += q(i, k) * v[i];
        r(k, j) += dot;
        for (std::size_t i = 0; i < m; ++i) v[i] -= dot * q(i, k);
      }
    }
    T norm{};
    for (T x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm <= scale * std::numeric_limits<T>::epsilon() * static_cast<T>(m)) {
      // Dependent column: substitute a unit vector orthogonal to the basis so far.
      r(j, j) = T{};
      for (;;) {
        detail::require(fill_basis < m, "qr: cannot complete basis");
        std::fill(v.begin(), v.end(), T{});
        v[fill_basis++] = T{1};
        for (int pass = 0; pass < 2; ++pass) {
          for (std::size_t k = 0; k < j; ++k) {
            T dot{};
            for (std::size_t i = 0; i < m; ++i) dot += q(i, k) * v[i];
            for (std::size_t i = 0; i < m; ++i) v[i] -= dot * q(i, k);
          }
        }
        norm = T{};
        for (T x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > T{0.5}) break;
      }
    } else {
      r(j, j) = norm;
    }
    for (std::size_t i = 0; i < m; ++i) q(i, j) = v[i] / norm;
  }
  return {std::move(q), std::move(r)};
}

template <class T>
struct SvdResult {
  BasicMatrix<T> U;          // m x k, orthonormal columns
  std::vector<T> singular;   // k values, descending, non-negative
  BasicMatrix<T> Vt;         // k x n, orthonormal rows
};

namespace detail {

// Hestenes one-sided Jacobi on a tall matrix (m >= n).
template <class T>
SvdResult<T> jacobi_svd_tall(const BasicMatrix<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  // Column-major working copies keep the inner rotations contiguous.
  std::vector<T> g(m * n), v(n * n, T{});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) g[j * m + i] = a(i, j);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = T{1};

  const T eps = std::numeric_limits<T>::epsilon();
  // Columns below eps * ||A||_F are rounding noise; rotating them against
  // each other never settles, so they count as converged.
  T fro2{};
  for (T x : g) fro2 += x * x;
  const T negligible = eps * eps * fro2;
  // The computed inner product carries O(m eps) relative rounding error, so a
  // tighter threshold can be unreachable.
  const T tol = eps * static_cast<T>(m);
  constexpr int kMaxSweeps = 80;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      T* gp = &g[p * m];
      for (std::size_t q = p + 1; q < n; ++q) {
        T* gq = &g[q * m];
        T alpha{}, beta{}, gamma{};
        for (std::size_t i = 0; i < m; ++i) {
          alpha += gp[i] * gp[i];
          beta += gq[i] * gq[i];
          gamma += gp[i] * gq[i];
        }
        if (gamma == T{} || alpha <= negligible || beta <= negligible ||
            std::abs(gamma) <= tol * std::sqrt(alpha * beta))
          continue;
        converged = false;
        const T zeta = (beta - alpha) / (T{2} * gamma);
        const T t = std::copysign(T{1}, zeta) / (std::abs(zeta) + std::sqrt(T{1} + zeta * zeta));
        const T c = T{1} / std::sqrt(T{1} + t * t);
        const T s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const T x = gp[i], y = gq[i];
          gp[i] = c * x - s * y;
          gq[i] = s * x + c * y;
        }
        T* vp = &v[p * n];
        T* vq = &v[q * n];
        for (std::size_t i = 0; i < n; ++i) {
          const T x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }
  if (!converged) throw NumericError("svd: one-sided Jacobi did not converge");

  std::vector<T> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    T acc{};
    for (std::size_t i = 0; i < m; ++i) acc += g[j * m + i] * g[j * m + i];
    sigma[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult<T> out{BasicMatrix<T>(m, n), std::vector<T>(n), BasicMatrix<T>(n, n)};
  const T tiny = (n == 0 ? T{} : sigma[order[0]]) * eps * static_cast<T>(std::max(m, n));
  // Columns are taken in descending sigma order and re-orthogonalized against
  // the ones before them; rounding noise in small-sigma columns would
  // otherwise leave U visibly non-orthogonal. Columns that do not survive
  // (zero or negligible sigma) are completed from the standard basis.
  std::vector<T> w(m);
  auto orthogonalize = [&](std::size_t k) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < k; ++c) {
        T dot{};
        for (std::size_t i = 0; i < m; ++i) dot += out.U(i, c) * w[i];
        for (std::size_t i = 0; i < m; ++i) w[i] -= dot * out.U(i, c);
      }
    }
    T norm{};
    for (T x : w) norm += x * x;
    return std::sqrt(norm);
  };
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) out.Vt(k, i) = v[j * n + i];
    T norm{};
    if (sigma[j] > tiny && sigma[j] > T{}) {
      for (std::size_t i = 0; i < m; ++i) w[i] = g[j * m + i] / sigma[j];
      norm = orthogonalize(k);
    }
    if (!(norm > T{0.5})) {
      // Pick the standard basis vector with the largest residual.
      T best{};
      std::vector<T> keep(m);
      for (std::size_t e = 0; e < m; ++e) {
        std::fill(w.begin(), w.end(), T{});
        w[e] = T{1};
        const T r = orthogonalize(k);
        if (r > best) {
          best = r;
          keep = w;
        }
      }
      w = keep;
      norm = best;
    }
    for (std::size_t i = 0; i < m; ++i) out.U(i, k) = w[i] / norm;
  }
  return out;
}

}  // namespace detail

/// Thin SVD: m = U diag(singular) Vt with k = min(rows, cols).
template <class T>
SvdResult<T> svd(const BasicMatrix<T>& m) {
  detail::require(m.rows() > 0 && m.cols() > 0, "svd: matrix must be nonempty");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m);
  auto t = detail::jacobi_svd_tall(transpose(m));
  return {transpose(t.Vt), std::move(t.singular), transpose(t.U)};
}

template <class T>
std::vector<T> singular_values(const BasicMatrix<T>& m) {
  return svd(m).singular;
}

/// Number of singular values above rel_tol * sigma_max.
template <class T>
std::size_t numeric_rank(const BasicMatrix<T>& m, T rel_tol) {
  const auto s = singular_values(m);
  if (s.empty() || s.front() == T{}) return 0;
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [&](T v) { return v > rel_tol * s.front(); }));
}

}  // namespace lte
