#pragma once

// LoRA-parameterized linear layers.
//
// A layer holds a base weight W (m x n) and N heads (B_h: m x r, A_h: r x n)
// with scale s = alpha / r. The forward pass comes in four flavours that
// differ only in which heads participate and with what coefficient:
//
//   full weights   W x
//   single head h  W x + s B_h A_h x
//   multi head     W x + (s / N) sum_h B_h A_h x
//   worker view h  W x + (s / N) B_h A_h x          [- (s / N) V x]
//
// The optional V term is the exact-correction matrix of a worker whose head
// has not been reset since the last merge. Inputs are column batches (n x b).

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lte/error.hpp"
#include "lte/init.hpp"
#include "lte/matrix.hpp"
#include "lte/random.hpp"

namespace lte {

template <class T>
struct BasicLoraHead {
  BasicMatrix<T> A;  // r x n
  BasicMatrix<T> B;  // m x r

  std::size_t rank() const noexcept { return A.rows(); }

  template <class U>
  BasicLoraHead<U> cast() const {
    return {A.template cast<U>(), B.template cast<U>()};
  }
};

template <class T>
class BasicLoraLinear {
 public:
  BasicLoraLinear() = default;

  /// Heads start with A = 0 and B = 0; use init_heads() or set A explicitly.
  BasicLoraLinear(BasicMatrix<T> weight, std::size_t heads, std::size_t rank, T alpha)
      : weight_(std::move(weight)), rank_(rank), alpha_(alpha) {
    const std::size_t m = weight_.rows(), n = weight_.cols();
    detail::require(m > 0 && n > 0, "LoraLinear: weight must be nonempty");
    detail::require(rank >= 1 && rank <= std::min(m, n),
                    "LoraLinear: rank must satisfy 1 <= r <= min(m, n)");
    detail::require(alpha > T{}, "LoraLinear: alpha must be positive");
    heads_.resize(heads, BasicLoraHead<T>{BasicMatrix<T>(rank, n), BasicMatrix<T>(m, rank)});
  }

  std::size_t out_features() const noexcept { return weight_.rows(); }
  std::size_t in_features() const noexcept { return weight_.cols(); }
  std::size_t rank() const noexcept { return rank_; }
  std::size_t num_heads() const noexcept { return heads_.size(); }
  T alpha() const noexcept { return alpha_; }
  T scale() const noexcept { return alpha_ / static_cast<T>(rank_); }

  const BasicMatrix<T>& weight() const noexcept { return weight_; }
  BasicMatrix<T>& weight() noexcept { return weight_; }

  const BasicLoraHead<T>& head(std::size_t h) const {
    check_head(h);
    return heads_[h];
  }
  BasicLoraHead<T>& head(std::size_t h) {
    check_head(h);
    return heads_[h];
  }
  const std::vector<BasicLoraHead<T>>& heads() const noexcept { return heads_; }

  /// Replace head h, validating shapes.
  void set_head(std::size_t h, BasicLoraHead<T> head) {
    check_head(h);
    detail::require(head.A.rows() == rank_ && head.A.cols() == in_features(),
                    "LoraLinear::set_head: A must be r x n");
    detail::require(head.B.rows() == out_features() && head.B.cols() == rank_,
                    "LoraLinear::set_head: B must be m x r");
    heads_[h] = std::move(head);
  }

  template <class U>
  BasicLoraLinear<U> cast() const {
    BasicLoraLinear<U> out(weight_.template cast<U>(), heads_.size(), rank_, static_cast<U>(alpha_));
    for (std::size_t h = 0; h < heads_.size(); ++h) out.set_head(h, heads_[h].template cast<U>());
    return out;
  }

  void check_head(std::size_t h) const {
    if (h >= heads_.size()) {
      throw ContractViolation("LoraLinear: head index " + std::to_string(h) + " out of range (" +
                              std::to_string(heads_.size()) + " heads)");
    }
  }

 private:
  BasicMatrix<T> weight_;
  std::vector<BasicLoraHead<T>> heads_;
  std::size_t rank_ = 0;
  T alpha_{1};
};

using LoraHead = BasicLoraHead<double>;
using LoraLinear = BasicLoraLinear<double>;

/// Draw every head's A from `scheme` with a per-head child stream and zero
/// every B, so the layer computes W x in all forward modes.
inline void init_heads(LoraLinear& layer, InitScheme scheme, const RandomSource& rng) {
  for (std::size_t h = 0; h < layer.num_heads(); ++h) {
    RandomSource stream = rng.split("head", h);
    LoraHead head{init_matrix(layer.rank(), layer.in_features(), scheme, stream),
                  Matrix(layer.out_features(), layer.rank())};
    layer.set_head(h, std::move(head));
  }
}

enum class ForwardKind { FullWeights, SingleHead, MultiHead, WorkerView };

struct ForwardMode {
  ForwardKind kind = ForwardKind::FullWeights;
  std::size_t head = 0;

  static ForwardMode full_weights() { return {ForwardKind::FullWeights, 0}; }
  static ForwardMode single_head(std::size_t h) { return {ForwardKind::SingleHead, h}; }
  static ForwardMode multi_head() { return {ForwardKind::MultiHead, 0}; }
  static ForwardMode worker_view(std::size_t h) { return {ForwardKind::WorkerView, h}; }

  bool uses_head(std::size_t h) const noexcept {
    switch (kind) {
      case ForwardKind::FullWeights: return false;
      case ForwardKind::MultiHead: return true;
      default: return h == head;
    }
  }
};

/// Coefficient a head's product carries in the forward pass: s for a lone
/// head, s / N when the head is one share of an N-way average.
enum class ScaleMode { FullS, SharedSOverN };

template <class T>
T head_coefficient(const BasicLoraLinear<T>& layer, ScaleMode mode) {
  return mode == ScaleMode::FullS ? layer.scale()
                                  : layer.scale() / static_cast<T>(layer.num_heads());
}

template <class T>
T head_coefficient(const BasicLoraLinear<T>& layer, ForwardMode mode) {
  return mode.kind == ForwardKind::SingleHead ? head_coefficient(layer, ScaleMode::FullS)
                                              : head_coefficient(layer, ScaleMode::SharedSOverN);
}

template <class T>
struct BasicHeadGradients {
  BasicMatrix<T> dA;
  BasicMatrix<T> dB;
};

template <class T>
struct BasicLayerGradients {
  std::optional<BasicMatrix<T>> dW;
  /// One slot per head; empty for heads that did not take part in the forward.
  std::vector<std::optional<BasicHeadGradients<T>>> heads;
};

using HeadGradients = BasicHeadGradients<double>;
using LayerGradients = BasicLayerGradients<double>;

namespace detail {

template <class T>
void check_input(const BasicLoraLinear<T>& layer, const BasicMatrix<T>& x) {
  if (x.rows() != layer.in_features() || x.cols() == 0) {
    throw ContractViolation("LoraLinear: input is " + x.shape_string() + ", expected " +
                            std::to_string(layer.in_features()) + " x batch");
  }
}

template <class T>
void check_correction(const BasicLoraLinear<T>& layer, const BasicMatrix<T>* correction) {
  if (correction != nullptr) {
    require(correction->rows() == layer.out_features() && correction->cols() == layer.in_features(),
            "LoraLinear: correction must match the weight shape");
  }
}

}  // namespace detail

/// Forward under any mode. `correction` (worker view only) subtracts
/// coefficient * V x.
template <class T>
BasicMatrix<T> layer_forward(const BasicLoraLinear<T>& layer, ForwardMode mode, const BasicMatrix<T>& x,
                             const BasicMatrix<T>* correction = nullptr) {
  detail::check_input(layer, x);
  detail::check_correction(layer, correction);
  if (mode.kind != ForwardKind::FullWeights && mode.kind != ForwardKind::MultiHead) layer.check_head(mode.head);
  BasicMatrix<T> out = matmul(layer.weight(), x);
  if (mode.kind == ForwardKind::FullWeights) return out;
  const T c = head_coefficient(layer, mode);
  for (std::size_t h = 0; h < layer.num_heads(); ++h) {
    if (!mode.uses_head(h)) continue;
    const auto& head = layer.head(h);
    out.add_scaled(matmul(head.B, matmul(head.A, x)), c);
  }
  if (correction != nullptr && mode.kind == ForwardKind::WorkerView) {
    out.add_scaled(matmul(*correction, x), -c);
  }
  return out;
}

template <class T>
struct BasicLayerBackward {
  BasicLayerGradients<T> grads;
  BasicMatrix<T> input_grad;  // dL/dx, n x b
};

/// Backward of layer_forward given dL/d(output). Gradients are reported for
/// W and for every head that participates in `mode`.
template <class T>
BasicLayerBackward<T> layer_backward(const BasicLoraLinear<T>& layer, ForwardMode mode,
                                     const BasicMatrix<T>& x, const BasicMatrix<T>& upstream,
                                     const BasicMatrix<T>* correction = nullptr) {
  detail::check_input(layer, x);
  detail::check_correction(layer, correction);
  if (upstream.rows() != layer.out_features() || upstream.cols() != x.cols()) {
    throw ContractViolation("LoraLinear: upstream is " + upstream.shape_string() + ", expected " +
                            std::to_string(layer.out_features()) + " x " + std::to_string(x.cols()));
  }
  BasicLayerBackward<T> out;
  out.grads.dW = matmul_nt(upstream, x);
  out.grads.heads.resize(layer.num_heads());
  out.input_grad = matmul_tn(layer.weight(), upstream);
  if (mode.kind == ForwardKind::FullWeights) return out;
  if (mode.kind != ForwardKind::MultiHead) layer.check_head(mode.head);

  const T c = head_coefficient(layer, mode);
  for (std::size_t h = 0; h < layer.num_heads(); ++h) {
    if (!mode.uses_head(h)) continue;
    const auto& head = layer.head(h);
    const BasicMatrix<T> ax = matmul(head.A, x);             // r x b
    const BasicMatrix<T> btu = matmul_tn(head.B, upstream);  // r x b
    BasicHeadGradients<T> g;
    g.dB = matmul_nt(upstream, ax);
    g.dB *= c;
    g.dA = matmul_nt(btu, x);
    g.dA *= c;
    out.input_grad.add_scaled(matmul_tn(head.A, btu), c);
    out.grads.heads[h] = std::move(g);
  }
  if (correction != nullptr && mode.kind == ForwardKind::WorkerView) {
    out.input_grad.add_scaled(matmul_tn(*correction, upstream), -c);
  }
  return out;
}

/// W x + s B_h A_h x
inline Matrix lora_forward(const LoraLinear& layer, std::size_t head, const Matrix& x) {
  return layer_forward(layer, ForwardMode::single_head(head), x);
}

/// W x + (s / N) sum_h B_h A_h x
inline Matrix mhlora_forward(const LoraLinear& layer, const Matrix& x) {
  return layer_forward(layer, ForwardMode::multi_head(), x);
}

/// W x + (s / N) B_h A_h x: the worker's share of the multi-head average.
inline Matrix worker_view_forward(const LoraLinear& layer, std::size_t head, const Matrix& x,
                                  const Matrix* correction = nullptr) {
  return layer_forward(layer, ForwardMode::worker_view(head), x, correction);
}

/// W + (s / N) sum_h B_h A_h
template <class T>
BasicMatrix<T> effective_weight(const BasicLoraLinear<T>& layer) {
  BasicMatrix<T> out = layer.weight();
  if (layer.num_heads() == 0) return out;
  const T c = head_coefficient(layer, ScaleMode::SharedSOverN);
  for (const auto& head : layer.heads()) out.add_scaled(matmul(head.B, head.A), c);
  return out;
}

struct SplitProduct {
  std::pair<Matrix, Matrix> first;   // (B1: m x k, A1: k x n)
  std::pair<Matrix, Matrix> second;  // (B2: m x (d-k), A2: (d-k) x n)
};

/// Split B A (inner dimension d) into B1 A1 + B2 A2 by taking the first k
/// columns of B / rows of A and the remaining d - k.
inline SplitProduct split_product(const Matrix& b, const Matrix& a, std::size_t k) {
  detail::require(b.cols() == a.rows(), "split_product: B cols must equal A rows");
  const std::size_t d = b.cols();
  if (k < 1 || k >= d) {
    throw ContractViolation("split_product: k = " + std::to_string(k) + " must satisfy 1 <= k < " +
                            std::to_string(d));
  }
  return {{column_block(b, 0, k), row_block(a, 0, k)},
          {column_block(b, k, d - k), row_block(a, k, d - k)}};
}

/// Gradients of one head with an explicit coefficient:
///   dB = c * upstream (A x)^T,  dA = c * B^T upstream x^T,  dW = upstream x^T
inline LayerGradients lora_backward(const LoraLinear& layer, std::size_t head, const Matrix& x,
                                    const Matrix& upstream, ScaleMode scale_mode) {
  layer.check_head(head);
  const ForwardMode mode = scale_mode == ScaleMode::FullS ? ForwardMode::single_head(head)
                                                          : ForwardMode::worker_view(head);
  return layer_backward(layer, mode, x, upstream).grads;
}

}  // namespace lte
