#pragma once

// A stack of LoRA linear layers with elementwise activations between them,
// a loss, hand-written backprop and a finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lte/error.hpp"
#include "lte/layers.hpp"
#include "lte/matrix.hpp"
#include "lte/random.hpp"

namespace lte {

enum class Activation { Identity, ReLU };
enum class LossKind { MeanSquaredError, SoftmaxCrossEntropy };

inline std::string_view to_string(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }
inline std::string_view to_string(LossKind l) {
  return l == LossKind::MeanSquaredError ? "mse" : "softmax_cross_entropy";
}

template <class T>
struct BasicBatch {
  BasicMatrix<T> inputs;  // n x b, columns are samples
  /// Regression targets (m x b) for MSE, class indices (length b) for cross-entropy.
  std::variant<BasicMatrix<T>, std::vector<std::size_t>> targets;

  std::size_t size() const noexcept { return inputs.cols(); }

  template <class U>
  BasicBatch<U> cast() const {
    BasicBatch<U> out;
    out.inputs = inputs.template cast<U>();
    if (const auto* m = std::get_if<BasicMatrix<T>>(&targets)) {
      out.targets = m->template cast<U>();
    } else {
      out.targets = std::get<std::vector<std::size_t>>(targets);
    }
    return out;
  }
};

using Batch = BasicBatch<double>;

template <class T>
class BasicNetwork {
 public:
  BasicNetwork() = default;

  /// `activations` has one entry per gap between consecutive layers.
  BasicNetwork(std::vector<BasicLoraLinear<T>> layers, std::vector<Activation> activations, LossKind loss)
      : layers_(std::move(layers)), activations_(std::move(activations)), loss_(loss) {
    detail::require(!layers_.empty(), "Network: needs at least one layer");
    detail::require(activations_.size() + 1 == layers_.size(),
                    "Network: need exactly one activation per gap between layers");
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      if (layers_[l].in_features() != layers_[l - 1].out_features()) {
        throw ContractViolation("Network: layer " + std::to_string(l) + " expects " +
                                std::to_string(layers_[l].in_features()) + " inputs but layer " +
                                std::to_string(l - 1) + " produces " +
                                std::to_string(layers_[l - 1].out_features()));
      }
    }
  }

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }
  std::size_t num_heads() const { return layers_.front().num_heads(); }
  LossKind loss() const noexcept { return loss_; }

  const BasicLoraLinear<T>& layer(std::size_t l) const { return layers_.at(l); }
  BasicLoraLinear<T>& layer(std::size_t l) { return layers_.at(l); }
  const std::vector<BasicLoraLinear<T>>& layers() const noexcept { return layers_; }
  std::vector<BasicLoraLinear<T>>& layers() noexcept { return layers_; }
  const std::vector<Activation>& activations() const noexcept { return activations_; }

  bool is_linear() const noexcept {
    return std::all_of(activations_.begin(), activations_.end(),
                       [](Activation a) { return a == Activation::Identity; });
  }

  template <class U>
  BasicNetwork<U> cast() const {
    std::vector<BasicLoraLinear<U>> layers;
    layers.reserve(layers_.size());
    for (const auto& l : layers_) layers.push_back(l.template cast<U>());
    return BasicNetwork<U>(std::move(layers), activations_, loss_);
  }

 private:
  std::vector<BasicLoraLinear<T>> layers_;
  std::vector<Activation> activations_;
  LossKind loss_ = LossKind::MeanSquaredError;
};

using Network = BasicNetwork<double>;

/// Per-layer correction matrices for a worker running in exact-correction
/// mode; empty span means no correction.
template <class T>
using Corrections = std::span<const BasicMatrix<T>>;

template <class T>
struct BasicForwardCache {
  std::vector<BasicMatrix<T>> layer_inputs;  // input fed to each layer
  std::vector<BasicMatrix<T>> pre_activations;  // raw output of each layer
};

template <class T>
struct BasicForwardResult {
  BasicMatrix<T> outputs;
  BasicForwardCache<T> cache;
};

namespace detail {

template <class T>
const BasicMatrix<T>* correction_for(Corrections<T> corrections, std::size_t layer) {
  return corrections.empty() ? nullptr : &corrections[layer];
}

template <class T>
void check_corrections(const BasicNetwork<T>& net, ForwardMode mode, Corrections<T> corrections) {
  if (corrections.empty()) return;
  require(mode.kind == ForwardKind::WorkerView, "corrections are only valid in worker-view mode");
  require(corrections.size() == net.num_layers(), "need one correction matrix per layer");
}

template <class T>
void apply_activation(Activation a, BasicMatrix<T>& m) {
  if (a == Activation::ReLU) {
    for (auto& v : m.values()) v = v > T{} ? v : T{};
  }
}

}  // namespace detail

template <class T>
BasicForwardResult<T> forward(const BasicNetwork<T>& net, const BasicMatrix<T>& inputs, ForwardMode mode,
                              Corrections<T> corrections = {}) {
  detail::check_corrections(net, mode, corrections);
  if (inputs.rows() != net.in_features()) {
    throw ContractViolation("forward: input has " + std::to_string(inputs.rows()) + " rows, network expects " +
                            std::to_string(net.in_features()));
  }
  BasicForwardResult<T> out;
  BasicMatrix<T> h = inputs;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    BasicMatrix<T> z = layer_forward(net.layer(l), mode, h, detail::correction_for(corrections, l));
    out.cache.layer_inputs.push_back(std::move(h));
    out.cache.pre_activations.push_back(z);
    if (l + 1 < net.num_layers()) detail::apply_activation(net.activations()[l], z);
    h = std::move(z);
  }
  out.outputs = std::move(h);
  return out;
}

namespace detail {

template <class T>
struct LossAndUpstream {
  T loss{};
  BasicMatrix<T> upstream;
};

template <class T>
LossAndUpstream<T> evaluate_loss(LossKind kind, const BasicMatrix<T>& out, const BasicBatch<T>& batch) {
  const std::size_t b = out.cols();
  const T inv_b = T{1} / static_cast<T>(b);
  LossAndUpstream<T> r;
  r.upstream = BasicMatrix<T>(out.rows(), b);
  if (kind == LossKind::MeanSquaredError) {
    const auto* target = std::get_if<BasicMatrix<T>>(&batch.targets);
    if (target == nullptr) throw ContractViolation("MSE loss needs matrix targets");
    if (!target->same_shape(out)) {
      throw ContractViolation("MSE targets are " + target->shape_string() + ", outputs are " +
                              out.shape_string());
    }
    T acc{};
    for (std::size_t k = 0; k < out.size(); ++k) {
      const T d = out.values()[k] - target->values()[k];
      acc += d * d;
      r.upstream.values()[k] = d * inv_b;
    }
    r.loss = acc * inv_b / T{2};
    return r;
  }
  const auto* labels = std::get_if<std::vector<std::size_t>>(&batch.targets);
  if (labels == nullptr) throw ContractViolation("cross-entropy loss needs class-index targets");
  if (labels->size() != b) throw ContractViolation("cross-entropy: one label per batch column required");
  T acc{};
  for (std::size_t j = 0; j < b; ++j) {
    const std::size_t y = (*labels)[j];
    if (y >= out.rows()) {
      throw ContractViolation("cross-entropy: label " + std::to_string(y) + " out of range for " +
                              std::to_string(out.rows()) + " classes");
    }
    T mx = out(0, j);
    for (std::size_t i = 1; i < out.rows(); ++i) mx = std::max(mx, out(i, j));
    T denom{};
    for (std::size_t i = 0; i < out.rows(); ++i) denom += std::exp(out(i, j) - mx);
    const T log_denom = std::log(denom);
    acc += -(out(y, j) - mx - log_denom);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const T p = std::exp(out(i, j) - mx - log_denom);
      r.upstream(i, j) = (p - (i == y ? T{1} : T{})) * inv_b;
    }
  }
  r.loss = acc * inv_b;
  return r;
}

}  // namespace detail

template <class T>
T loss_value(const BasicNetwork<T>& net, const BasicBatch<T>& batch, ForwardMode mode,
             Corrections<T> corrections = {}) {
  const auto fwd = forward(net, batch.inputs, mode, corrections);
  return detail::evaluate_loss(net.loss(), fwd.outputs, batch).loss;
}

template <class T>
struct BasicLossAndGrad {
  T loss{};
  std::vector<BasicLayerGradients<T>> grads;  // one per layer
};

using LossAndGrad = BasicLossAndGrad<double>;

/// Loss (MSE = ||out - target||^2 / (2b), or mean softmax cross-entropy) and
/// gradients for W and every head that participates in `mode`.
template <class T>
BasicLossAndGrad<T> loss_and_grad(const BasicNetwork<T>& net, const BasicBatch<T>& batch, ForwardMode mode,
                                  Corrections<T> corrections = {}) {
  if (batch.size() == 0) throw ContractViolation("loss_and_grad: empty batch");
  auto fwd = forward(net, batch.inputs, mode, corrections);
  auto lu = detail::evaluate_loss(net.loss(), fwd.outputs, batch);

  BasicLossAndGrad<T> out;
  out.loss = lu.loss;
  out.grads.resize(net.num_layers());
  BasicMatrix<T> upstream = std::move(lu.upstream);
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    if (l + 1 < net.num_layers() && net.activations()[l] == Activation::ReLU) {
      const auto& z = fwd.cache.pre_activations[l];
      for (std::size_t k = 0; k < z.size(); ++k) {
        if (!(z.values()[k] > T{})) upstream.values()[k] = T{};
      }
    }
    auto back = layer_backward(net.layer(l), mode, fwd.cache.layer_inputs[l], upstream,
                               detail::correction_for(corrections, l));
    out.grads[l] = std::move(back.grads);
    upstream = std::move(back.input_grad);
  }
  return out;
}

/// Identifies one scalar parameter: layer, which matrix, and the flat index.
struct ParameterRef {
  enum class Kind { W, A, B };
  std::size_t layer = 0;
  Kind kind = Kind::W;
  std::size_t head = 0;
  std::size_t index = 0;
};

template <class T>
T& parameter(BasicNetwork<T>& net, const ParameterRef& p) {
  auto& layer = net.layer(p.layer);
  switch (p.kind) {
    case ParameterRef::Kind::W: return layer.weight().values()[p.index];
    case ParameterRef::Kind::A: return layer.head(p.head).A.values()[p.index];
    case ParameterRef::Kind::B: return layer.head(p.head).B.values()[p.index];
  }
  throw ContractViolation("parameter: bad kind");
}

template <class T>
T gradient_entry(const std::vector<BasicLayerGradients<T>>& grads, const ParameterRef& p) {
  const auto& g = grads.at(p.layer);
  switch (p.kind) {
    case ParameterRef::Kind::W: return g.dW ? g.dW->values()[p.index] : T{};
    case ParameterRef::Kind::A: return g.heads[p.head] ? g.heads[p.head]->dA.values()[p.index] : T{};
    case ParameterRef::Kind::B: return g.heads[p.head] ? g.heads[p.head]->dB.values()[p.index] : T{};
  }
  return T{};
}

/// Every scalar that influences the loss under `mode`: all W entries plus the
/// A and B entries of participating heads.
template <class T>
std::vector<ParameterRef> parameters_in_mode(const BasicNetwork<T>& net, ForwardMode mode) {
  std::vector<ParameterRef> out;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layer(l);
    for (std::size_t i = 0; i < layer.weight().size(); ++i) out.push_back({l, ParameterRef::Kind::W, 0, i});
    for (std::size_t h = 0; h < layer.num_heads(); ++h) {
      if (!mode.uses_head(h)) continue;
      for (std::size_t i = 0; i < layer.head(h).A.size(); ++i) out.push_back({l, ParameterRef::Kind::A, h, i});
      for (std::size_t i = 0; i < layer.head(h).B.size(); ++i) out.push_back({l, ParameterRef::Kind::B, h, i});
    }
  }
  return out;
}

struct FdReport {
  double max_error = 0.0;
  bool absolute = false;  // true when the base loss is exactly zero
  std::size_t probes = 0;
  ParameterRef worst;
};

/// Relative gradient discrepancy |a - b| / max(1e-12, |a| + |b|).
inline double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

/// Compare analytic gradients against central differences on a random subset
/// of at least `min_probes` parameters (all of them if fewer exist). Both
/// sides are evaluated on an extended-precision copy of the network: the
/// difference quotient needs it to keep cancellation below the tolerance, and
/// the analytic side needs it so that gradient entries near zero are not
/// dominated by double rounding in the backward sums.
inline FdReport fd_check(const Network& net, const Batch& batch, ForwardMode mode, double step,
                         RandomSource rng, std::size_t min_probes = 32, Corrections<double> corrections = {}) {
  detail::require(step > 0.0, "fd_check: step must be positive");
  using Ext = long double;

  auto params = parameters_in_mode(net, mode);
  const std::size_t probes = std::min(params.size(), std::max<std::size_t>(min_probes, 32));
  // Partial Fisher-Yates: the first `probes` entries become a uniform sample.
  for (std::size_t i = 0; i < probes; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(params.size() - i));
    std::swap(params[i], params[j]);
  }

  BasicNetwork<Ext> ext = net.cast<Ext>();
  const BasicBatch<Ext> ext_batch = batch.cast<Ext>();
  std::vector<BasicMatrix<Ext>> ext_corr;
  for (const auto& c : corrections) ext_corr.push_back(c.cast<Ext>());
  const Corrections<Ext> ext_corr_span(ext_corr);
  const auto analytic = loss_and_grad(ext, ext_batch, mode, ext_corr_span);

  FdReport report;
  report.absolute = loss_value(net, batch, mode, corrections) == 0.0;
  report.probes = probes;
  const Ext h = static_cast<Ext>(step);
  for (std::size_t i = 0; i < probes; ++i) {
    const ParameterRef& p = params[i];
    Ext& slot = parameter(ext, p);
    const Ext saved = slot;
    slot = saved + h;
    const Ext plus = loss_value(ext, ext_batch, mode, ext_corr_span);
    slot = saved - h;
    const Ext minus = loss_value(ext, ext_batch, mode, ext_corr_span);
    slot = saved;
    const double numeric = static_cast<double>((plus - minus) / (Ext{2} * h));
    const double a = static_cast<double>(gradient_entry(analytic.grads, p));
    const double err = report.absolute ? std::abs(a - numeric) : gradient_relative_error(a, numeric);
    if (err > report.max_error || i == 0) {
      report.max_error = std::max(report.max_error, err);
      report.worst = p;
    }
  }
  return report;
}

}  // namespace lte
