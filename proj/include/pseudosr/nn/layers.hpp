#pragma once

// Parameter bookkeeping and the layer building blocks shared by all networks.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pseudosr/autograd.hpp"
#include "pseudosr/ops.hpp"
#include "pseudosr/rng.hpp"

namespace pseudosr::nn {

/// How a forward pass treats parameters and normalization.
struct Mode {
  bool train = true;
  /// Use parameters as constants: gradients still flow through the layer to
  /// its input but never reach the parameters themselves.
  bool frozen = false;
  /// Update batch-norm running statistics (train mode only).
  bool update_stats = true;

  static Mode training() { return {}; }
  static Mode inference() { return {false, true, false}; }
  Mode freeze() const {
    Mode m = *this;
    m.frozen = true;
    return m;
  }
};

template <class T>
struct NamedParameter {
  std::string name;
  NodePtr<T> node;
};

template <class T>
struct NamedBuffer {
  std::string name;
  std::shared_ptr<Tensor<T>> tensor;
};

/// Ordered registry of a network's trainable parameters and state buffers,
/// keyed by hierarchical dotted names.
template <class T>
class ParameterStore {
 public:
  NodePtr<T> add_parameter(std::string name, Tensor<T> init) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(init);
    node->requires_grad = true;
    params_.push_back({std::move(name), node});
    return node;
  }
  std::shared_ptr<Tensor<T>> add_buffer(std::string name, Tensor<T> init) {
    auto t = std::make_shared<Tensor<T>>(std::move(init));
    buffers_.push_back({std::move(name), t});
    return t;
  }

  const std::vector<NamedParameter<T>>& parameters() const noexcept { return params_; }
  const std::vector<NamedBuffer<T>>& buffers() const noexcept { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.node->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.node->zero_grad();
  }

 private:
  std::vector<NamedParameter<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
};

/// Live parameter or a constant snapshot of it, depending on the mode.
template <class T>
Var<T> bind(const NodePtr<T>& node, const Mode& mode) {
  if (!node) return Var<T>();
  if (mode.frozen) return Var<T>::constant(node->value);
  return Var<T>(node);
}

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  /// Weights ~ N(0, 1/fan_in), zero bias. Same padding (k / 2).
  Conv2d(ParameterStore<T>& store, const std::string& name, int in_c, int out_c, int kernel, Rng& rng, int stride = 1,
         bool zero_init = false)
      : stride_(stride), pad_(kernel / 2) {
    Tensor<T> w(Shape{out_c, in_c, kernel, kernel});
    if (!zero_init) {
      const double std = 1.0 / std::sqrt(static_cast<double>(in_c * kernel * kernel));
      for (auto& v : w.storage()) v = static_cast<T>(std * rng.normal());
    }
    weight_ = store.add_parameter(join(name, "weight"), std::move(w));
    bias_ = store.add_parameter(join(name, "bias"), Tensor<T>(Shape{1, out_c, 1, 1}));
  }

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    return ops::conv2d(x, bind(weight_, mode), bind(bias_, mode), stride_, pad_);
  }

  int stride() const noexcept { return stride_; }
  int kernel() const noexcept { return weight_->value.shape().h; }

 private:
  NodePtr<T> weight_;
  NodePtr<T> bias_;
  int stride_ = 1;
  int pad_ = 0;
};

template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<T>& store, const std::string& name, int channels) {
    gamma_ = store.add_parameter(join(name, "weight"), Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
    beta_ = store.add_parameter(join(name, "bias"), Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
    mean_ = store.add_buffer(join(name, "running_mean"), Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
    var_ = store.add_buffer(join(name, "running_var"), Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
  }

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    if (mode.train) {
      const bool upd = mode.update_stats;
      return ops::batch_norm_train(x, bind(gamma_, mode), bind(beta_, mode), upd ? mean_.get() : nullptr,
                                   upd ? var_.get() : nullptr, T(kMomentum), T(kEps));
    }
    return ops::batch_norm_eval(x, bind(gamma_, mode), bind(beta_, mode), *mean_, *var_, T(kEps));
  }

 private:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;
  NodePtr<T> gamma_, beta_;
  std::shared_ptr<Tensor<T>> mean_, var_;
};

/// Squeeze-and-excitation style channel gate: x * sigmoid(W2 relu(W1 avgpool(x))).
template <class T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(ParameterStore<T>& store, const std::string& name, int channels, int reduction, Rng& rng)
      : down_(store, join(name, "down"), channels, std::max(1, channels / reduction), 1, rng),
        up_(store, join(name, "up"), std::max(1, channels / reduction), channels, 1, rng) {}

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    auto s = ops::global_avg_pool(x);
    s = ops::sigmoid(up_(ops::relu(down_(s, mode)), mode));
    return ops::scale_channels(x, s);
  }

 private:
  Conv2d<T> down_, up_;
};

/// Residual channel-attention block: x + CA(conv(relu(conv(x)))).
template <class T>
class Rcab {
 public:
  Rcab() = default;
  Rcab(ParameterStore<T>& store, const std::string& name, int channels, int reduction, Rng& rng)
      : conv1_(store, join(name, "conv1"), channels, channels, 3, rng),
        conv2_(store, join(name, "conv2"), channels, channels, 3, rng),
        attention_(store, join(name, "attention"), channels, reduction, rng) {}

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    auto r = conv2_(ops::relu(conv1_(x, mode)), mode);
    return ops::add(x, attention_(r, mode));
  }

 private:
  Conv2d<T> conv1_, conv2_;
  ChannelAttention<T> attention_;
};

/// RCABs followed by a conv, wrapped in a short skip connection.
template <class T>
class ResidualGroup {
 public:
  ResidualGroup() = default;
  ResidualGroup(ParameterStore<T>& store, const std::string& name, int channels, int blocks, int reduction, Rng& rng) {
    for (int b = 0; b < blocks; ++b)
      blocks_.emplace_back(store, join(name, "rcab" + std::to_string(b)), channels, reduction, rng);
    tail_ = Conv2d<T>(store, join(name, "tail"), channels, channels, 3, rng);
  }

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    Var<T> h = x;
    for (const auto& b : blocks_) h = b(h, mode);
    return ops::add(x, tail_(h, mode));
  }

 private:
  std::vector<Rcab<T>> blocks_;
  Conv2d<T> tail_;
};

/// conv -> BN -> LeakyReLU.
template <class T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParameterStore<T>& store, const std::string& name, int in_c, int out_c, int kernel, double slope, Rng& rng)
      : conv_(store, join(name, "conv"), in_c, out_c, kernel, rng), bn_(store, join(name, "bn"), out_c), slope_(slope) {}

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    return ops::leaky_relu(bn_(conv_(x, mode), mode), static_cast<T>(slope_));
  }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  double slope_ = 0.2;
};

/// x + (conv-BN-LReLU)^2 (x)
template <class T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterStore<T>& store, const std::string& name, int channels, int kernel, double slope, Rng& rng)
      : first_(store, join(name, "0"), channels, channels, kernel, slope, rng),
        second_(store, join(name, "1"), channels, channels, kernel, slope, rng) {}

  Var<T> operator()(const Var<T>& x, const Mode& mode) const { return ops::add(x, second_(first_(x, mode), mode)); }

 private:
  ConvBnAct<T> first_, second_;
};

}  // namespace pseudosr::nn
