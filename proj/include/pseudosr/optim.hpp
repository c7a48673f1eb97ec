#pragma once

#include <cmath>
#include <vector>

#include "pseudosr/nn/layers.hpp"

namespace pseudosr {

/// Adaptive-moment estimator settings.
struct OptimSpec {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  }
  friend bool operator==(const OptimSpec&, const OptimSpec&) = default;
};

/// base_lr · 0.5^(number of milestones ≤ iter)
inline double lr_schedule(double base_lr, long iter, const std::vector<long>& milestones) {
  int halvings = 0;
  for (long m : milestones)
    if (m <= iter) ++halvings;
  return base_lr * std::ldexp(1.0, -halvings);
}

/// Adam state for one network. Moments are kept per parameter in the order of
/// the parameter store it was created for; the store is passed to step().
template <class T>
class Adam {
 public:
  Adam(const nn::ParameterStore<T>& store, OptimSpec spec) : spec_(spec) {
    spec_.validate();
    for (const auto& p : store.parameters()) {
      m_.emplace_back(p.node->value.shape());
      v_.emplace_back(p.node->value.shape());
    }
  }

  /// One update with learning rate `lr`; parameters that received no gradient are left untouched.
  void step(nn::ParameterStore<T>& store, double lr) {
    if (store.parameters().size() != m_.size()) throw ConfigError("optimizer state does not match parameter store");
    ++t_;
    const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    const auto& params = store.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      Node<T>& node = *params[k].node;
      if (!node.has_grad()) continue;
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < node.value.size(); ++i) {
        const double g = node.grad[i];
        m[i] = static_cast<T>(spec_.beta1 * m[i] + (1 - spec_.beta1) * g);
        v[i] = static_cast<T>(spec_.beta2 * v[i] + (1 - spec_.beta2) * g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        node.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + spec_.epsilon));
      }
    }
  }

  const OptimSpec& spec() const noexcept { return spec_; }
  long steps() const noexcept { return t_; }
  void set_steps(long t) noexcept { t_ = t; }
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

 private:
  OptimSpec spec_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace pseudosr
