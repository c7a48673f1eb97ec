#pragma once

// Central finite-difference check of reverse-mode gradients (double precision).

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pseudosr/autograd.hpp"
#include "pseudosr/rng.hpp"

namespace gradcheck {

using pseudosr::NodePtr;
using pseudosr::Var;

struct Result {
  double rel_error = 0;     // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0;
  double numeric_norm = 0;
  std::size_t probes = 0;
};

/// Compares d f / d(params) against central differences on up to `max_probes`
/// randomly chosen entries (all entries when the total is smaller).
inline Result check(const std::function<Var<double>()>& f, const std::vector<NodePtr<double>>& params,
                    std::size_t max_probes = 400, double h = 1e-6, std::uint64_t seed = 1) {
  for (const auto& p : params) p->zero_grad();
  pseudosr::backward(f());
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->value.size(); ++i) entries.emplace_back(k, i);
  if (entries.size() > max_probes) {
    pseudosr::Rng rng(seed);
    for (std::size_t i = 0; i < max_probes; ++i)
      std::swap(entries[i], entries[i + static_cast<std::size_t>(rng.below(static_cast<int>(entries.size() - i)))]);
    entries.resize(max_probes);
  }
  double diff = 0, an = 0, nn = 0;
  for (auto [k, i] : entries) {
    auto& node = *params[k];
    const double a = node.has_grad() ? node.grad[i] : 0.0;
    const double orig = node.value[i];
    node.value[i] = orig + h;
    const double fp = f().item();
    node.value[i] = orig - h;
    const double fm = f().item();
    node.value[i] = orig;
    const double n = (fp - fm) / (2 * h);
    diff += (a - n) * (a - n);
    an += a * a;
    nn += n * n;
  }
  Result r;
  r.analytic_norm = std::sqrt(an);
  r.numeric_norm = std::sqrt(nn);
  r.rel_error = std::sqrt(diff) / std::max({r.analytic_norm, r.numeric_norm, 1e-12});
  r.probes = entries.size();
  for (const auto& p : params) p->zero_grad();
  return r;
}

}  // namespace gradcheck
