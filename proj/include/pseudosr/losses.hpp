#pragma once

// Objective terms for the LR translation networks and the SR network.
// All reductions are means over batch, channels and space.

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "pseudosr/nn/networks.hpp"
#include "pseudosr/ops.hpp"

namespace pseudosr {

enum class GanForm { nonsaturating, minimax, lsgan };
enum class IdentityMode { clean_lr, source_lr };

struct LossWeights {
  double lambda_cyc = 1.0;
  double lambda_idt = 1.0;
  double lambda_geo = 1.0;
  double gamma = 0.1;
  IdentityMode idt_mode = IdentityMode::clean_lr;

  void validate() const {
    for (double w : {lambda_cyc, lambda_idt, lambda_geo, gamma})
      if (!std::isfinite(w) || w < 0) throw ConfigError("loss weights must be finite and non-negative");
  }
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

template <class T>
struct AdversarialTerms {
  Var<T> d_loss;  // minimized by the discriminator; fake scores detached
  Var<T> g_loss;  // minimized by the generator(s)
};

/// Value of the log-likelihood game E[log D(real)] + E[log(1 - D(fake))] for
/// raw logits. The discriminator maximizes it.
template <class T>
T adversarial_objective(const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
  if (real_logits.empty() || fake_logits.empty()) throw ShapeError("adversarial objective of empty scores");
  T r = 0, f = 0;
  for (T v : real_logits.storage()) r -= ops::softplus(-v);
  for (T v : fake_logits.storage()) f -= ops::softplus(v);
  return r / static_cast<T>(real_logits.size()) + f / static_cast<T>(fake_logits.size());
}

namespace detail {

template <class T>
Var<T> real_target(const Var<T>& logits, GanForm form) {
  return form == GanForm::lsgan ? ops::squared_error_mean(logits, T(1)) : ops::softplus_mean(logits, T(-1));
}

template <class T>
Var<T> fake_target(const Var<T>& logits, GanForm form) {
  return form == GanForm::lsgan ? ops::squared_error_mean(logits, T(0)) : ops::softplus_mean(logits, T(1));
}

/// Generator loss for pushing `logits` towards the label the discriminator
/// assigns to the opposite class.
template <class T>
Var<T> generator_target(const Var<T>& logits, GanForm form, bool logits_are_fake) {
  switch (form) {
    case GanForm::minimax:
      // Minimize the game value directly: E log(1 - D(fake)) or E log D(real).
      return ops::scale(logits_are_fake ? fake_target(logits, form) : real_target(logits, form), T(-1));
    case GanForm::nonsaturating:
    case GanForm::lsgan:
      return logits_are_fake ? real_target(logits, form) : fake_target(logits, form);
  }
  throw ConfigError("unknown GAN form");
}

}  // namespace detail

/// Discriminator objective: -mean log σ(real) - mean log(1 - σ(fake)) (or the LSGAN analogue).
template <class T>
Var<T> discriminator_loss(const Var<T>& real_logits, const Var<T>& fake_logits, GanForm form) {
  return ops::add(detail::real_target(real_logits, form), detail::fake_target(fake_logits, form));
}

/// Generator objective for the LR adversarial terms.
template <class T>
Var<T> generator_loss(const Var<T>& fake_logits, GanForm form) {
  return detail::generator_target(fake_logits, form, true);
}

/// Generator objective for the HR term, where both branches depend on the generators.
template <class T>
Var<T> hr_generator_loss(const Var<T>& real_logits, const Var<T>& fake_logits, GanForm form) {
  return ops::add(detail::generator_target(fake_logits, form, true),
                  detail::generator_target(real_logits, form, false));
}

/// Discriminator and generator losses from raw patch logits.
///
/// d_loss = -mean log σ(real) - mean log(1 - σ(fake)).
/// g_loss (non-saturating) = -mean log σ(fake); minimax g_loss = mean log(1 - σ(fake)).
/// Pure functions of the scores: detaching the fake images before they are
/// scored is up to the caller (see adversarial_terms).
template <class T>
AdversarialTerms<T> adversarial_loss(const Var<T>& real_logits, const Var<T>& fake_logits,
                                     GanForm form = GanForm::nonsaturating) {
  if (real_logits.value().empty() || fake_logits.value().empty())
    throw ShapeError("adversarial loss on an empty batch");
  AdversarialTerms<T> t;
  t.d_loss = discriminator_loss(real_logits, fake_logits, form);
  t.g_loss = generator_loss(fake_logits, form);
  return t;
}

/// LR adversarial term from images. The discriminator loss scores a detached
/// copy of `fake`, so it only reaches the discriminator; the generator loss
/// scores the live `fake` through a frozen discriminator.
template <class T>
AdversarialTerms<T> adversarial_terms(const nn::PatchDiscriminator<T>& d, const Var<T>& real, const Var<T>& fake,
                                      GanForm form, const nn::Mode& d_mode) {
  AdversarialTerms<T> t;
  t.d_loss = adversarial_loss(d(real, d_mode), d(fake.detach(), d_mode), form).d_loss;
  t.g_loss = generator_loss(d(fake, d_mode.freeze()), form);
  return t;
}

/// HR adversarial term from already computed HR rasters.
///
/// `hr_real` = U(G_XY↓(x)) and `hr_fake` = U(ẙ↓) must come from a frozen U, so
/// gradients reach both generators while U's parameters get none. Both
/// branches depend on the generators, so g_loss pushes each branch towards the
/// other's label.
template <class T>
AdversarialTerms<T> hr_adversarial_terms(const nn::PatchDiscriminator<T>& d_hr, const Var<T>& hr_real,
                                         const Var<T>& hr_fake, GanForm form, const nn::Mode& d_mode) {
  const Var<T> real_d = d_hr(hr_real.detach(), d_mode);
  const Var<T> fake_d = d_hr(hr_fake.detach(), d_mode);
  AdversarialTerms<T> t;
  t.d_loss = discriminator_loss(real_d, fake_d, form);
  const nn::Mode frozen = d_mode.freeze();
  t.g_loss = hr_generator_loss(d_hr(hr_real, frozen), d_hr(hr_fake, frozen), form);
  return t;
}

/// HR adversarial term computed end to end from a bundle:
/// real branch D(U(G_XY↓(x))), fake branch D(U(G_XY↓(G_Y↓X(y↓, noise)))).
template <class T>
AdversarialTerms<T> hr_adversarial_loss(const nn::NetworkBundle<T>& bundle, const Var<T>& x_batch,
                                        const Var<T>& y_down_batch, const Var<T>& noise,
                                        GanForm form = GanForm::nonsaturating, const nn::Mode& mode = nn::Mode{}) {
  const int s = bundle.config.scale;
  if (x_batch.shape().c != 3 || y_down_batch.shape().c != 3) throw ShapeError("hr adversarial loss: 3-channel inputs");
  const Var<T> corrected = bundle.g_correct(x_batch, mode);
  const Var<T> pseudo_clean = bundle.g_correct(bundle.g_degrade(y_down_batch, noise, mode), mode);
  const nn::Mode frozen = mode.freeze();
  const Var<T> hr_real = bundle.sr(corrected, frozen);
  const Var<T> hr_fake = bundle.sr(pseudo_clean, frozen);
  if (hr_real.shape().h != x_batch.shape().h * s) throw ShapeError("hr adversarial loss: scale mismatch");
  return hr_adversarial_terms(bundle.d_hr, hr_real, hr_fake, form, mode);
}

/// One-sided cycle term: mean |G_XY↓(G_Y↓X(y↓)) - y↓|.
template <class T>
Var<T> cycle_loss(const Var<T>& y_down, const Var<T>& y_down_reconstructed) {
  require_same_shape(y_down.shape(), y_down_reconstructed.shape(), "cycle_loss");
  return ops::l1_mean(y_down_reconstructed, y_down);
}

/// mean |G(v) - v| with v = y↓ (clean_lr) or v = x (source_lr).
template <class T, class Generator>
Var<T> identity_loss(Generator&& g_correct, const Var<T>& x_batch, const Var<T>& y_down_batch, IdentityMode mode) {
  const Var<T>& v = mode == IdentityMode::clean_lr ? y_down_batch : x_batch;
  const Var<T> out = g_correct(v);
  require_same_shape(out.shape(), v.shape(), "identity_loss");
  return ops::l1_mean(out, v);
}

/// mean |G(x) - 1/8 Σ_i T_i⁻¹(G(T_i(x)))| with shared parameters across the
/// eight branches. `g_of_x` may carry an already computed G(x) (the T_1 branch).
template <class T, class Generator>
Var<T> geometric_ensemble_loss(Generator&& g, const Var<T>& x_batch, const Var<T>& g_of_x = Var<T>()) {
  if (x_batch.shape().h != x_batch.shape().w)
    throw ShapeError("geometric ensemble loss needs square patches, got " + to_string(x_batch.shape()));
  const Var<T> base = g_of_x.defined() ? g_of_x : g(x_batch);
  std::vector<Var<T>> branches;
  branches.reserve(DihedralIndex::kCount);
  for (DihedralIndex op : DihedralIndex::all()) {
    if (op == DihedralIndex::identity()) {
      branches.push_back(base);
      continue;
    }
    branches.push_back(ops::dihedral(g(ops::dihedral(x_batch, op)), op.inverse()));
  }
  return ops::l1_mean(base, ops::average(branches));
}

/// Registry of pixel-wise reconstruction objectives; "l1" is built in.
template <class T>
class ReconstructionLosses {
 public:
  using Fn = std::function<Var<T>(const Var<T>& prediction, const Var<T>& target)>;

  static ReconstructionLosses& instance() {
    static ReconstructionLosses registry;
    return registry;
  }

  void add(const std::string& kind, Fn fn) {
    std::lock_guard lock(mu_);
    fns_[kind] = std::move(fn);
  }

  Fn get(const std::string& kind) const {
    std::lock_guard lock(mu_);
    auto it = fns_.find(kind);
    if (it == fns_.end()) throw ConfigError("unknown reconstruction loss '" + kind + "'");
    return it->second;
  }

  bool contains(const std::string& kind) const {
    std::lock_guard lock(mu_);
    return fns_.count(kind) > 0;
  }

 private:
  ReconstructionLosses() {
    fns_["l1"] = [](const Var<T>& p, const Var<T>& t) { return ops::l1_mean(p, t); };
  }
  mutable std::mutex mu_;
  std::map<std::string, Fn> fns_;
};

template <class T>
Var<T> reconstruction_loss(const Var<T>& sr_out, const Var<T>& y_batch, const std::string& kind = "l1") {
  auto fn = ReconstructionLosses<T>::instance().get(kind);
  require_same_shape(sr_out.shape(), y_batch.shape(), "reconstruction_loss");
  return fn(sr_out, y_batch);
}

/// The components of the translation objective.
template <class T>
struct TranslationParts {
  std::optional<Var<T>> adv_x;   // generator loss against D_X
  std::optional<Var<T>> adv_yd;  // generator loss against D_Y↓
  std::optional<Var<T>> adv_hr;  // generator loss against D_X↑
  std::optional<Var<T>> cyc;
  std::optional<Var<T>> idt;
  std::optional<Var<T>> geo;
};

/// adv_x + adv_yd + γ·adv_hr + λ_cyc·cyc + λ_idt·idt + λ_geo·geo
template <class T>
Var<T> total_translation_loss(const TranslationParts<T>& parts, const LossWeights& w) {
  w.validate();
  auto need = [](const std::optional<Var<T>>& v, const char* name) -> const Var<T>& {
    if (!v || !v->defined()) throw ConfigError(std::string("translation loss is missing component ") + name);
    return *v;
  };
  return ops::weighted_sum<T>({need(parts.adv_x, "adv_x"), need(parts.adv_yd, "adv_yd"), need(parts.adv_hr, "adv_hr"),
                               need(parts.cyc, "cyc"), need(parts.idt, "idt"), need(parts.geo, "geo")},
                              {T(1), T(1), static_cast<T>(w.gamma), static_cast<T>(w.lambda_cyc),
                               static_cast<T>(w.lambda_idt), static_cast<T>(w.lambda_geo)});
}

/// Per-iteration scalar summary.
struct LossReport {
  double adv_x = 0, adv_yd = 0, adv_hr = 0, cyc = 0, idt = 0, geo = 0, rec = 0, total_trans = 0;
  double d_x = 0, d_yd = 0, d_hr = 0;

  /// Field names and values in serialization order.
  std::vector<std::pair<const char*, double>> fields() const {
    return {{"adv_x", adv_x}, {"adv_yd", adv_yd}, {"adv_hr", adv_hr}, {"cyc", cyc},   {"idt", idt}, {"geo", geo},
            {"rec", rec},     {"total_trans", total_trans},           {"d_x", d_x},   {"d_yd", d_yd}, {"d_hr", d_hr}};
  }
};

}  // namespace pseudosr
