#pragma once

// Alternating optimization: discriminators, then the two LR generators, then
// the SR network, once per iteration.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pseudosr/config.hpp"
#include "pseudosr/dataset.hpp"
#include "pseudosr/imaging.hpp"
#include "pseudosr/losses.hpp"
#include "pseudosr/nn/networks.hpp"
#include "pseudosr/nn/serialization.hpp"
#include "pseudosr/optim.hpp"

namespace pseudosr {

/// Ablation variants.
enum class Variant {
  full,               // U trained on ẙ↓
  no_d_hr,            // γ forced to 0, D_X↑ never trained
  train_on_clean,     // U trained on y↓
  train_on_degraded,  // U trained on G_Y↓X(y↓); inference uses U alone
};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_d_hr: return "no_d_hr";
    case Variant::train_on_clean: return "train_on_clean";
    case Variant::train_on_degraded: return "train_on_degraded";
  }
  return "full";
}
inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_d_hr") return Variant::no_d_hr;
  if (s == "train_on_clean") return Variant::train_on_clean;
  if (s == "train_on_degraded") return Variant::train_on_degraded;
  throw ConfigError("unknown variant '" + s + "'");
}

/// Linear warm-up of λ_geo from 0 to its target.
struct GeoRamp {
  bool enabled = false;
  /// Iteration at which the target is reached; 0 means 10% of total_iters.
  long ramp_iters = 0;
  friend bool operator==(const GeoRamp&, const GeoRamp&) = default;
};

struct TrainConfig {
  nn::BundleConfig networks = nn::BundleConfig::desk(2);
  LossWeights weights{};
  GanForm gan_form = GanForm::nonsaturating;
  std::string reconstruction = "l1";
  OptimSpec optim_gan{1e-4, 0.5, 0.999, 1e-8};
  OptimSpec optim_sr{1e-4, 0.9, 0.999, 1e-8};
  long total_iters = 2000;
  std::vector<long> lr_milestones{};
  int batch = 4;
  int lr_patch = 16;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  GeoRamp geo_ramp{};
  long checkpoint_every = 0;

  int scale() const noexcept { return networks.scale; }

  void validate() const {
    networks.validate();
    weights.validate();
    optim_gan.validate();
    optim_sr.validate();
    if (total_iters < 0) throw ConfigError("total_iters must be >= 0");
    if (batch < 1 || lr_patch < 1) throw ConfigError("batch and lr_patch must be positive");
    for (std::size_t i = 1; i < lr_milestones.size(); ++i)
      if (lr_milestones[i] <= lr_milestones[i - 1]) throw ConfigError("lr_milestones must be strictly increasing");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (geo_ramp.ramp_iters < 0) throw ConfigError("geo_ramp.ramp_iters must be >= 0");
    if (!ReconstructionLosses<float>::instance().contains(reconstruction))
      throw ConfigError("unknown reconstruction loss '" + reconstruction + "'");
  }

  long geo_ramp_end() const {
    if (!geo_ramp.enabled) return 0;
    return geo_ramp.ramp_iters > 0 ? geo_ramp.ramp_iters : std::max(1L, total_iters / 10);
  }

  /// λ_geo at `iter` under the ramp.
  double lambda_geo_at(long iter) const {
    const long end = geo_ramp_end();
    if (end <= 0 || iter >= end) return weights.lambda_geo;
    return weights.lambda_geo * static_cast<double>(iter) / static_cast<double>(end);
  }

  /// Loss weights in force at `iter`, after the variant and the λ_geo ramp.
  LossWeights weights_at(long iter) const {
    LossWeights w = weights;
    if (variant == Variant::no_d_hr) w.gamma = 0.0;
    w.lambda_geo = lambda_geo_at(iter);
    return w;
  }

  /// Published training recipe (×4 unless stated).
  static TrainConfig published(int scale = 4) {
    TrainConfig c;
    c.networks = nn::BundleConfig::published(scale);
    c.weights = {1.0, 1.0, 1.0, 0.1, IdentityMode::clean_lr};
    c.total_iters = 300000;
    c.lr_milestones = {100000, 180000, 240000, 280000};
    c.batch = 16;
    c.lr_patch = 32;
    return c;
  }

  /// CPU-sized recipe: 1 group × 2 RCABs, 16 channels, batch 4, 2000 iterations.
  static TrainConfig desk(int scale = 2) {
    TrainConfig c;
    c.networks = nn::BundleConfig::desk(scale);
    c.total_iters = 2000;
    c.batch = 4;
    c.lr_patch = 16;
    // Short horizon: a larger step than the published 1e-4, halved twice for
    // the GANs. 5e-4 diverged late on two of three seeds.
    c.optim_gan.lr = 2e-4;
    c.optim_sr.lr = 2e-4;
    c.lr_milestones = {1000, 1500};
    return c;
  }
};

inline json to_json(const TrainConfig& c) {
  return json{{"scale", c.scale()},
              {"seed", c.seed},
              {"total_iters", c.total_iters},
              {"batch", c.batch},
              {"lr_patch", c.lr_patch},
              {"variant", to_string(c.variant)},
              {"gan_form", to_string(c.gan_form)},
              {"reconstruction", c.reconstruction},
              {"weights", to_json(c.weights)},
              {"optim_gan", to_json(c.optim_gan)},
              {"optim_sr", to_json(c.optim_sr)},
              {"lr_milestones", c.lr_milestones},
              {"geo_ramp", json{{"enabled", c.geo_ramp.enabled}, {"ramp_iters", c.geo_ramp.ramp_iters}}},
              {"checkpoint_every", c.checkpoint_every},
              {"networks", to_json(c.networks)}};
}

/// Parses a training config; `preset` ("desk" or "published") supplies defaults.
inline TrainConfig train_config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"preset", "scale", "seed", "total_iters", "batch", "lr_patch", "variant", "gan_form",
                          "reconstruction", "weights", "optim_gan", "optim_sr", "lr_milestones", "geo_ramp",
                          "checkpoint_every", "networks"},
                         "training config");
  std::string preset = "desk";
  detail::read(j, "preset", preset);
  int scale = preset == "published" ? 4 : 2;
  detail::read(j, "scale", scale);
  check_scale(scale);
  TrainConfig c;
  if (preset == "published")
    c = TrainConfig::published(scale);
  else if (preset == "desk")
    c = TrainConfig::desk(scale);
  else
    throw ConfigError("unknown preset '" + preset + "'");
  detail::read(j, "seed", c.seed);
  detail::read(j, "total_iters", c.total_iters);
  detail::read(j, "batch", c.batch);
  detail::read(j, "lr_patch", c.lr_patch);
  std::string s = to_string(c.variant);
  detail::read(j, "variant", s);
  c.variant = parse_variant(s);
  s = to_string(c.gan_form);
  detail::read(j, "gan_form", s);
  c.gan_form = parse_gan_form(s);
  detail::read(j, "reconstruction", c.reconstruction);
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"), c.weights);
  if (j.contains("optim_gan")) c.optim_gan = optim_from_json(j.at("optim_gan"), c.optim_gan);
  if (j.contains("optim_sr")) c.optim_sr = optim_from_json(j.at("optim_sr"), c.optim_sr);
  detail::read(j, "lr_milestones", c.lr_milestones);
  if (j.contains("geo_ramp")) {
    const json& g = j.at("geo_ramp");
    detail::reject_unknown(g, {"enabled", "ramp_iters"}, "geo_ramp");
    detail::read(g, "enabled", c.geo_ramp.enabled);
    detail::read(g, "ramp_iters", c.geo_ramp.ramp_iters);
  }
  detail::read(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("networks")) c.networks = bundle_from_json(j.at("networks"), c.networks);
  c.networks.scale = scale;
  c.validate();
  return c;
}

/// Mutable training state besides the network parameters.
template <class T>
struct TrainState {
  long iter = 0;
  Rng rng;
  /// One optimizer per network, in NetworkBundle::stores() order.
  std::vector<std::pair<std::string, Adam<T>>> optimizers;

  static TrainState init(const TrainConfig& cfg, const nn::NetworkBundle<T>& bundle) {
    TrainState s;
    s.rng = Rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    for (const auto& [name, store] : bundle.stores())
      s.optimizers.emplace_back(name, Adam<T>(*store, name == "sr" ? cfg.optim_sr : cfg.optim_gan));
    return s;
  }

  Adam<T>& optimizer(const std::string& name) {
    for (auto& [n, opt] : optimizers)
      if (n == name) return opt;
    throw ConfigError("no optimizer for network '" + name + "'");
  }
};

/// Inputs of one iteration.
template <class T>
struct TrainingBatch {
  Tensor<T> x;       // real LR patches
  Tensor<T> y;       // HR patches (unaligned with x)
  Tensor<T> y_down;  // clean LR
  Tensor<T> noise;   // (b, 1, p, p) N(0, 1) for the degradation generator
};

template <class T>
Tensor<T> normal_noise(const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal());
  return t;
}

template <class T>
TrainingBatch<T> draw_training_batch(const UnpairedDataset& data, const TrainConfig& cfg, Rng& rng) {
  auto b = sample_unaligned_batch<T>(data.lr, data.hr, cfg.lr_patch, cfg.scale(), cfg.batch, rng);
  TrainingBatch<T> out{std::move(b.x), std::move(b.y), std::move(b.y_down), {}};
  const Shape s = out.x.shape();
  out.noise = normal_noise<T>(Shape{s.n, 1, s.h, s.w}, rng);
  return out;
}

enum class SubStep { discriminators, generators, sr };

/// Called after each sub-step of train_step.
using SubStepObserver = std::function<void(SubStep)>;

namespace detail {

inline void check_finite(double v, const char* term, long iter) {
  if (!std::isfinite(v)) throw NonFiniteLossError(term, iter);
}

}  // namespace detail

/// One iteration:
///  1. update D_X, D_Y↓ and D_X↑ on detached generator outputs;
///  2. update G_XY↓ and G_Y↓X on the weighted translation objective, with the
///     HR adversarial term back-propagating through a frozen U;
///  3. update U on the reconstruction loss of its (variant-dependent) input.
/// The noise raster is drawn once and shared by all sub-steps.
template <class T>
LossReport train_step(nn::NetworkBundle<T>& bundle, const TrainingBatch<T>& batch, const TrainConfig& cfg,
                      TrainState<T>& state, const SubStepObserver& observer = {}) {
  const long it = state.iter;
  if (cfg.total_iters > 0 && it >= cfg.total_iters) throw ConfigError("train_step past total_iters");
  const LossWeights w = cfg.weights_at(it);
  const double lr_gan = lr_schedule(cfg.optim_gan.lr, it, cfg.lr_milestones);
  const double lr_sr = cfg.optim_sr.lr;
  const bool use_hr = w.gamma > 0;
  const nn::Mode train = nn::Mode::training();
  const nn::Mode frozen{true, true, false};

  const Var<T> x = Var<T>::constant(batch.x);
  const Var<T> y = Var<T>::constant(batch.y);
  const Var<T> y_down = Var<T>::constant(batch.y_down);
  const Var<T> noise = Var<T>::constant(batch.noise);

  // Live generator graph, shared by steps 1 and 2.
  const Var<T> corrected = bundle.g_correct(x, train);
  const Var<T> degraded = bundle.g_degrade(y_down, noise, train);
  const Var<T> pseudo_clean = bundle.g_correct(degraded, train);
  Var<T> hr_real, hr_fake;
  if (use_hr) {
    hr_real = bundle.sr(corrected, frozen);
    hr_fake = bundle.sr(pseudo_clean, frozen);
  }

  LossReport report;

  // (1) discriminators
  bundle.zero_grad();
  {
    const Var<T> d_yd = discriminator_loss(bundle.d_lr_yd(y_down, train), bundle.d_lr_yd(corrected.detach(), train),
                                           cfg.gan_form);
    const Var<T> d_x = discriminator_loss(bundle.d_lr_x(x, train), bundle.d_lr_x(degraded.detach(), train), cfg.gan_form);
    std::vector<Var<T>> terms{d_yd, d_x};
    std::vector<T> coeffs{T(1), T(1)};
    if (use_hr) {
      const Var<T> d_hr = discriminator_loss(bundle.d_hr(hr_real.detach(), train), bundle.d_hr(hr_fake.detach(), train),
                                             cfg.gan_form);
      terms.push_back(d_hr);
      coeffs.push_back(static_cast<T>(w.gamma));
      report.d_hr = d_hr.item();
    }
    report.d_yd = d_yd.item();
    report.d_x = d_x.item();
    detail::check_finite(report.d_yd, "d_yd", it);
    detail::check_finite(report.d_x, "d_x", it);
    detail::check_finite(report.d_hr, "d_hr", it);
    backward(ops::weighted_sum(terms, coeffs));
    state.optimizer("d_lr_yd").step(bundle.d_lr_yd.params(), lr_gan);
    state.optimizer("d_lr_x").step(bundle.d_lr_x.params(), lr_gan);
    if (use_hr) state.optimizer("d_hr").step(bundle.d_hr.params(), lr_gan);
  }
  if (observer) observer(SubStep::discriminators);

  // (2) generators
  bundle.zero_grad();
  {
    auto g = [&](const Var<T>& v) { return bundle.g_correct(v, train); };
    TranslationParts<T> parts;
    parts.adv_yd = generator_loss(bundle.d_lr_yd(corrected, frozen), cfg.gan_form);
    parts.adv_x = generator_loss(bundle.d_lr_x(degraded, frozen), cfg.gan_form);
    parts.adv_hr = use_hr ? hr_generator_loss(bundle.d_hr(hr_real, frozen), bundle.d_hr(hr_fake, frozen), cfg.gan_form)
                          : Var<T>::constant(Tensor<T>(Shape{1, 1, 1, 1}));
    parts.cyc = cycle_loss(y_down, pseudo_clean);
    parts.idt = w.idt_mode == IdentityMode::source_lr ? ops::l1_mean(corrected, x)
                                                       : identity_loss<T>(g, x, y_down, IdentityMode::clean_lr);
    parts.geo = w.lambda_geo > 0 ? geometric_ensemble_loss<T>(g, x, corrected)
                                 : Var<T>::constant(Tensor<T>(Shape{1, 1, 1, 1}));
    const Var<T> total = total_translation_loss(parts, w);
    report.adv_x = parts.adv_x->item();
    report.adv_yd = parts.adv_yd->item();
    report.adv_hr = parts.adv_hr->item();
    report.cyc = parts.cyc->item();
    report.idt = parts.idt->item();
    report.geo = parts.geo->item();
    report.total_trans = total.item();
    for (const auto& [name, v] : report.fields()) detail::check_finite(v, name, it);
    backward(total);
    state.optimizer("g_correct").step(bundle.g_correct.params(), lr_gan);
    state.optimizer("g_degrade").step(bundle.g_degrade.params(), lr_gan);
  }
  if (observer) observer(SubStep::generators);

  // (3) SR network
  bundle.zero_grad();
  {
    Var<T> input;
    switch (cfg.variant) {
      case Variant::train_on_clean: input = y_down; break;
      case Variant::train_on_degraded: input = degraded.detach(); break;
      case Variant::full:
      case Variant::no_d_hr: input = pseudo_clean.detach(); break;
    }
    const Var<T> rec = reconstruction_loss(bundle.sr(input, train), y, cfg.reconstruction);
    report.rec = rec.item();
    detail::check_finite(report.rec, "rec", it);
    backward(rec);
    state.optimizer("sr").step(bundle.sr.params(), lr_sr);
  }
  bundle.zero_grad();
  if (observer) observer(SubStep::sr);

  ++state.iter;
  return report;
}

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::int64_t kCheckpointFormat = 1;

template <class T>
nn::Container make_checkpoint(const nn::NetworkBundle<T>& bundle, const TrainState<T>& state, const TrainConfig& cfg) {
  nn::Container c;
  c.put_i64("meta/format", kCheckpointFormat);
  c.put_bytes("meta/config", to_json(cfg).dump());
  c.put_i64("meta/iter", state.iter);
  c.put_bytes("meta/rng", state.rng.state());
  for (const auto& [name, store] : bundle.stores()) nn::put_store<T>(c, "params/" + name, *store);
  for (const auto& [name, opt] : state.optimizers) {
    c.put_i64("optim/" + name + "/step", opt.steps());
    const nn::ParameterStore<T>* store = nullptr;
    for (const auto& [n, s] : bundle.stores())
      if (n == name) store = s;
    const auto& params = store->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      c.put_tensor("optim/" + name + "/m/" + params[k].name, opt.first_moments()[k]);
      c.put_tensor("optim/" + name + "/v/" + params[k].name, opt.second_moments()[k]);
    }
  }
  return c;
}

template <class T>
void checkpoint_save(const nn::NetworkBundle<T>& bundle, const TrainState<T>& state, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  make_checkpoint(bundle, state, cfg).save(path);
}

template <class T>
struct LoadedCheckpoint {
  TrainConfig config;
  nn::NetworkBundle<T> bundle;
  TrainState<T> state;
};

inline TrainConfig checkpoint_config(const nn::Container& c) {
  if (!c.contains("meta/format")) throw CorruptCheckpointError("not a training checkpoint");
  const auto fmt = c.get_i64("meta/format");
  if (fmt != kCheckpointFormat)
    throw CheckpointVersionError("checkpoint format " + std::to_string(fmt) + ", expected " +
                                 std::to_string(kCheckpointFormat));
  try {
    return train_config_from_json(json::parse(c.get_bytes("meta/config")));
  } catch (const json::exception& e) {
    throw CorruptCheckpointError(std::string("bad embedded config: ") + e.what());
  }
}

template <class T>
LoadedCheckpoint<T> restore_checkpoint(const nn::Container& c) {
  TrainConfig cfg = checkpoint_config(c);
  auto bundle = nn::NetworkBundle<T>::build(cfg.networks, cfg.seed);
  for (auto& [name, store] : bundle.stores()) nn::get_store<T>(c, "params/" + name, *store);
  TrainState<T> state = TrainState<T>::init(cfg, bundle);
  state.iter = c.get_i64("meta/iter");
  state.rng.set_state(c.get_bytes("meta/rng"));
  for (auto& [name, opt] : state.optimizers) {
    opt.set_steps(c.get_i64("optim/" + name + "/step"));
    const nn::ParameterStore<T>* store = nullptr;
    for (const auto& [n, s] : bundle.stores())
      if (n == name) store = s;
    const auto& params = store->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      opt.first_moments()[k] = c.get_tensor<T>("optim/" + name + "/m/" + params[k].name);
      opt.second_moments()[k] = c.get_tensor<T>("optim/" + name + "/v/" + params[k].name);
      if (!(opt.first_moments()[k].shape() == params[k].node->value.shape()))
        throw CheckpointError("optimizer moment shape mismatch for " + name + "/" + params[k].name);
    }
  }
  return LoadedCheckpoint<T>{std::move(cfg), std::move(bundle), std::move(state)};
}

template <class T>
LoadedCheckpoint<T> checkpoint_load(const std::filesystem::path& path) {
  return restore_checkpoint<T>(nn::Container::load(path));
}

// ---- training driver ----------------------------------------------------------

struct RunOptions {
  std::filesystem::path out_dir;
  /// Resume from this checkpoint instead of initializing from the seed.
  std::optional<std::filesystem::path> resume;
  /// Called after every iteration with (iteration just finished, report).
  std::function<void(long, const LossReport&)> on_iteration;
};

struct RunArtifacts {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log;
  std::vector<std::filesystem::path> checkpoints;
};

inline json log_record(long iter, double lr_gan, double lr_sr, double lambda_geo, const LossReport& r) {
  json j{{"iter", iter}, {"lr_gan", lr_gan}, {"lr_sr", lr_sr}, {"lambda_geo", lambda_geo}};
  for (const auto& [k, v] : r.fields()) j[k] = v;
  return j;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, long iter) {
  char name[32];
  std::snprintf(name, sizeof name, "iter_%08ld.ckpt", iter);
  return out_dir / "checkpoints" / name;
}

namespace detail {

/// Keeps the log records with iter < `keep_before` (used when resuming).
inline void truncate_log(const std::filesystem::path& log, long keep_before) {
  if (!std::filesystem::exists(log)) return;
  std::ifstream is(log);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      if (json::parse(line).at("iter").get<long>() < keep_before) kept.push_back(line);
    } catch (const json::exception&) {
      break;  // torn final line of an interrupted run
    }
  }
  is.close();
  std::ofstream os(log, std::ios::trunc);
  for (const auto& l : kept) os << l << '\n';
}

}  // namespace detail

/// Runs train_step until total_iters, logging one JSON line per iteration and
/// checkpointing every cfg.checkpoint_every iterations plus a final checkpoint.
/// A non-finite loss aborts the run after writing `nonfinite.ckpt`.
template <class T = float>
RunArtifacts run_training(const TrainConfig& cfg, const UnpairedDataset& data, const RunOptions& opts) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);
  write_json_file(to_json(cfg), opts.out_dir / "config.resolved.json");

  std::optional<LoadedCheckpoint<T>> loaded;
  if (opts.resume) {
    loaded.emplace(checkpoint_load<T>(*opts.resume));
  } else {
    auto bundle = nn::NetworkBundle<T>::build(cfg.networks, cfg.seed);
    auto state = TrainState<T>::init(cfg, bundle);
    loaded.emplace(LoadedCheckpoint<T>{cfg, std::move(bundle), std::move(state)});
  }
  auto& bundle = loaded->bundle;
  auto& state = loaded->state;
  if (!(loaded->config.networks == cfg.networks))
    throw CheckpointError("checkpoint network configuration differs from the run configuration");

  RunArtifacts art;
  art.log = opts.out_dir / "loss_log.jsonl";
  detail::truncate_log(art.log, state.iter);
  std::ofstream log(art.log, std::ios::app);
  if (!log) throw IoError("cannot open loss log", art.log.string());

  while (state.iter < cfg.total_iters) {
    const long it = state.iter;
    const auto batch = draw_training_batch<T>(data, cfg, state.rng);
    LossReport report;
    try {
      report = train_step(bundle, batch, cfg, state);
    } catch (const NonFiniteLossError&) {
      checkpoint_save(bundle, state, cfg, opts.out_dir / "nonfinite.ckpt");
      throw;
    }
    log << log_record(it, lr_schedule(cfg.optim_gan.lr, it, cfg.lr_milestones), cfg.optim_sr.lr, cfg.lambda_geo_at(it),
                      report)
               .dump()
        << '\n'
        << std::flush;
    if (!log) throw IoError("write failed", art.log.string());
    if (opts.on_iteration) opts.on_iteration(it, report);
    if (cfg.checkpoint_every > 0 && state.iter % cfg.checkpoint_every == 0) {
      art.checkpoints.push_back(checkpoint_path(opts.out_dir, state.iter));
      checkpoint_save(bundle, state, cfg, art.checkpoints.back());
    }
  }
  art.final_checkpoint = opts.out_dir / "final.ckpt";
  checkpoint_save(bundle, state, cfg, art.final_checkpoint);
  return art;
}

}  // namespace pseudosr
