#pragma once

// JSON mapping for every configuration type. Missing keys keep their
// defaults; unknown keys are rejected so typos surface as config errors.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "pseudosr/imaging.hpp"
#include "pseudosr/losses.hpp"
#include "pseudosr/nn/networks.hpp"
#include "pseudosr/optim.hpp"

namespace pseudosr {

using json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(std::string("unknown key '") + k + "' in " + where);
}

template <class V>
void read(const json& j, const char* key, V& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

// ---- enums ----------------------------------------------------------------

inline std::string to_string(BlurKind k) {
  switch (k) {
    case BlurKind::none: return "none";
    case BlurKind::gaussian: return "gaussian";
    case BlurKind::motion: return "motion";
  }
  return "none";
}
inline BlurKind parse_blur_kind(const std::string& s) {
  if (s == "none") return BlurKind::none;
  if (s == "gaussian") return BlurKind::gaussian;
  if (s == "motion") return BlurKind::motion;
  throw ConfigError("unknown blur kind '" + s + "'");
}

inline std::string to_string(GanForm f) {
  switch (f) {
    case GanForm::nonsaturating: return "nonsaturating";
    case GanForm::minimax: return "minimax";
    case GanForm::lsgan: return "lsgan";
  }
  return "nonsaturating";
}
inline GanForm parse_gan_form(const std::string& s) {
  if (s == "nonsaturating") return GanForm::nonsaturating;
  if (s == "minimax") return GanForm::minimax;
  if (s == "lsgan") return GanForm::lsgan;
  throw ConfigError("unknown gan_form '" + s + "'");
}

inline std::string to_string(IdentityMode m) { return m == IdentityMode::clean_lr ? "clean_lr" : "source_lr"; }
inline IdentityMode parse_identity_mode(const std::string& s) {
  if (s == "clean_lr") return IdentityMode::clean_lr;
  if (s == "source_lr") return IdentityMode::source_lr;
  throw ConfigError("unknown idt_mode '" + s + "'");
}

// ---- DegradationSpec --------------------------------------------------------

inline json to_json(const DegradationSpec& d) {
  return json{{"blur", to_string(d.blur)},          {"blur_sigma", d.blur_sigma},
              {"motion_length", d.motion_length},   {"motion_angle_deg", d.motion_angle_deg},
              {"noise_sigma", d.noise_sigma},       {"shift_y", d.shift_y},
              {"shift_x", d.shift_x},               {"seed", d.seed}};
}
inline DegradationSpec degradation_from_json(const json& j) {
  detail::reject_unknown(j, {"blur", "blur_sigma", "motion_length", "motion_angle_deg", "noise_sigma", "shift_y",
                             "shift_x", "seed"},
                         "degradation");
  DegradationSpec d;
  std::string blur = to_string(d.blur);
  detail::read(j, "blur", blur);
  d.blur = parse_blur_kind(blur);
  detail::read(j, "blur_sigma", d.blur_sigma);
  detail::read(j, "motion_length", d.motion_length);
  detail::read(j, "motion_angle_deg", d.motion_angle_deg);
  detail::read(j, "noise_sigma", d.noise_sigma);
  detail::read(j, "shift_y", d.shift_y);
  detail::read(j, "shift_x", d.shift_x);
  detail::read(j, "seed", d.seed);
  d.validate();
  return d;
}

// ---- networks ---------------------------------------------------------------

inline json to_json(const nn::NetworkConfig& c) {
  return json{{"n_residual_groups", c.n_residual_groups},
              {"rcabs_per_group", c.rcabs_per_group},
              {"base_channels", c.base_channels},
              {"reduction", c.reduction},
              {"zero_tail", c.zero_tail}};
}
inline nn::NetworkConfig network_from_json(const json& j, nn::NetworkConfig c) {
  detail::reject_unknown(j, {"n_residual_groups", "rcabs_per_group", "base_channels", "reduction", "zero_tail"},
                         "network config");
  detail::read(j, "n_residual_groups", c.n_residual_groups);
  detail::read(j, "rcabs_per_group", c.rcabs_per_group);
  detail::read(j, "base_channels", c.base_channels);
  detail::read(j, "reduction", c.reduction);
  detail::read(j, "zero_tail", c.zero_tail);
  c.validate();
  return c;
}

inline json to_json(const nn::DegradationConfig& c) {
  return json{{"channels", c.channels}, {"main_blocks", c.main_blocks}, {"kernel", c.kernel}, {"slope", c.slope}};
}
inline nn::DegradationConfig degradation_net_from_json(const json& j, nn::DegradationConfig c) {
  detail::reject_unknown(j, {"channels", "main_blocks", "kernel", "slope"}, "degradation network config");
  detail::read(j, "channels", c.channels);
  detail::read(j, "main_blocks", c.main_blocks);
  detail::read(j, "kernel", c.kernel);
  detail::read(j, "slope", c.slope);
  c.validate();
  return c;
}

inline json to_json(const nn::DiscriminatorConfig& c) {
  return json{{"base_channels", c.base_channels}, {"kernel", c.kernel}, {"slope", c.slope}};
}
inline nn::DiscriminatorConfig discriminator_from_json(const json& j, nn::DiscriminatorConfig c) {
  detail::reject_unknown(j, {"base_channels", "kernel", "slope"}, "discriminator config");
  detail::read(j, "base_channels", c.base_channels);
  detail::read(j, "kernel", c.kernel);
  detail::read(j, "slope", c.slope);
  c.validate();
  return c;
}

inline json to_json(const nn::BundleConfig& c) {
  return json{{"correction", to_json(c.correction)},
              {"sr", to_json(c.sr)},
              {"degradation", to_json(c.degradation)},
              {"discriminator", to_json(c.discriminator)}};
}
/// `scale` lives at the top level of the run config, not in this object.
inline nn::BundleConfig bundle_from_json(const json& j, nn::BundleConfig c) {
  detail::reject_unknown(j, {"correction", "sr", "degradation", "discriminator"}, "networks");
  if (j.contains("correction")) c.correction = network_from_json(j.at("correction"), c.correction);
  if (j.contains("sr")) c.sr = network_from_json(j.at("sr"), c.sr);
  if (j.contains("degradation")) c.degradation = degradation_net_from_json(j.at("degradation"), c.degradation);
  if (j.contains("discriminator")) c.discriminator = discriminator_from_json(j.at("discriminator"), c.discriminator);
  return c;
}

// ---- losses / optimizer -----------------------------------------------------

inline json to_json(const LossWeights& w) {
  return json{{"lambda_cyc", w.lambda_cyc},
              {"lambda_idt", w.lambda_idt},
              {"lambda_geo", w.lambda_geo},
              {"gamma", w.gamma},
              {"idt_mode", to_string(w.idt_mode)}};
}
inline LossWeights weights_from_json(const json& j, LossWeights w) {
  detail::reject_unknown(j, {"lambda_cyc", "lambda_idt", "lambda_geo", "gamma", "idt_mode"}, "weights");
  detail::read(j, "lambda_cyc", w.lambda_cyc);
  detail::read(j, "lambda_idt", w.lambda_idt);
  detail::read(j, "lambda_geo", w.lambda_geo);
  detail::read(j, "gamma", w.gamma);
  std::string mode = to_string(w.idt_mode);
  detail::read(j, "idt_mode", mode);
  w.idt_mode = parse_identity_mode(mode);
  w.validate();
  return w;
}

inline json to_json(const OptimSpec& o) {
  return json{{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"epsilon", o.epsilon}};
}
inline OptimSpec optim_from_json(const json& j, OptimSpec o) {
  detail::reject_unknown(j, {"lr", "beta1", "beta2", "epsilon"}, "optimizer");
  detail::read(j, "lr", o.lr);
  detail::read(j, "beta1", o.beta1);
  detail::read(j, "beta2", o.beta2);
  detail::read(j, "epsilon", o.epsilon);
  o.validate();
  return o;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config", path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void write_json_file(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write", path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed", path.string());
}

}  // namespace pseudosr
