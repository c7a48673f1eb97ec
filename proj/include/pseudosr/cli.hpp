#pragma once

// Subcommands of the `pseudosr` tool. Exit codes: 0 success, 2 usage or
// configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pseudosr/config.hpp"
#include "pseudosr/dataset.hpp"
#include "pseudosr/evaluation.hpp"
#include "pseudosr/training.hpp"

#ifndef PSEUDOSR_VERSION
#define PSEUDOSR_VERSION "unknown"
#endif

namespace pseudosr::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

inline constexpr const char* kOutputRootEnv = "PSEUDOSR_OUTPUT_ROOT";

/// Default parent directory for outputs when --out is not given.
inline fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

inline void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}
inline void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

inline void write_run_manifest(const fs::path& dir, const std::string& command, const json& fields) {
  json j{{"command", command}, {"version", PSEUDOSR_VERSION}};
  for (const auto& [k, v] : fields.items()) j[k] = v;
  write_json_file(j, dir / "run.json");
}

// ---- make-dataset ---------------------------------------------------------------

struct MakeDatasetArgs {
  std::string sources;
  int synthetic = 0;
  int size = 64;
  std::string out;
  std::string degradation;
  int scale = 2;
  int multiplicity = 1;
  double blur_sigma = -1;
  double noise = -1;
  double jitter = 0;
  double max_shift = 0;
  std::uint64_t seed = 0;
};

inline int cmd_make_dataset(const MakeDatasetArgs& a, std::ostream& out) {
  if (a.sources.empty() == (a.synthetic <= 0)) throw ConfigError("give exactly one of --sources or --synthetic");
  DatasetRecipe r;
  r.scale = a.scale;
  r.multiplicity = a.multiplicity;
  r.jitter = a.jitter;
  r.max_shift = a.max_shift;
  r.seed = a.seed;
  if (!a.degradation.empty()) {
    require_file(a.degradation, "degradation config");
    r.base = degradation_from_json(read_json_file(a.degradation));
  } else {
    r.base.blur = BlurKind::gaussian;
    r.base.blur_sigma = 1.0;
  }
  if (a.blur_sigma >= 0) {
    r.base.blur = a.blur_sigma > 0 ? BlurKind::gaussian : BlurKind::none;
    r.base.blur_sigma = a.blur_sigma;
  }
  if (a.noise >= 0) r.base.noise_sigma = a.noise;
  r.base.validate();
  check_scale(r.scale);

  std::vector<Image> sources;
  std::vector<std::string> names;
  if (!a.sources.empty()) {
    require_dir(a.sources, "source directory");
    for (const auto& p : list_pngs(a.sources)) {
      sources.push_back(read_png(p));
      names.push_back(p.filename().string());
    }
    if (sources.empty()) throw ConfigError("no PNG files in " + a.sources);
  } else {
    Rng rng(a.seed ^ 0x5ce4e5ull);
    for (int i = 0; i < a.synthetic; ++i) {
      sources.push_back(synthetic_scene(a.size, a.size, rng));
      char name[32];
      std::snprintf(name, sizeof name, "scene_%04d.png", i);
      names.emplace_back(name);
    }
  }
  const fs::path dir = a.out.empty() ? output_root() / "dataset" : fs::path(a.out);
  make_dataset(sources, names, r, dir);
  out << "wrote " << sources.size() << " HR and " << sources.size() * r.multiplicity << " LR images to " << dir.string()
      << '\n';
  return kExitOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string variant;
  std::string resume;
  std::optional<long> iters;
  std::optional<int> batch;
  std::optional<std::uint64_t> seed;
  std::optional<long> checkpoint_every;
  long log_every = 100;
};

inline TrainConfig resolve_train_config(const TrainArgs& a) {
  json j = json::object();
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    j = read_json_file(a.config);
  }
  if (a.iters) j["total_iters"] = *a.iters;
  if (a.batch) j["batch"] = *a.batch;
  if (a.seed) j["seed"] = *a.seed;
  if (a.checkpoint_every) j["checkpoint_every"] = *a.checkpoint_every;
  if (!a.variant.empty()) j["variant"] = a.variant;
  return train_config_from_json(j);
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  require_dir(a.data, "dataset directory");
  if (!a.resume.empty()) require_file(a.resume, "checkpoint");
  TrainConfig cfg;
  if (!a.resume.empty() && a.config.empty()) {
    // Resume keeps the checkpoint's configuration unless flags override it.
    json j = to_json(checkpoint_config(nn::Container::load(a.resume)));
    if (a.iters) j["total_iters"] = *a.iters;
    if (a.batch) j["batch"] = *a.batch;
    if (a.seed) j["seed"] = *a.seed;
    if (a.checkpoint_every) j["checkpoint_every"] = *a.checkpoint_every;
    if (!a.variant.empty()) j["variant"] = a.variant;
    cfg = train_config_from_json(j);
  } else {
    cfg = resolve_train_config(a);
  }
  const UnpairedDataset data = load_dataset(a.data);
  const fs::path dir = a.out.empty() ? output_root() / ("train_" + to_string(cfg.variant) + "_s" + std::to_string(cfg.seed))
                                     : fs::path(a.out);
  fs::create_directories(dir);
  write_run_manifest(dir, "train",
                     json{{"config", a.config}, {"dataset", fs::absolute(a.data).string()},
                          {"output", fs::absolute(dir).string()}, {"seed", cfg.seed}, {"resume", a.resume}});
  RunOptions opts;
  opts.out_dir = dir;
  if (!a.resume.empty()) opts.resume = fs::path(a.resume);
  if (a.log_every > 0)
    opts.on_iteration = [&](long it, const LossReport& r) {
      if ((it + 1) % a.log_every == 0 || it + 1 == cfg.total_iters)
        out << "iter " << it + 1 << "/" << cfg.total_iters << " total_trans " << r.total_trans << " rec " << r.rec
            << std::endl;
    };
  const RunArtifacts art = run_training<float>(cfg, data, opts);
  out << "final checkpoint " << art.final_checkpoint.string() << '\n';
  return kExitOk;
}

// ---- infer ----------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string out;
  bool ensemble = false;
  bool sr_only = false;
  std::string suffix = "_sr";
  int scale = 0;
};

inline std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& s : inputs) {
    if (fs::is_directory(s)) {
      for (const auto& p : list_pngs(s)) files.push_back(p);
    } else {
      require_file(s, "input image");
      files.emplace_back(s);
    }
  }
  if (files.empty()) throw ConfigError("no input images");
  return files;
}

inline int cmd_infer(const InferArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  const auto files = expand_inputs(a.inputs);
  const auto ck = checkpoint_load<float>(a.checkpoint);
  if (a.scale != 0 && a.scale != ck.config.scale())
    throw CheckpointError("checkpoint is x" + std::to_string(ck.config.scale()) + ", requested x" +
                          std::to_string(a.scale));
  const InferPath path =
      a.sr_only || ck.config.variant == Variant::train_on_degraded ? InferPath::sr_only : InferPath::pipeline;
  const fs::path dir = a.out.empty() ? output_root() / "infer" : fs::path(a.out);
  fs::create_directories(dir);
  for (const auto& f : files) {
    const Image x = read_png(f);
    const Image y = a.ensemble ? self_ensemble_infer(ck.bundle, x, path) : infer(ck.bundle, x, path);
    const fs::path dst = dir / (f.stem().string() + a.suffix + ".png");
    write_png(y, dst);
    out << f.string() << " -> " << dst.string() << '\n';
  }
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string result;
  std::string reference;
  std::string out;
  std::string suffix = "_sr";
  bool quantized = false;
  int border = 0;
};

/// Pairs result files with reference files by name; a result may carry `suffix` before the extension.
inline std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> match_pairs(const fs::path& result,
                                                                                     const fs::path& reference,
                                                                                     const std::string& suffix) {
  std::map<std::string, fs::path> refs;
  for (const auto& p : list_pngs(reference)) refs[p.stem().string()] = p;
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> pairs;
  std::vector<std::string> unmatched;
  std::set<std::string> used;
  for (const auto& p : list_pngs(result)) {
    std::string stem = p.stem().string();
    auto it = refs.find(stem);
    if (it == refs.end() && !suffix.empty() && stem.size() > suffix.size() &&
        stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
      it = refs.find(stem.substr(0, stem.size() - suffix.size()));
    if (it == refs.end()) {
      unmatched.push_back("result/" + p.filename().string());
      continue;
    }
    used.insert(it->first);
    pairs.push_back({it->first, {p, it->second}});
  }
  for (const auto& [stem, p] : refs)
    if (!used.count(stem)) unmatched.push_back("reference/" + p.filename().string());
  if (!unmatched.empty()) {
    std::string msg = "unmatched files:";
    for (const auto& u : unmatched) msg += " " + u;
    throw ConfigError(msg);
  }
  if (pairs.empty()) throw ConfigError("no images to compare");
  return pairs;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_dir(a.result, "result directory");
  require_dir(a.reference, "reference directory");
  std::vector<std::pair<std::string, std::pair<Image, Image>>> images;
  for (const auto& [name, paths] : match_pairs(a.result, a.reference, a.suffix))
    images.push_back({name, {read_png(paths.first), read_png(paths.second)}});
  const MetricReport rep = evaluate(images, a.quantized ? EvalMode::quantized : EvalMode::exact, a.border);
  const json j = to_json(rep);
  if (!a.out.empty()) write_json_file(j, a.out);
  out << j.dump(2) << '\n';
  return kExitOk;
}

// ---- dump-intermediates ------------------------------------------------------------

struct DumpArgs {
  std::string checkpoint;
  std::string lr_image;
  std::string hr_image;
  std::string out;
  std::uint64_t noise_seed = 0;
};

inline int cmd_dump(const DumpArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.lr_image, "LR image");
  require_file(a.hr_image, "HR image");
  const auto ck = checkpoint_load<float>(a.checkpoint);
  const fs::path dir = a.out.empty() ? output_root() / "intermediates" : fs::path(a.out);
  for (const auto& p : dump_intermediates(ck.bundle, read_png(a.lr_image), read_png(a.hr_image), dir, a.noise_seed))
    out << p.string() << '\n';
  return kExitOk;
}

// ---- entry point ----------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Unpaired super-resolution with pseudo-supervision"};
  app.set_version_flag("--version", PSEUDOSR_VERSION);
  app.require_subcommand(1);

  MakeDatasetArgs md;
  auto* c_md = app.add_subcommand("make-dataset", "Build an unpaired hr/ + lr/ dataset");
  c_md->add_option("--sources", md.sources, "Directory of clean HR PNGs");
  c_md->add_option("--synthetic", md.synthetic, "Generate N synthetic HR scenes instead of reading --sources");
  c_md->add_option("--size", md.size, "Side of synthetic scenes")->capture_default_str();
  c_md->add_option("--out", md.out, "Output directory (default $" + std::string(kOutputRootEnv) + "/dataset)");
  c_md->add_option("--degradation", md.degradation, "JSON file with the base degradation");
  c_md->add_option("--scale", md.scale, "Downscale factor (2 or 4)")->capture_default_str();
  c_md->add_option("--multiplicity", md.multiplicity, "LR images per HR image")->capture_default_str();
  c_md->add_option("--blur-sigma", md.blur_sigma, "Gaussian blur sigma in LR pixels (0 disables)");
  c_md->add_option("--noise", md.noise, "Gaussian noise sigma");
  c_md->add_option("--jitter", md.jitter, "Relative per-image jitter of blur and noise")->capture_default_str();
  c_md->add_option("--max-shift", md.max_shift, "Maximum sub-pixel shift")->capture_default_str();
  c_md->add_option("--seed", md.seed, "Random seed")->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train all networks");
  c_tr->add_option("--config", tr.config, "Training config JSON (flags override it)");
  c_tr->add_option("--data", tr.data, "Dataset directory")->required();
  c_tr->add_option("--out", tr.out, "Run directory");
  c_tr->add_option("--variant", tr.variant, "full | no_d_hr | train_on_clean | train_on_degraded");
  c_tr->add_option("--resume", tr.resume, "Checkpoint to resume from");
  c_tr->add_option("--iters", tr.iters, "Total iterations");
  c_tr->add_option("--batch", tr.batch, "Batch size");
  c_tr->add_option("--seed", tr.seed, "Random seed");
  c_tr->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint interval (0 = final only)");
  c_tr->add_option("--log-every", tr.log_every, "Progress line interval (0 = silent)")->capture_default_str();

  InferArgs in;
  auto* c_in = app.add_subcommand("infer", "Super-resolve images");
  c_in->add_option("--checkpoint", in.checkpoint, "Training checkpoint")->required();
  c_in->add_option("--input", in.inputs, "Input PNG files or directories")->required();
  c_in->add_option("--out", in.out, "Output directory");
  c_in->add_flag("--ensemble", in.ensemble, "Average over the 8 flips/rotations");
  c_in->add_flag("--sr-only", in.sr_only, "Skip the correction network");
  c_in->add_option("--suffix", in.suffix, "Suffix appended to output names")->capture_default_str();
  c_in->add_option("--scale", in.scale, "Expected scale; fails if the checkpoint differs");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "PSNR/SSIM of results against references");
  c_ev->add_option("--result", ev.result, "Directory of result PNGs")->required();
  c_ev->add_option("--reference", ev.reference, "Directory of reference PNGs")->required();
  c_ev->add_option("--out", ev.out, "Write the JSON report here");
  c_ev->add_option("--suffix", ev.suffix, "Result-name suffix ignored when matching")->capture_default_str();
  c_ev->add_flag("--quantized", ev.quantized, "Score 8-bit quantized values");
  c_ev->add_option("--border", ev.border, "Pixels cropped from every side")->capture_default_str();

  DumpArgs du;
  auto* c_du = app.add_subcommand("dump-intermediates", "Write the eight intermediate images of the pipeline");
  c_du->add_option("--checkpoint", du.checkpoint, "Training checkpoint")->required();
  c_du->add_option("--lr", du.lr_image, "Real LR image x")->required();
  c_du->add_option("--hr", du.hr_image, "HR image y")->required();
  c_du->add_option("--out", du.out, "Output directory");
  c_du->add_option("--noise-seed", du.noise_seed, "Seed of the degradation noise")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_md) return cmd_make_dataset(md, out);
    if (*c_tr) return cmd_train(tr, out);
    if (*c_in) return cmd_infer(in, out);
    if (*c_ev) return cmd_eval(ev, out);
    if (*c_du) return cmd_dump(du, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UnsupportedScaleError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace pseudosr::cli
