#pragma once

// On-disk unpaired dataset:
//
//   <root>/hr/<name>.png       clean high-resolution images
//   <root>/lr/<name>.png       degraded low-resolution images
//   <root>/manifest.txt        one relative path per line ("hr/…" or "lr/…"),
//                              '#' starts a comment
//   <root>/degradations.json   per-LR-image DegradationSpec (written by make_dataset)

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pseudosr/config.hpp"
#include "pseudosr/image.hpp"
#include "pseudosr/imaging.hpp"

namespace pseudosr {

struct UnpairedDataset {
  std::vector<Image> lr;
  std::vector<Image> hr;
  std::vector<std::string> lr_names;
  std::vector<std::string> hr_names;
};

inline constexpr const char* kManifestName = "manifest.txt";

inline std::vector<std::string> read_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestName;
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset manifest", path.string());
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(is, line)) {
    line.erase(std::find_if(line.rbegin(), line.rend(), [](unsigned char ch) { return !std::isspace(ch); }).base(),
               line.end());
    if (line.empty() || line.front() == '#') continue;
    entries.push_back(line);
  }
  return entries;
}

inline void write_manifest(const std::filesystem::path& root, const std::vector<std::string>& entries) {
  const auto path = root / kManifestName;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write dataset manifest", path.string());
  os << "# pseudosr dataset manifest v1\n";
  for (const auto& e : entries) os << e << '\n';
}

inline UnpairedDataset load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset directory not found", root.string());
  UnpairedDataset ds;
  for (const auto& rel : read_manifest(root)) {
    const auto path = root / rel;
    if (rel.rfind("hr/", 0) == 0) {
      ds.hr.push_back(read_png(path));
      ds.hr_names.push_back(rel.substr(3));
    } else if (rel.rfind("lr/", 0) == 0) {
      ds.lr.push_back(read_png(path));
      ds.lr_names.push_back(rel.substr(3));
    } else {
      throw IoError("manifest entry outside hr/ or lr/", (root / kManifestName).string());
    }
  }
  if (ds.lr.empty() || ds.hr.empty()) throw IoError("dataset has an empty lr/ or hr/ pool", root.string());
  return ds;
}

/// Controls how degradation parameters are drawn per LR image.
struct DatasetRecipe {
  int scale = 2;
  /// LR variants per HR image.
  int multiplicity = 1;
  /// Base degradation applied to the predetermined downscale.
  DegradationSpec base;
  /// Relative jitter of blur strength and noise level, uniform in [1 - j, 1 + j].
  double jitter = 0.0;
  /// Maximum absolute sub-pixel shift, uniform in [-s, s] on each axis.
  double max_shift = 0.0;
  std::uint64_t seed = 0;
};

/// Per-image degradation: parameters are fixed within one image and vary across images.
inline DegradationSpec draw_degradation(const DatasetRecipe& recipe, Rng& rng) {
  DegradationSpec d = recipe.base;
  auto jit = [&](double v) { return recipe.jitter > 0 ? v * rng.uniform(1 - recipe.jitter, 1 + recipe.jitter) : v; };
  d.blur_sigma = jit(d.blur_sigma);
  d.motion_length = jit(d.motion_length);
  if (d.blur == BlurKind::motion && recipe.jitter > 0) d.motion_angle_deg = rng.uniform(0, 180);
  d.noise_sigma = jit(d.noise_sigma);
  if (recipe.max_shift > 0) {
    d.shift_y = rng.uniform(-recipe.max_shift, recipe.max_shift);
    d.shift_x = rng.uniform(-recipe.max_shift, recipe.max_shift);
  }
  d.seed = rng.next_u64();
  return d;
}

/// One degraded LR image: synth_degrade(predetermined_downscale(hr)).
inline Image degrade_lr(const Image& hr, int scale, const DegradationSpec& spec) {
  return synth_degrade(predetermined_downscale(hr, scale), spec);
}

/// Writes hr/, lr/ (multiplicity variants per source), manifest.txt and degradations.json.
inline void make_dataset(const std::vector<Image>& sources, const std::vector<std::string>& names,
                         const DatasetRecipe& recipe, const std::filesystem::path& out_dir) {
  if (sources.empty()) throw IoError("no source HR images", out_dir.string());
  if (sources.size() != names.size()) throw ConfigError("source/name count mismatch");
  if (recipe.multiplicity < 1) throw ConfigError("multiplicity must be >= 1");
  check_scale(recipe.scale);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "hr");
  fs::create_directories(out_dir / "lr");
  Rng rng(recipe.seed);
  std::vector<std::string> manifest;
  json specs = json::object();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::string stem = fs::path(names[i]).stem().string();
    const int h = sources[i].height() / recipe.scale * recipe.scale;
    const int w = sources[i].width() / recipe.scale * recipe.scale;
    const Image hr = sources[i].crop(0, 0, h, w);
    write_png(hr, out_dir / "hr" / (stem + ".png"));
    manifest.push_back("hr/" + stem + ".png");
    for (int k = 0; k < recipe.multiplicity; ++k) {
      const DegradationSpec spec = draw_degradation(recipe, rng);
      const std::string lr_name = stem + "_" + std::to_string(k) + ".png";
      write_png(degrade_lr(hr, recipe.scale, spec), out_dir / "lr" / lr_name);
      manifest.push_back("lr/" + lr_name);
      specs[lr_name] = to_json(spec);
    }
  }
  write_manifest(out_dir, manifest);
  write_json_file(specs, out_dir / "degradations.json");
}

/// All PNG files in a directory, sorted by file name.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("directory not found", dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pseudosr
