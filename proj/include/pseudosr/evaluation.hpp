#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "pseudosr/config.hpp"
#include "pseudosr/image.hpp"
#include "pseudosr/imaging.hpp"
#include "pseudosr/nn/networks.hpp"

namespace pseudosr {

/// Which networks run at test time.
enum class InferPath {
  pipeline,  // U(G_XY↓(x))
  sr_only,   // U(x), for models whose U was trained on degraded inputs
};

template <class T>
Image run_rcan(const nn::RcanNetwork<T>& net, const Image& x) {
  const Var<T> out = net(Var<T>::constant(to_tensor<T>(x)), nn::Mode::inference());
  return to_image(out.value());
}

/// G_XY↓(x), clamped.
template <class T>
Image correct(const nn::NetworkBundle<T>& bundle, const Image& x) {
  return run_rcan(bundle.g_correct, x).clamp();
}

/// U(G_XY↓(x)) (or U(x) for InferPath::sr_only), clamped to [0, 1].
template <class T>
Image infer(const nn::NetworkBundle<T>& bundle, const Image& x, InferPath path = InferPath::pipeline) {
  if (x.empty()) throw DimensionError("empty input image");
  const Var<T> in = Var<T>::constant(to_tensor<T>(x));
  const nn::Mode m = nn::Mode::inference();
  const Var<T> lr = path == InferPath::pipeline ? bundle.g_correct(in, m) : in;
  return to_image(bundle.sr(lr, m).value()).clamp();
}

/// 1/8 Σ_i T_i⁻¹(infer(T_i(x))).
template <class T>
Image self_ensemble_infer(const nn::NetworkBundle<T>& bundle, const Image& x, InferPath path = InferPath::pipeline) {
  std::vector<double> acc;
  Image out;
  for (DihedralIndex op : DihedralIndex::all()) {
    const Image branch = dihedral(infer(bundle, dihedral(x, op), path), op.inverse());
    if (acc.empty()) {
      acc.assign(branch.samples().size(), 0.0);
      out = Image(branch.height(), branch.width());
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += branch.samples()[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out.samples()[i] = static_cast<float>(acc[i] / DihedralIndex::kCount);
  return out;
}

// ---- metrics ------------------------------------------------------------------

/// PSNR of identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

enum class EvalMode { exact, quantized };

inline void require_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width())
    throw DimensionError(std::string(what) + ": size mismatch " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()));
}

inline Image crop_border(const Image& img, int border) {
  if (border <= 0) return img;
  return img.crop(border, border, img.height() - 2 * border, img.width() - 2 * border);
}

/// 10·log10(1 / MSE) over all channels of [0, 1] rasters.
inline double psnr(const Image& a, const Image& b, EvalMode mode = EvalMode::exact) {
  require_same_dims(a, b, "psnr");
  const Image qa = mode == EvalMode::quantized ? quantize(a) : a;
  const Image qb = mode == EvalMode::quantized ? quantize(b) : b;
  double se = 0;
  const auto& sa = qa.samples();
  const auto& sb = qb.samples();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = static_cast<double>(sa[i]) - sb[i];
    se += d * d;
  }
  if (se == 0) return kPsnrIdentical;
  return -10.0 * std::log10(se / static_cast<double>(sa.size()));
}

/// BT.601 luma.
inline std::vector<double> luma(const Image& img) {
  std::vector<double> y(img.plane_size());
  const float* r = img.plane(0);
  const float* g = img.plane(1);
  const float* b = img.plane(2);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return y;
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Mean SSIM over all fully contained windows of the luma planes.
inline double ssim(const Image& a, const Image& b, EvalMode mode = EvalMode::exact, const SsimParams& p = {}) {
  require_same_dims(a, b, "ssim");
  if (a.height() < p.window || a.width() < p.window)
    throw DimensionError("ssim needs images of at least " + std::to_string(p.window) + " pixels per side");
  const auto ya = luma(mode == EvalMode::quantized ? quantize(a) : a);
  const auto yb = luma(mode == EvalMode::quantized ? quantize(b) : b);
  const int h = a.height(), w = a.width(), k = p.window, r = k / 2;

  std::vector<double> g(k);
  double gs = 0;
  for (int i = 0; i < k; ++i) gs += g[i] = std::exp(-0.5 * (i - r) * (i - r) / (p.sigma * p.sigma));
  for (auto& v : g) v /= gs;

  // Separable filtering of a, b, a², b², ab with valid extent.
  const int oh = h - k + 1, ow = w - k + 1;
  std::array<std::vector<double>, 5> horiz, full;
  for (auto& v : horiz) v.assign(static_cast<std::size_t>(h) * ow, 0.0);
  for (auto& v : full) v.assign(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int t = 0; t < k; ++t) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x + t;
        const double va = ya[i], vb = yb[i];
        s[0] += g[t] * va;
        s[1] += g[t] * vb;
        s[2] += g[t] * va * va;
        s[3] += g[t] * vb * vb;
        s[4] += g[t] * va * vb;
      }
      for (int q = 0; q < 5; ++q) horiz[q][static_cast<std::size_t>(y) * ow + x] = s[q];
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int q = 0; q < 5; ++q) {
        double s = 0;
        for (int t = 0; t < k; ++t) s += g[t] * horiz[q][static_cast<std::size_t>(y + t) * ow + x];
        full[q][static_cast<std::size_t>(y) * ow + x] = s;
      }

  const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
  const double c2 = (p.k2 * p.range) * (p.k2 * p.range);
  double total = 0;
  for (std::size_t i = 0; i < full[0].size(); ++i) {
    const double mu_a = full[0][i], mu_b = full[1][i];
    const double va = full[2][i] - mu_a * mu_a;
    const double vb = full[3][i] - mu_b * mu_b;
    const double cov = full[4][i] - mu_a * mu_b;
    total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(full[0].size());
}

struct ImageScore {
  std::string name;
  double psnr_db = 0;
  double ssim = 0;
};

struct MetricReport {
  double psnr_db = 0;
  double ssim = 0;
  std::vector<ImageScore> images;
};

inline json psnr_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

inline json to_json(const MetricReport& r) {
  json per = json::array();
  for (const auto& s : r.images) per.push_back(json{{"name", s.name}, {"psnr_db", psnr_json(s.psnr_db)}, {"ssim", s.ssim}});
  return json{{"psnr_db", psnr_json(r.psnr_db)}, {"ssim", r.ssim}, {"images", per}};
}

/// Scores result/reference pairs; aggregates are plain means of the per-image values.
inline MetricReport evaluate(const std::vector<std::pair<std::string, std::pair<Image, Image>>>& pairs,
                             EvalMode mode = EvalMode::exact, int border = 0) {
  if (pairs.empty()) throw ConfigError("nothing to evaluate");
  MetricReport rep;
  for (const auto& [name, ab] : pairs) {
    const Image a = crop_border(ab.first, border);
    const Image b = crop_border(ab.second, border);
    rep.images.push_back({name, psnr(a, b, mode), ssim(a, b, mode)});
  }
  for (const auto& s : rep.images) {
    rep.psnr_db += s.psnr_db;
    rep.ssim += s.ssim;
  }
  rep.psnr_db /= static_cast<double>(rep.images.size());
  rep.ssim /= static_cast<double>(rep.images.size());
  return rep;
}

// ---- intermediate dumps ----------------------------------------------------------

inline const std::array<const char*, 8> kIntermediateNames = {
    "00_x.png",      "01_corrected_x.png",        "02_sr_corrected_x.png",       "03_y.png",
    "04_y_down.png", "05_degraded_y_down.png", "06_pseudo_clean_y_down.png", "07_sr_pseudo_clean.png"};

/// Writes x, G_XY↓(x), U(G_XY↓(x)), y, y↓, G_Y↓X(y↓), ẙ↓ and U(ẙ↓) under the
/// names in kIntermediateNames. The noise raster is drawn from `noise_seed`.
template <class T>
std::vector<std::filesystem::path> dump_intermediates(const nn::NetworkBundle<T>& bundle, const Image& x,
                                                      const Image& y, const std::filesystem::path& out_dir,
                                                      std::uint64_t noise_seed = 0) {
  const int scale = bundle.config.scale;
  const nn::Mode m = nn::Mode::inference();
  const Image y_down = predetermined_downscale(y, scale);
  const Image corrected = correct(bundle, x);
  const Image sr_corrected = infer(bundle, x);

  Rng rng(noise_seed);
  Tensor<T> noise(Shape{1, 1, y_down.height(), y_down.width()});
  for (auto& v : noise.storage()) v = static_cast<T>(rng.normal());
  const Image degraded =
      to_image(bundle.g_degrade(Var<T>::constant(to_tensor<T>(y_down)), Var<T>::constant(noise), m).value()).clamp();
  const Image pseudo_clean = correct(bundle, degraded);
  const Image sr_pseudo = run_rcan(bundle.sr, pseudo_clean).clamp();

  std::filesystem::create_directories(out_dir);
  const std::array<const Image*, 8> images = {&x, &corrected, &sr_corrected, &y, &y_down, &degraded, &pseudo_clean,
                                              &sr_pseudo};
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < images.size(); ++i) {
    written.push_back(out_dir / kIntermediateNames[i]);
    write_png(*images[i], written.back());
  }
  return written;
}

}  // namespace pseudosr
