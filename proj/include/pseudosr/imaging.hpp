#pragma once

// Resampling, blur, degradation synthesis and unaligned patch sampling.
//
// Conventions:
//  * Gaussian kernels are sampled on integer offsets, truncated at ±ceil(4σ)
//    and renormalized to unit mass.
//  * Blur uses reflect padding without edge repetition (dcb|abcd|cba).
//  * Bicubic resampling uses the a = -0.5 cubic, pixel-center alignment and
//    edge replication; no extra anti-aliasing (the pre-blur provides it).

#include <cmath>
#include <numbers>
#include <vector>

#include "pseudosr/dihedral.hpp"
#include "pseudosr/errors.hpp"
#include "pseudosr/image.hpp"
#include "pseudosr/rng.hpp"
#include "pseudosr/tensor.hpp"

namespace pseudosr {

/// Square, odd-sized, row-major convolution kernel.
struct Kernel2D {
  int radius = 0;
  std::vector<double> weights{1.0};

  int size() const noexcept { return 2 * radius + 1; }
  double at(int dy, int dx) const { return weights[static_cast<std::size_t>(dy + radius) * size() + (dx + radius)]; }

  static Kernel2D identity() { return {}; }

  void normalize() {
    double mass = 0;
    for (double w : weights) mass += w;
    if (!(mass > 0)) throw ConfigError("kernel has no mass");
    for (double& w : weights) w /= mass;
  }
};

/// Sampled 1-D Gaussian, truncated at ±ceil(4σ) and normalized.
inline std::vector<double> gaussian_taps(double sigma) {
  if (!(sigma > 0)) throw ConfigError("gaussian sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double mass = 0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    mass += taps[i + radius];
  }
  for (double& t : taps) t /= mass;
  return taps;
}

inline Kernel2D gaussian_kernel(double sigma) {
  const auto taps = gaussian_taps(sigma);
  Kernel2D k;
  k.radius = static_cast<int>(taps.size() / 2);
  k.weights.resize(taps.size() * taps.size());
  for (std::size_t y = 0; y < taps.size(); ++y)
    for (std::size_t x = 0; x < taps.size(); ++x) k.weights[y * taps.size() + x] = taps[y] * taps[x];
  k.normalize();
  return k;
}

/// Linear motion-blur kernel: a segment of `length` pixels at `angle_deg`,
/// rasterized with bilinear splatting.
inline Kernel2D motion_kernel(double length, double angle_deg) {
  if (!(length >= 0)) throw ConfigError("motion length must be non-negative");
  Kernel2D k;
  k.radius = static_cast<int>(std::ceil(length / 2.0)) + 1;
  k.weights.assign(static_cast<std::size_t>(k.size()) * k.size(), 0.0);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const int steps = std::max(1, static_cast<int>(std::ceil(length * 4)));
  for (int s = 0; s <= steps; ++s) {
    const double t = steps == 0 ? 0.0 : (static_cast<double>(s) / steps - 0.5) * length;
    const double px = t * std::cos(theta) + k.radius;
    const double py = -t * std::sin(theta) + k.radius;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int yy = y0 + dy;
        const int xx = x0 + dx;
        if (yy < 0 || xx < 0 || yy >= k.size() || xx >= k.size()) continue;
        k.weights[static_cast<std::size_t>(yy) * k.size() + xx] += (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
      }
  }
  k.normalize();
  return k;
}

/// Reflect-101 index mapping, valid for any offset.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i >= n ? period - i : i;
}

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

namespace detail {

/// Convolves every plane along one axis with symmetric-or-not taps centred at taps.size()/2.
inline Image convolve_axis(const Image& img, const std::vector<double>& taps, bool horizontal) {
  const int r = static_cast<int>(taps.size() / 2);
  const int h = img.height();
  const int w = img.width();
  Image out(h, w);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int t = -r; t <= r; ++t) {
          const int sy = horizontal ? y : reflect_index(y + t, h);
          const int sx = horizontal ? reflect_index(x + t, w) : x;
          acc += taps[t + r] * img.at(c, sy, sx);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0;
}

/// Resamples one axis to `out_len` samples; source coordinate of output o is (o + 0.5) * ratio - 0.5.
inline Image resample_axis(const Image& img, int out_len, double ratio, bool horizontal) {
  const int in_len = horizontal ? img.width() : img.height();
  const int oh = horizontal ? img.height() : out_len;
  const int ow = horizontal ? out_len : img.width();
  struct Taps {
    int idx[4];
    double w[4];
  };
  std::vector<Taps> table(out_len);
  for (int o = 0; o < out_len; ++o) {
    const double src = (o + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double f = src - base;
    for (int k = 0; k < 4; ++k) {
      table[o].idx[k] = clamp_index(base - 1 + k, in_len);
      table[o].w[k] = cubic_weight(f - (k - 1));
    }
  }
  Image out(oh, ow);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const Taps& t = table[horizontal ? x : y];
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.w[k] * (horizontal ? img.at(c, y, t.idx[k]) : img.at(c, t.idx[k], x));
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace detail

/// Separable Gaussian blur with reflect padding. Not clamped (linear).
inline Image gaussian_blur(const Image& img, double sigma) {
  const auto taps = gaussian_taps(sigma);
  return detail::convolve_axis(detail::convolve_axis(img, taps, true), taps, false);
}

/// Dense 2-D convolution with reflect padding. Not clamped (linear).
inline Image convolve(const Image& img, const Kernel2D& k) {
  const int h = img.height();
  const int w = img.width();
  Image out(h, w);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int dy = -k.radius; dy <= k.radius; ++dy)
          for (int dx = -k.radius; dx <= k.radius; ++dx)
            acc += k.at(dy, dx) * img.at(c, reflect_index(y + dy, h), reflect_index(x + dx, w));
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

/// Bicubic resize to an exact extent (pixel-center aligned). Not clamped.
inline Image bicubic_resize(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw DimensionError("bicubic_resize: empty target");
  const Image tmp = detail::resample_axis(img, out_w, static_cast<double>(img.width()) / out_w, true);
  return detail::resample_axis(tmp, out_h, static_cast<double>(img.height()) / out_h, false);
}

/// Plain bicubic upscaling (the reference baseline), clamped to [0, 1].
inline Image bicubic_upscale(const Image& img, int scale) {
  if (scale < 1) throw UnsupportedScaleError(scale);
  return bicubic_resize(img, img.height() * scale, img.width() * scale).clamp();
}

/// The fixed Y -> Y↓ operator: Gaussian blur with σ = scale / 2, then bicubic
/// decimation by `scale`. Result is clamped to [0, 1].
inline Image predetermined_downscale(const Image& img, int scale) {
  check_scale(scale);
  if (img.height() % scale != 0 || img.width() % scale != 0)
    throw DimensionError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         " not divisible by scale " + std::to_string(scale));
  const Image blurred = gaussian_blur(img, scale / 2.0);
  return bicubic_resize(blurred, img.height() / scale, img.width() / scale).clamp();
}

/// Sub-pixel translation: out(y, x) = in(y - dy, x - dx), bilinear, edge replicated.
inline Image shift(const Image& img, double dy, double dx) {
  if (dy == 0.0 && dx == 0.0) return img;
  const int h = img.height();
  const int w = img.width();
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sy = y - dy;
      const double sx = x - dx;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0;
      const double fx = sx - x0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double v00 = img.at(c, clamp_index(y0, h), clamp_index(x0, w));
        const double v01 = img.at(c, clamp_index(y0, h), clamp_index(x0 + 1, w));
        const double v10 = img.at(c, clamp_index(y0 + 1, h), clamp_index(x0, w));
        const double v11 = img.at(c, clamp_index(y0 + 1, h), clamp_index(x0 + 1, w));
        out.at(c, y, x) = static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
      }
    }
  return out;
}

enum class BlurKind { none, gaussian, motion };

/// Parameters of one synthetic degradation.
struct DegradationSpec {
  BlurKind blur = BlurKind::none;
  double blur_sigma = 0.0;       // gaussian
  double motion_length = 0.0;    // motion, pixels
  double motion_angle_deg = 0.0; // motion
  double noise_sigma = 0.0;      // additive N(0, σ²) in [0, 1] units
  double shift_y = 0.0;
  double shift_x = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be >= 0");
    if (blur == BlurKind::gaussian && !(blur_sigma > 0)) throw ConfigError("gaussian blur needs blur_sigma > 0");
    if (blur == BlurKind::motion && !(motion_length >= 0)) throw ConfigError("motion_length must be >= 0");
  }

  Kernel2D kernel() const {
    switch (blur) {
      case BlurKind::gaussian: return gaussian_kernel(blur_sigma);
      case BlurKind::motion: return motion_kernel(motion_length, motion_angle_deg);
      case BlurKind::none: break;
    }
    return Kernel2D::identity();
  }
};

/// blur -> shift -> additive Gaussian noise -> clamp. Deterministic in `spec.seed`.
inline Image synth_degrade(const Image& img, const DegradationSpec& spec) {
  spec.validate();
  Image out = img;
  if (spec.blur == BlurKind::gaussian)
    out = gaussian_blur(out, spec.blur_sigma);
  else if (spec.blur == BlurKind::motion)
    out = convolve(out, spec.kernel());
  out = shift(out, spec.shift_y, spec.shift_x);
  if (spec.noise_sigma > 0) {
    Rng rng(spec.seed);
    for (auto& v : out.samples()) v += static_cast<float>(spec.noise_sigma * rng.normal());
  }
  return out.clamp();
}

// ---- unaligned patch sampling ---------------------------------------------

struct PatchOrigin {
  int image = 0;
  int top = 0;
  int left = 0;
  DihedralIndex op = DihedralIndex::identity();
};

template <class T>
struct UnpairedBatch {
  Tensor<T> x;       // (b, 3, p, p) from the LR pool
  Tensor<T> y;       // (b, 3, p*s, p*s) from the HR pool
  Tensor<T> y_down;  // predetermined_downscale of each y patch
  std::vector<PatchOrigin> x_origin;
  std::vector<PatchOrigin> y_origin;
};

namespace detail {

inline std::vector<int> eligible(const std::vector<Image>& pool, int size) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].height() >= size && pool[i].width() >= size) idx.push_back(static_cast<int>(i));
  return idx;
}

inline Image draw_patch(const std::vector<Image>& pool, const std::vector<int>& candidates, int size, Rng& rng,
                        PatchOrigin& origin) {
  origin.image = candidates[rng.below(static_cast<int>(candidates.size()))];
  const Image& src = pool[origin.image];
  origin.top = rng.below(src.height() - size + 1);
  origin.left = rng.below(src.width() - size + 1);
  origin.op = DihedralIndex(1 + rng.below(DihedralIndex::kCount));
  return dihedral(src.crop(origin.top, origin.left, size, size), origin.op);
}

}  // namespace detail

/// Draws `batch` LR patches and, independently, `batch` HR patches plus their
/// predetermined downscales. Each patch gets a random dihedral augmentation.
/// The LR and HR draws use separate child streams forked from `rng`, so the
/// choice of one never depends on the other.
template <class T>
UnpairedBatch<T> sample_unaligned_batch(const std::vector<Image>& lr_pool, const std::vector<Image>& hr_pool,
                                        int lr_patch, int scale, int batch, Rng& rng) {
  check_scale(scale);
  if (lr_pool.empty() || hr_pool.empty()) throw SamplingError("image pools must be non-empty");
  if (lr_patch < 1 || batch < 1) throw SamplingError("patch size and batch must be positive");
  const int hr_patch = lr_patch * scale;
  const auto lr_ok = detail::eligible(lr_pool, lr_patch);
  const auto hr_ok = detail::eligible(hr_pool, hr_patch);
  if (lr_ok.empty()) throw SamplingError("no LR image can hold a " + std::to_string(lr_patch) + "px patch");
  if (hr_ok.empty()) throw SamplingError("no HR image can hold a " + std::to_string(hr_patch) + "px patch");

  Rng x_rng = rng.fork();
  Rng y_rng = rng.fork();
  UnpairedBatch<T> out;
  std::vector<Image> xs, ys, yds;
  out.x_origin.resize(batch);
  out.y_origin.resize(batch);
  for (int b = 0; b < batch; ++b) {
    xs.push_back(detail::draw_patch(lr_pool, lr_ok, lr_patch, x_rng, out.x_origin[b]));
    ys.push_back(detail::draw_patch(hr_pool, hr_ok, hr_patch, y_rng, out.y_origin[b]));
    yds.push_back(predetermined_downscale(ys.back(), scale));
  }
  out.x = to_tensor<T>(xs);
  out.y = to_tensor<T>(ys);
  out.y_down = to_tensor<T>(yds);
  return out;
}

// ---- procedural content ---------------------------------------------------

/// Random scene of overlapping shapes over a colour gradient, rendered with
/// 4x4 supersampling. Used to build self-contained training sets.
inline Image synthetic_scene(int height, int width, Rng& rng) {
  struct Shape2D {
    int kind;  // 0 disc, 1 box, 2 stripes
    double cy, cx, a, b, angle, period;
    float rgb[3];
  };
  auto colour = [&](float* c) {
    for (int i = 0; i < 3; ++i) c[i] = static_cast<float>(rng.uniform(0.05, 0.95));
  };
  float c0[3], c1[3];
  colour(c0);
  colour(c1);
  const double gangle = rng.uniform(0, 2 * std::numbers::pi);
  std::vector<Shape2D> shapes(3 + rng.below(4));
  for (auto& s : shapes) {
    s.kind = rng.below(3);
    s.cy = rng.uniform(0, height);
    s.cx = rng.uniform(0, width);
    s.a = rng.uniform(0.1, 0.35) * std::min(height, width);
    s.b = rng.uniform(0.1, 0.35) * std::min(height, width);
    s.angle = rng.uniform(0, std::numbers::pi);
    s.period = rng.uniform(3.0, 9.0);
    colour(s.rgb);
  }
  constexpr int kSub = 4;
  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double py = y + (sy + 0.5) / kSub;
          const double px = x + (sx + 0.5) / kSub;
          const double t = 0.5 + std::sin(gangle) * (py / height - 0.5) + std::cos(gangle) * (px / width - 0.5);
          float v[3];
          for (int c = 0; c < 3; ++c) v[c] = static_cast<float>((1 - t) * c0[c] + t * c1[c]);
          for (const auto& s : shapes) {
            const double dy = py - s.cy;
            const double dx = px - s.cx;
            const double u = dx * std::cos(s.angle) + dy * std::sin(s.angle);
            const double w = -dx * std::sin(s.angle) + dy * std::cos(s.angle);
            bool inside = false;
            if (s.kind == 0)
              inside = (u * u) / (s.a * s.a) + (w * w) / (s.b * s.b) <= 1.0;
            else if (s.kind == 1)
              inside = std::abs(u) <= s.a && std::abs(w) <= s.b;
            else
              inside = std::abs(u) <= s.a && std::abs(w) <= s.b && std::fmod(std::abs(u), s.period) < s.period / 2;
            if (inside)
              for (int c = 0; c < 3; ++c) v[c] = s.rgb[c];
          }
          for (int c = 0; c < 3; ++c) acc[c] += v[c];
        }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(acc[c] / (kSub * kSub));
    }
  return img.clamp();
}

}  // namespace pseudosr
