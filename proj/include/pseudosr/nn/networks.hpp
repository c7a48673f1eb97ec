#pragma once

// The six trainable networks:
//   g_correct (G_XY↓)  real LR -> clean LR, RCAN body without upsampler
//   g_degrade (G_Y↓X)  clean LR + noise -> real-looking LR
//   sr        (U)      clean LR -> HR, RCAN body with sub-pixel upsampler
//   d_lr_x, d_lr_yd    LR PatchGAN discriminators
//   d_hr      (D_X↑)   HR PatchGAN discriminator with strided head

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "pseudosr/errors.hpp"
#include "pseudosr/nn/layers.hpp"

namespace pseudosr::nn {

/// RCAN-style body configuration.
struct NetworkConfig {
  int n_residual_groups = 5;
  int rcabs_per_group = 10;
  int base_channels = 64;
  int reduction = 16;
  /// Zero-initialize the output conv so the correction network starts as the identity.
  bool zero_tail = false;

  void validate() const {
    if (n_residual_groups < 1 || rcabs_per_group < 1 || base_channels < 1 || reduction < 1)
      throw ConfigError("network config fields must be positive");
  }
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct DegradationConfig {
  int channels = 64;
  /// Residual blocks in the main module, split evenly around the middle fusion layer.
  int main_blocks = 6;
  int kernel = 5;
  double slope = 0.2;

  void validate() const {
    if (channels < 1 || main_blocks < 0 || kernel < 1 || kernel % 2 == 0)
      throw ConfigError("degradation config: channels/main_blocks must be positive and kernel odd");
  }
  friend bool operator==(const DegradationConfig&, const DegradationConfig&) = default;
};

/// Five-layer PatchGAN; widths base, 2·base, 4·base, 8·base, 1.
struct DiscriminatorConfig {
  int base_channels = 64;
  int kernel = 3;
  double slope = 0.2;

  void validate() const {
    if (base_channels < 1 || kernel < 1 || kernel % 2 == 0)
      throw ConfigError("discriminator config: base_channels must be positive and kernel odd");
  }
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

struct BundleConfig {
  int scale = 4;
  NetworkConfig correction{5, 10, 64, 16, false};
  NetworkConfig sr{5, 20, 64, 16, false};
  DegradationConfig degradation{};
  DiscriminatorConfig discriminator{};

  void validate() const {
    check_scale(scale);
    correction.validate();
    sr.validate();
    degradation.validate();
    discriminator.validate();
  }

  /// Published network sizes.
  static BundleConfig published(int scale = 4) {
    BundleConfig c;
    c.scale = scale;
    return c;
  }

  /// CPU-sized networks: 1 group x 2 RCABs with 16 channels.
  static BundleConfig desk(int scale = 2) {
    BundleConfig c;
    c.scale = scale;
    c.correction = {1, 2, 16, 4, true};
    c.sr = {1, 2, 16, 4, false};
    c.degradation = {16, 6, 5, 0.2};
    c.discriminator = {8, 3, 0.2};
    return c;
  }
  friend bool operator==(const BundleConfig&, const BundleConfig&) = default;
};

/// Counts forward invocations; shared so networks stay movable.
class CallCounter {
 public:
  void tick() const { ++*count_; }
  std::uint64_t count() const { return *count_; }

 private:
  std::shared_ptr<std::atomic<std::uint64_t>> count_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

/// RCAN-style network. With upscale == 1 it is the size-preserving correction
/// generator, whose output is input + tail(features). With upscale 2 or 4 it is
/// the SR network with a sub-pixel upsampler.
template <class T>
class RcanNetwork {
 public:
  RcanNetwork(const NetworkConfig& cfg, int upscale, Rng& rng) : upscale_(upscale) {
    cfg.validate();
    if (upscale != 1) check_scale(upscale);
    const int c = cfg.base_channels;
    head_ = Conv2d<T>(store_, "head", 3, c, 3, rng);
    for (int g = 0; g < cfg.n_residual_groups; ++g)
      groups_.emplace_back(store_, "body.group" + std::to_string(g), c, cfg.rcabs_per_group, cfg.reduction, rng);
    body_tail_ = Conv2d<T>(store_, "body.tail", c, c, 3, rng);
    for (int s = upscale; s > 1; s /= 2)
      upsample_.emplace_back(store_, "upsample" + std::to_string(upsample_.size()), c, 4 * c, 3, rng);
    tail_ = Conv2d<T>(store_, "tail", c, 3, 3, rng, 1, cfg.zero_tail);
  }
  RcanNetwork(RcanNetwork&&) noexcept = default;
  RcanNetwork& operator=(RcanNetwork&&) noexcept = default;
  RcanNetwork(const RcanNetwork&) = delete;
  RcanNetwork& operator=(const RcanNetwork&) = delete;

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    if (x.shape().c != 3) throw ShapeError("RCAN input must have 3 channels, got " + to_string(x.shape()));
    calls_.tick();
    const Var<T> shallow = head_(x, mode);
    Var<T> h = shallow;
    for (const auto& g : groups_) h = g(h, mode);
    h = ops::add(shallow, body_tail_(h, mode));  // long skip
    for (const auto& up : upsample_) h = ops::pixel_shuffle(up(h, mode), 2);
    Var<T> out = tail_(h, mode);
    return upscale_ == 1 ? ops::add(x, out) : out;
  }

  int upscale() const noexcept { return upscale_; }
  ParameterStore<T>& params() noexcept { return store_; }
  const ParameterStore<T>& params() const noexcept { return store_; }
  std::uint64_t forward_calls() const { return calls_.count(); }

 private:
  ParameterStore<T> store_;
  int upscale_;
  Conv2d<T> head_;
  std::vector<ResidualGroup<T>> groups_;
  Conv2d<T> body_tail_;
  std::vector<Conv2d<T>> upsample_;
  Conv2d<T> tail_;
  CallCounter calls_;
};

/// Noise-conditioned degradation generator.
///
/// Image head: conv + residual block on RGB. Noise head: conv + residual block
/// on a 1-channel N(0,1) raster. The concatenated features pass through
/// fusion(1x1) -> blocks -> fusion(1x1) -> blocks -> fusion(1x1, 3 channels).
/// Every conv except the final projection is followed by BN and LeakyReLU; the
/// projection is added to the input image.
template <class T>
class DegradationNetwork {
 public:
  DegradationNetwork(const DegradationConfig& cfg, Rng& rng) {
    cfg.validate();
    const int c = cfg.channels;
    image_in_ = ConvBnAct<T>(store_, "image_head.in", 3, c, cfg.kernel, cfg.slope, rng);
    image_block_ = ResidualBlock<T>(store_, "image_head.block", c, cfg.kernel, cfg.slope, rng);
    noise_in_ = ConvBnAct<T>(store_, "noise_head.in", 1, c, cfg.kernel, cfg.slope, rng);
    noise_block_ = ResidualBlock<T>(store_, "noise_head.block", c, cfg.kernel, cfg.slope, rng);
    fuse_in_ = ConvBnAct<T>(store_, "main.fuse0", 2 * c, c, 1, cfg.slope, rng);
    const int first = (cfg.main_blocks + 1) / 2;
    for (int b = 0; b < cfg.main_blocks; ++b) {
      auto& dst = b < first ? first_half_ : second_half_;
      dst.emplace_back(store_, "main.block" + std::to_string(b), c, cfg.kernel, cfg.slope, rng);
    }
    fuse_mid_ = ConvBnAct<T>(store_, "main.fuse1", c, c, 1, cfg.slope, rng);
    project_ = Conv2d<T>(store_, "main.fuse2", c, 3, 1, rng);
  }
  DegradationNetwork(DegradationNetwork&&) noexcept = default;
  DegradationNetwork& operator=(DegradationNetwork&&) noexcept = default;
  DegradationNetwork(const DegradationNetwork&) = delete;
  DegradationNetwork& operator=(const DegradationNetwork&) = delete;

  Var<T> operator()(const Var<T>& image, const Var<T>& noise, const Mode& mode) const {
    const Shape is = image.shape();
    const Shape ns = noise.shape();
    if (is.c != 3) throw ShapeError("degradation input must have 3 channels, got " + to_string(is));
    if (!(ns == Shape{is.n, 1, is.h, is.w}))
      throw ShapeError("noise raster " + to_string(ns) + " does not match image " + to_string(is));
    calls_.tick();
    auto fi = image_block_(image_in_(image, mode), mode);
    auto fn = noise_block_(noise_in_(noise, mode), mode);
    auto h = fuse_in_(ops::concat_channels(fi, fn), mode);
    for (const auto& b : first_half_) h = b(h, mode);
    h = fuse_mid_(h, mode);
    for (const auto& b : second_half_) h = b(h, mode);
    return ops::add(image, project_(h, mode));
  }

  ParameterStore<T>& params() noexcept { return store_; }
  const ParameterStore<T>& params() const noexcept { return store_; }
  std::uint64_t forward_calls() const { return calls_.count(); }

 private:
  ParameterStore<T> store_;
  ConvBnAct<T> image_in_, noise_in_;
  ResidualBlock<T> image_block_, noise_block_;
  ConvBnAct<T> fuse_in_, fuse_mid_;
  std::vector<ResidualBlock<T>> first_half_, second_half_;
  Conv2d<T> project_;
  CallCounter calls_;
};

/// Five-conv PatchGAN emitting raw logits. `downsample` is 1 for the LR
/// discriminators and the SR scale for the HR one; its log2 leading layers use
/// stride 2.
template <class T>
class PatchDiscriminator {
 public:
  PatchDiscriminator(const DiscriminatorConfig& cfg, int downsample, Rng& rng) : downsample_(downsample), slope_(cfg.slope) {
    cfg.validate();
    if (downsample != 1) check_scale(downsample);
    const int b = cfg.base_channels;
    const int widths[] = {3, b, 2 * b, 4 * b, 8 * b, 1};
    int strided = downsample == 4 ? 2 : (downsample == 2 ? 1 : 0);
    for (int l = 0; l < 5; ++l)
      layers_.emplace_back(store_, "conv" + std::to_string(l), widths[l], widths[l + 1], cfg.kernel, rng,
                           l < strided ? 2 : 1);
  }
  PatchDiscriminator(PatchDiscriminator&&) noexcept = default;
  PatchDiscriminator& operator=(PatchDiscriminator&&) noexcept = default;
  PatchDiscriminator(const PatchDiscriminator&) = delete;
  PatchDiscriminator& operator=(const PatchDiscriminator&) = delete;

  Var<T> operator()(const Var<T>& x, const Mode& mode) const {
    if (x.shape().c != 3) throw ShapeError("discriminator input must have 3 channels, got " + to_string(x.shape()));
    calls_.tick();
    Var<T> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](h, mode);
      if (l + 1 < layers_.size()) h = ops::leaky_relu(h, static_cast<T>(slope_));
    }
    return h;
  }

  /// Receptive field of one score, in input pixels.
  int receptive_field() const {
    int rf = 1;
    int jump = 1;
    for (const auto& l : layers_) {
      rf += (l.kernel() - 1) * jump;
      jump *= l.stride();
    }
    return rf;
  }

  int downsample() const noexcept { return downsample_; }
  ParameterStore<T>& params() noexcept { return store_; }
  const ParameterStore<T>& params() const noexcept { return store_; }
  std::uint64_t forward_calls() const { return calls_.count(); }

 private:
  ParameterStore<T> store_;
  int downsample_;
  double slope_;
  std::vector<Conv2d<T>> layers_;
  CallCounter calls_;
};

template <class T>
RcanNetwork<T> build_correction_generator(const NetworkConfig& cfg, Rng& rng) {
  return RcanNetwork<T>(cfg, 1, rng);
}

template <class T>
RcanNetwork<T> build_sr_network(const NetworkConfig& cfg, int scale, Rng& rng) {
  check_scale(scale);
  return RcanNetwork<T>(cfg, scale, rng);
}

template <class T>
DegradationNetwork<T> build_degradation_generator(const DegradationConfig& cfg, Rng& rng) {
  return DegradationNetwork<T>(cfg, rng);
}

template <class T>
PatchDiscriminator<T> build_lr_discriminator(const DiscriminatorConfig& cfg, Rng& rng) {
  return PatchDiscriminator<T>(cfg, 1, rng);
}

template <class T>
PatchDiscriminator<T> build_hr_discriminator(const DiscriminatorConfig& cfg, int scale, Rng& rng) {
  check_scale(scale);
  return PatchDiscriminator<T>(cfg, scale, rng);
}

/// All trainable networks of the method, with disjoint parameter sets.
template <class T>
struct NetworkBundle {
  BundleConfig config;
  RcanNetwork<T> g_correct;
  DegradationNetwork<T> g_degrade;
  RcanNetwork<T> sr;
  PatchDiscriminator<T> d_lr_x;
  PatchDiscriminator<T> d_lr_yd;
  PatchDiscriminator<T> d_hr;

  static NetworkBundle build(const BundleConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng root(seed);
    // One child stream per network so resizing one leaves the others' init unchanged.
    Rng r0 = root.fork(), r1 = root.fork(), r2 = root.fork(), r3 = root.fork(), r4 = root.fork(), r5 = root.fork();
    return NetworkBundle{cfg,
                         build_correction_generator<T>(cfg.correction, r0),
                         build_degradation_generator<T>(cfg.degradation, r1),
                         build_sr_network<T>(cfg.sr, cfg.scale, r2),
                         build_lr_discriminator<T>(cfg.discriminator, r3),
                         build_lr_discriminator<T>(cfg.discriminator, r4),
                         build_hr_discriminator<T>(cfg.discriminator, cfg.scale, r5)};
  }

  /// (network name, parameter store) in a fixed order.
  std::vector<std::pair<std::string, ParameterStore<T>*>> stores() {
    return {{"g_correct", &g_correct.params()}, {"g_degrade", &g_degrade.params()}, {"sr", &sr.params()},
            {"d_lr_x", &d_lr_x.params()},       {"d_lr_yd", &d_lr_yd.params()},     {"d_hr", &d_hr.params()}};
  }
  std::vector<std::pair<std::string, const ParameterStore<T>*>> stores() const {
    return {{"g_correct", &g_correct.params()}, {"g_degrade", &g_degrade.params()}, {"sr", &sr.params()},
            {"d_lr_x", &d_lr_x.params()},       {"d_lr_yd", &d_lr_yd.params()},     {"d_hr", &d_hr.params()}};
  }

  void zero_grad() {
    for (auto& [name, store] : stores()) store->zero_grad();
  }
};

}  // namespace pseudosr::nn
