#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pseudosr/dihedral.hpp"
#include "pseudosr/errors.hpp"
#include "pseudosr/tensor.hpp"

namespace pseudosr {

/// RGB raster with float samples in [0, 1], stored as three planes (R, G, B).
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f) : height_(height), width_(width) {
    if (height < 1 || width < 1)
      throw DimensionError("image extent must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
    data_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int c, int y, int x) noexcept { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  float at(int c, int y, int x) const noexcept {
    return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }
  float* plane(int c) noexcept { return data_.data() + c * plane_size(); }
  const float* plane(int c) const noexcept { return data_.data() + c * plane_size(); }

  std::vector<float>& samples() noexcept { return data_; }
  const std::vector<float>& samples() const noexcept { return data_; }

  /// Replaces NaN by 0 and clamps to [0, 1].
  Image& clamp() {
    for (auto& v : data_) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : (v > 0 ? 1.0f : 0.0f);
    return *this;
  }

  Image crop(int top, int left, int h, int w) const {
    if (top < 0 || left < 0 || top + h > height_ || left + w > width_)
      throw DimensionError("crop window outside image");
    Image out(h, w);
    for (int c = 0; c < kChannels; ++c)
      for (int y = 0; y < h; ++y)
        std::copy_n(plane(c) + static_cast<std::size_t>(top + y) * width_ + left, w,
                    out.plane(c) + static_cast<std::size_t>(y) * w);
    return out;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

inline Image dihedral(const Image& img, DihedralIndex op) {
  const auto [oh, ow] = op.output_extent(img.height(), img.width());
  const auto src = op.source_indices(img.height(), img.width());
  Image out(oh, ow);
  for (int c = 0; c < Image::kChannels; ++c) {
    const float* in = img.plane(c);
    float* o = out.plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) o[i] = in[src[i]];
  }
  return out;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Rounds every sample to the nearest 8-bit level.
inline Image quantize(const Image& img) {
  Image out = img;
  for (auto& v : out.samples()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

inline Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw IoError(std::string("cannot read PNG (") + png.message + ")", path.string());
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG (" + msg + ")", path.string());
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width));
  const std::size_t n = img.plane_size();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) img.plane(c)[i] = static_cast<float>(buf[3 * i + c]) / 255.0f;
  return img;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf(3 * img.plane_size());
  for (std::size_t i = 0; i < img.plane_size(); ++i)
    for (int c = 0; c < 3; ++c) buf[3 * i + c] = to_byte(img.plane(c)[i]);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError(std::string("cannot write PNG (") + png.message + ")", path.string());
}

/// Stacks equally sized images into an (n, 3, h, w) tensor.
template <class T>
Tensor<T> to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("to_tensor: empty image list");
  const int h = images.front().height();
  const int w = images.front().width();
  Tensor<T> out(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height() != h || images[n].width() != w) throw ShapeError("to_tensor: images differ in size");
    for (int c = 0; c < 3; ++c)
      std::transform(images[n].plane(c), images[n].plane(c) + images[n].plane_size(), out.plane(static_cast<int>(n), c),
                     [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <class T>
Tensor<T> to_tensor(const Image& image) {
  return to_tensor<T>(std::vector<Image>{image});
}

/// Extracts image `n` of a (b, 3, h, w) tensor without clamping.
template <class T>
Image to_image(const Tensor<T>& t, int n = 0) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("to_image: expected 3 channels, got " + to_string(s));
  Image img(s.h, s.w);
  for (int c = 0; c < 3; ++c)
    std::transform(t.plane(n, c), t.plane(n, c) + s.plane(), img.plane(c), [](T v) { return static_cast<float>(v); });
  return img;
}

}  // namespace pseudosr
