#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "refocus/error.hpp"

namespace refocus {

/// Linear-light RGB raster. Values are non-negative and may exceed 1.
class Image {
public:
  static constexpr int channels = 3;

  Image() = default;
  Image(int width, int height, float fill = 0.0f) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw Error(Errc::invalid_argument, "image dimensions must be >= 1");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int x, int y, int c) { return data_[index(x, y) + c]; }
  float at(int x, int y, int c) const { return data_[index(x, y) + c]; }

  void set(int x, int y, float r, float g, float b) {
    const std::size_t i = index(x, y);
    data_[i] = r;
    data_[i + 1] = g;
    data_[i + 2] = b;
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

private:
  std::size_t index(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Single-channel real raster (luma, masks, work buffers).
class GrayMap {
public:
  GrayMap() = default;
  GrayMap(int width, int height, float fill = 0.0f) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw Error(Errc::invalid_argument, "map dimensions must be >= 1");
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return data_.size(); }

  float& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const GrayMap&) const = default;

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Metric depth in meters with explicit per-pixel validity.
class DepthMap {
public:
  DepthMap() = default;
  DepthMap(int width, int height, float fill = 1.0f) : depth_(width, height, fill), valid_(depth_.pixel_count(), 1) {
    refresh_validity();
  }

  /// Builds from raw values; non-positive and non-finite entries become invalid.
  static DepthMap from_values(int width, int height, std::span<const float> meters) {
    DepthMap d(width, height);
    if (meters.size() != d.depth_.pixel_count()) throw Error(Errc::invalid_argument, "depth value count mismatch");
    std::copy(meters.begin(), meters.end(), d.depth_.data().begin());
    d.refresh_validity();
    return d;
  }

  int width() const noexcept { return depth_.width(); }
  int height() const noexcept { return depth_.height(); }

  float at(int x, int y) const { return depth_.at(x, y); }
  bool valid(int x, int y) const { return valid_[static_cast<std::size_t>(y) * width() + x] != 0; }

  void set(int x, int y, float meters) {
    depth_.at(x, y) = meters;
    valid_[static_cast<std::size_t>(y) * width() + x] = is_valid_depth(meters);
  }

  std::span<const float> values() const noexcept { return depth_.data(); }
  std::span<const unsigned char> validity() const noexcept { return valid_; }

  std::size_t valid_count() const noexcept {
    return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), 1));
  }

private:
  static unsigned char is_valid_depth(float v) { return (std::isfinite(v) && v > 0.0f) ? 1 : 0; }

  void refresh_validity() {
    auto values = depth_.data();
    for (std::size_t i = 0; i < values.size(); ++i) valid_[i] = is_valid_depth(values[i]);
  }

  GrayMap depth_;
  std::vector<unsigned char> valid_;
};

// sRGB transfer functions, standard piecewise definition.
inline double srgb_decode(double v) {
  if (v <= 0.04045) return v / 12.92;
  return std::pow((v + 0.055) / 1.055, 2.4);
}

inline double srgb_encode(double linear) {
  if (linear <= 0.0031308) return linear * 12.92;
  return 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

inline constexpr std::array<double, 3> rec709_weights{0.2126, 0.7152, 0.0722};

inline GrayMap luma(const Image& img) {
  GrayMap out(img.width(), img.height());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<float>(rec709_weights[0] * src[3 * i] + rec709_weights[1] * src[3 * i + 1] +
                                rec709_weights[2] * src[3 * i + 2]);
  }
  return out;
}

/// Population variance of the 4-neighbour Laplacian over interior pixels.
inline double laplacian_variance(const GrayMap& g) {
  if (g.width() < 3 || g.height() < 3) throw Error(Errc::too_small, "laplacian_variance needs at least 3x3");
  const std::size_t n = static_cast<std::size_t>(g.width() - 2) * (g.height() - 2);
  std::vector<double> responses;
  responses.reserve(n);
  for (int y = 1; y + 1 < g.height(); ++y) {
    for (int x = 1; x + 1 < g.width(); ++x) {
      const double r = double(g.at(x - 1, y)) + g.at(x + 1, y) + g.at(x, y - 1) + g.at(x, y + 1) - 4.0 * g.at(x, y);
      responses.push_back(r);
    }
  }
  double mean = 0.0;
  for (double r : responses) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : responses) var += (r - mean) * (r - mean);
  return var / static_cast<double>(n);
}

/// Mean forward-difference gradient magnitude of the luma channel.
inline double mean_gradient_magnitude(const GrayMap& g) {
  if (g.width() < 2 || g.height() < 2) throw Error(Errc::too_small, "gradient needs at least 2x2");
  double sum = 0.0;
  for (int y = 0; y + 1 < g.height(); ++y) {
    for (int x = 0; x + 1 < g.width(); ++x) {
      const double gx = double(g.at(x + 1, y)) - g.at(x, y);
      const double gy = double(g.at(x, y + 1)) - g.at(x, y);
      sum += std::sqrt(gx * gx + gy * gy);
    }
  }
  return sum / (static_cast<double>(g.width() - 1) * (g.height() - 1));
}

}  // namespace refocus
