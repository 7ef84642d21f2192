#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "refocus/error.hpp"
#include "refocus/exif.hpp"
#include "refocus/image.hpp"

namespace refocus {

/// Normalized inverse depth in [0,1]; larger is nearer. Invalid pixels hold 0.
class DisparityMap {
public:
  DisparityMap() = default;
  DisparityMap(int width, int height, float fill = 0.0f)
      : values_(width, height, fill), valid_(values_.pixel_count(), 1) {}

  int width() const noexcept { return values_.width(); }
  int height() const noexcept { return values_.height(); }

  float at(int x, int y) const { return values_.at(x, y); }
  bool valid(int x, int y) const { return valid_[index(x, y)] != 0; }

  void set(int x, int y, float d) {
    values_.at(x, y) = d;
    valid_[index(x, y)] = 1;
  }
  void invalidate(int x, int y) {
    values_.at(x, y) = 0.0f;
    valid_[index(x, y)] = 0;
  }

  std::span<const float> values() const noexcept { return values_.data(); }
  std::span<const unsigned char> validity() const noexcept { return valid_; }

  GrayMap as_gray() const { return values_; }

  bool operator==(const DisparityMap&) const = default;

private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width() + x; }

  GrayMap values_;
  std::vector<unsigned char> valid_;
};

/// Signed circle-of-confusion radius in pixels; positive in front of focus.
using DefocusMap = GrayMap;

struct FocusSpec {
  double focus_disparity = 0.0;
  double bokeh_level = 0.0;
};

/// Linearly interpolated quantile of an already sorted sample, q in [0,1].
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(Errc::invalid_argument, "quantile of empty sample");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

inline double median_of(std::vector<double> values) {
  if (values.empty()) throw Error(Errc::invalid_argument, "median of empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// 1/depth mapped so the 1st percentile goes to 0 and the 99th to 1.
inline DisparityMap disparity_from_depth(const DepthMap& depth) {
  std::vector<double> raw;
  raw.reserve(depth.valid_count());
  auto values = depth.values();
  auto validity = depth.validity();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (validity[i]) raw.push_back(1.0 / static_cast<double>(values[i]));
  }
  if (raw.empty()) throw Error(Errc::no_valid_pixels, "depth map has no valid pixels");
  std::vector<double> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted_quantile(sorted, 0.01);
  const double hi = sorted_quantile(sorted, 0.99);
  const double range = hi - lo;

  DisparityMap out(depth.width(), depth.height());
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (!depth.valid(x, y)) {
        out.invalidate(x, y);
        continue;
      }
      const double d = 1.0 / static_cast<double>(depth.at(x, y));
      const double n = range < 1e-9 ? 0.0 : std::clamp((d - lo) / range, 0.0, 1.0);
      out.set(x, y, static_cast<float>(n));
    }
  }
  return out;
}

/// Bokeh level from lens metadata: K = f^2 S1 / (2 F (S1 - f)) * pixel_ratio,
/// with the S1 -> infinity limit f^2 / (2 F) * pixel_ratio.
inline double bokeh_level_from_exif(const exif::LensMeta& meta, double pixel_ratio) {
  if (!(pixel_ratio > 0.0) || !std::isfinite(pixel_ratio)) {
    throw Error(Errc::invalid_argument, "pixel_ratio must be > 0");
  }
  if (!(meta.focal_length_mm > 0.0)) throw Error(Errc::missing_field, "focal length");
  if (!(meta.f_number > 0.0)) throw Error(Errc::missing_field, "f-number");
  if (!meta.focus_distance) throw Error(Errc::missing_field, "focus distance");
  const double f = meta.focal_length_mm;
  const double F = meta.f_number;
  if (meta.focus_distance->infinity) return f * f / (2.0 * F) * pixel_ratio;
  const double s1 = meta.focus_distance->mm;
  if (!(s1 > f)) throw Error(Errc::degenerate_focus, "focus distance must exceed focal length");
  return f * f * s1 / (2.0 * F * (s1 - f)) * pixel_ratio;
}

/// Median of valid disparities in the 5x5 neighbourhood of (x, y).
inline double focus_disparity_at(const DisparityMap& d, int x, int y) {
  if (x < 0 || y < 0 || x >= d.width() || y >= d.height()) {
    throw Error(Errc::invalid_argument, "focus point outside image");
  }
  std::vector<double> samples;
  samples.reserve(25);
  for (int yy = std::max(0, y - 2); yy <= std::min(d.height() - 1, y + 2); ++yy) {
    for (int xx = std::max(0, x - 2); xx <= std::min(d.width() - 1, x + 2); ++xx) {
      if (d.valid(xx, yy)) samples.push_back(d.at(xx, yy));
    }
  }
  if (samples.empty()) throw Error(Errc::no_valid_neighbors, "no valid disparity near focus point");
  return median_of(std::move(samples));
}

inline double focus_disparity_from_mask(const DisparityMap& d, const GrayMap& mask) {
  if (mask.width() != d.width() || mask.height() != d.height()) {
    throw Error(Errc::dimension_mismatch, "mask and disparity differ in size");
  }
  std::vector<double> samples;
  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      if (mask.at(x, y) > 0.5f && d.valid(x, y)) samples.push_back(d.at(x, y));
    }
  }
  if (samples.empty()) throw Error(Errc::empty_mask, "mask selects no valid pixels");
  return median_of(std::move(samples));
}

inline void validate(const FocusSpec& spec) {
  if (!(spec.bokeh_level >= 0.0) || !std::isfinite(spec.bokeh_level)) {
    throw Error(Errc::invalid_argument, "bokeh level must be finite and >= 0");
  }
  if (!(spec.focus_disparity >= 0.0 && spec.focus_disparity <= 1.0)) {
    throw Error(Errc::invalid_argument, "focus disparity must lie in [0,1]");
  }
}

/// r(p) = K * (d(p) - focus_disparity); invalid pixels get 0.
inline DefocusMap defocus_map(const DisparityMap& d, const FocusSpec& spec) {
  validate(spec);
  DefocusMap out(d.width(), d.height());
  auto values = d.values();
  auto validity = d.validity();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = validity[i] ? static_cast<float>(spec.bokeh_level * (static_cast<double>(values[i]) - spec.focus_disparity))
                         : 0.0f;
  }
  return out;
}

inline double max_abs(const GrayMap& m) {
  double best = 0.0;
  for (float v : m.data()) best = std::max(best, std::abs(static_cast<double>(v)));
  return best;
}

}  // namespace refocus
