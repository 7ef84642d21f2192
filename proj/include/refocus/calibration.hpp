#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "refocus/error.hpp"
#include "refocus/image.hpp"
#include "refocus/optics.hpp"
#include "refocus/render.hpp"
#include "refocus/shape.hpp"

namespace refocus {

// ---------------------------------------------------------------------------
// SSIM

inline constexpr int ssim_window = 11;
inline constexpr double ssim_sigma = 1.5;

namespace detail {

inline std::array<double, ssim_window> gaussian_taps() {
  std::array<double, ssim_window> taps{};
  double sum = 0.0;
  for (int i = 0; i < ssim_window; ++i) {
    const double x = i - ssim_window / 2;
    taps[i] = std::exp(-x * x / (2.0 * ssim_sigma * ssim_sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable "valid" filtering: output is (w-10) x (h-10).
inline std::vector<double> gaussian_valid(const std::vector<double>& src, int w, int h) {
  static const auto taps = gaussian_taps();
  const int ow = w - ssim_window + 1;
  const int oh = h - ssim_window + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    const double* s = src.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < ssim_window; ++k) acc += taps[k] * s[x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < ssim_window; ++k) acc += taps[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Single-scale SSIM on linear luma clamped to [0,1] (L = 1), 11x11 Gaussian
/// window with sigma 1.5, averaged over all fully contained window positions.
inline double ssim(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw Error(Errc::dimension_mismatch, "ssim inputs differ");
  if (std::min(a.width(), a.height()) < ssim_window) throw Error(Errc::too_small, "ssim needs min side >= 11");
  const int w = a.width();
  const int h = a.height();
  const std::size_t n = a.pixel_count();
  const GrayMap la = luma(a);
  const GrayMap lb = luma(b);
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::clamp<double>(la.data()[i], 0.0, 1.0);
    y[i] = std::clamp<double>(lb.data()[i], 0.0, 1.0);
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::gaussian_valid(x, w, h);
  const auto my = detail::gaussian_valid(y, w, h);
  const auto sxx = detail::gaussian_valid(xx, w, h);
  const auto syy = detail::gaussian_valid(yy, w, h);
  const auto sxy = detail::gaussian_valid(xy, w, h);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// Area downsampling

namespace detail {

// Exact-overlap box weights from a source axis of length n onto m < n cells.
inline std::vector<std::vector<std::pair<int, double>>> box_taps(int n, int m) {
  std::vector<std::vector<std::pair<int, double>>> taps(m);
  const double step = static_cast<double>(n) / m;
  for (int o = 0; o < m; ++o) {
    const double lo = o * step;
    const double hi = (o + 1) * step;
    for (int s = static_cast<int>(std::floor(lo)); s < std::min(n, static_cast<int>(std::ceil(hi))); ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) taps[o].emplace_back(s, overlap / step);
    }
  }
  return taps;
}

inline std::pair<int, int> fit_dims(int w, int h, int max_side) {
  if (std::max(w, h) <= max_side) return {w, h};
  if (w >= h) return {max_side, std::max(1, static_cast<int>(std::lround(static_cast<double>(h) * max_side / w)))};
  return {std::max(1, static_cast<int>(std::lround(static_cast<double>(w) * max_side / h))), max_side};
}

// Weighted box resample of `channels` interleaved planes; weight 0 marks holes.
inline std::vector<double> box_resample(std::span<const float> src, std::span<const unsigned char> valid, int w, int h,
                                        int channels, int ow, int oh, std::vector<double>* out_weight) {
  const auto tx = box_taps(w, ow);
  const auto ty = box_taps(h, oh);
  std::vector<double> out(static_cast<std::size_t>(ow) * oh * channels, 0.0);
  std::vector<double> weight(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const std::size_t o = static_cast<std::size_t>(oy) * ow + ox;
      double wsum = 0.0;
      for (const auto& [sy, wy] : ty[oy]) {
        for (const auto& [sx, wx] : tx[ox]) {
          const std::size_t s = static_cast<std::size_t>(sy) * w + sx;
          if (!valid.empty() && !valid[s]) continue;
          const double ww = wx * wy;
          wsum += ww;
          for (int c = 0; c < channels; ++c) out[o * channels + c] += ww * src[s * channels + c];
        }
      }
      weight[o] = wsum;
      if (wsum > 0.0) {
        for (int c = 0; c < channels; ++c) out[o * channels + c] /= wsum;
      }
    }
  }
  if (out_weight) *out_weight = std::move(weight);
  return out;
}

}  // namespace detail

/// Box-filter downsample so the longer side equals max_side; identity if it
/// already fits.
inline Image downscale_for_metric(const Image& img, int max_side) {
  if (max_side < 32) throw Error(Errc::invalid_argument, "max_side must be >= 32");
  const auto [ow, oh] = detail::fit_dims(img.width(), img.height(), max_side);
  if (ow == img.width() && oh == img.height()) return img;
  const auto values = detail::box_resample(img.data(), {}, img.width(), img.height(), 3, ow, oh, nullptr);
  Image out(ow, oh);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(values[i]);
  return out;
}

/// Validity-aware variant; an output pixel is valid if any source under it is.
inline DisparityMap downscale_for_metric(const DisparityMap& d, int max_side) {
  if (max_side < 32) throw Error(Errc::invalid_argument, "max_side must be >= 32");
  const auto [ow, oh] = detail::fit_dims(d.width(), d.height(), max_side);
  if (ow == d.width() && oh == d.height()) return d;
  std::vector<double> weight;
  const auto values = detail::box_resample(d.values(), d.validity(), d.width(), d.height(), 1, ow, oh, &weight);
  DisparityMap out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * ow + x;
      if (weight[i] > 0.0) {
        out.set(x, y, static_cast<float>(values[i]));
      } else {
        out.invalidate(x, y);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bokeh-level calibration

struct SearchBounds {
  double k_min = 0.0;
  double k_max = 64.0;
  double tolerance_px = 0.25;
  int coarse_samples = 8;
};

struct CalibrationResult {
  double k_star = 0.0;
  double ssim_at_k_star = 0.0;
  std::vector<std::pair<double, double>> trace;  // (K, SSIM) in evaluation order
  int iterations = 0;
};

inline void validate(const SearchBounds& b) {
  if (!(b.k_min >= 0.0) || !std::isfinite(b.k_min) || !std::isfinite(b.k_max) || !(b.k_max > b.k_min) ||
      !(b.tolerance_px > 0.0) || b.coarse_samples < 2) {
    throw Error(Errc::invalid_bounds, "need 0 <= k_min < k_max, tolerance > 0, coarse_samples >= 2");
  }
}

/// Radii below this are indistinguishable after rendering, so the log grid
/// starts here.
inline constexpr double coarse_grid_floor_px = 0.5;

/// Coarse grid: k_min plus coarse_samples log-spaced points over
/// [max(k_min, 0.5), k_max], ascending and de-duplicated.
inline std::vector<double> coarse_grid(const SearchBounds& b) {
  std::vector<double> grid{b.k_min};
  const double lo = std::max(b.k_min, coarse_grid_floor_px);
  const int m = b.coarse_samples;
  for (int i = 0; i < m; ++i) {
    const double t = static_cast<double>(i) / (m - 1);
    double k = lo < b.k_max ? lo * std::pow(b.k_max / lo, t) : b.k_min + t * (b.k_max - b.k_min);
    if (i == m - 1) k = b.k_max;
    k = std::clamp(k, b.k_min, b.k_max);
    if (k > grid.back()) grid.push_back(k);
  }
  return grid;
}

/// Maximizes `objective` over [k_min, k_max]: a coarse log grid, then
/// golden-section refinement inside the bracket around the coarse argmax
/// until the bracket is no wider than the tolerance.
inline CalibrationResult maximize_bokeh_level(const std::function<double(double)>& objective, const SearchBounds& b) {
  validate(b);
  CalibrationResult result;
  auto eval = [&](double k) {
    const double v = objective(k);
    result.trace.emplace_back(k, v);
    return v;
  };

  const std::vector<double> grid = coarse_grid(b);
  std::vector<double> scores;
  for (double k : grid) scores.push_back(eval(k));
  const auto best_it = std::max_element(scores.begin(), scores.end());
  const std::size_t i = static_cast<std::size_t>(best_it - scores.begin());
  double lo = grid[i == 0 ? 0 : i - 1];
  double hi = grid[std::min(i + 1, grid.size() - 1)];

  if (hi - lo > b.tolerance_px) {
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - ratio * (hi - lo);
    double d = lo + ratio * (hi - lo);
    double fc = eval(c);
    double fd = eval(d);
    for (;;) {
      const bool keep_left = fc >= fd;
      if (keep_left) {
        hi = d;
      } else {
        lo = c;
      }
      if (hi - lo <= b.tolerance_px) break;
      if (keep_left) {
        d = c;
        fd = fc;
        c = hi - ratio * (hi - lo);
        fc = eval(c);
      } else {
        c = d;
        fc = fd;
        d = lo + ratio * (hi - lo);
        fd = eval(d);
      }
    }
  }

  // Best overall; ties go to the smaller K.
  std::size_t best = 0;
  for (std::size_t t = 1; t < result.trace.size(); ++t) {
    const auto& [k, v] = result.trace[t];
    const auto& [bk, bv] = result.trace[best];
    if (v > bv || (v == bv && k < bk)) best = t;
  }
  result.k_star = result.trace[best].first;
  result.ssim_at_k_star = result.trace[best].second;
  result.iterations = static_cast<int>(result.trace.size());
  return result;
}

/// Upper bound on the number of objective evaluations for given bounds.
inline int max_calibration_iterations(const SearchBounds& b) {
  return b.coarse_samples +
         static_cast<int>(std::ceil(std::log((b.k_max - b.k_min) / b.tolerance_px) / std::log(1.0 / 0.618))) + 2;
}

inline constexpr int calibration_max_side = 512;

/// Chooses K maximizing SSIM between the render at K and the target. Works on
/// copies downscaled to `metric_max_side`; K is scaled by the downsampling
/// factor for rendering and reported in full-resolution units.
inline CalibrationResult calibrate_bokeh_level(const Image& aif, const DisparityMap& disparity, double focus_disparity,
                                               const Image& target, const ApertureShape& shape,
                                               const SearchBounds& bounds, const RenderConfig& cfg,
                                               int metric_max_side = calibration_max_side) {
  validate(bounds);
  validate(cfg);
  if (aif.width() != target.width() || aif.height() != target.height() || disparity.width() != aif.width() ||
      disparity.height() != aif.height()) {
    throw Error(Errc::dimension_mismatch, "aif, disparity and target must share dimensions");
  }
  const Image small_aif = downscale_for_metric(aif, metric_max_side);
  const Image small_target = downscale_for_metric(target, metric_max_side);
  const DisparityMap small_disp = downscale_for_metric(disparity, metric_max_side);
  const double scale = static_cast<double>(small_aif.width()) / aif.width();

  auto objective = [&](double k) {
    const DefocusMap def = defocus_map(small_disp, {focus_disparity, k * scale});
    return ssim(render_tiled(small_aif, def, small_disp, shape, cfg), small_target);
  };
  return maximize_bokeh_level(objective, bounds);
}

/// Re-evaluates the calibration objective at a single K.
inline double calibration_objective(const Image& aif, const DisparityMap& disparity, double focus_disparity,
                                    const Image& target, const ApertureShape& shape, double k,
                                    const RenderConfig& cfg, int metric_max_side = calibration_max_side) {
  const Image small_aif = downscale_for_metric(aif, metric_max_side);
  const Image small_target = downscale_for_metric(target, metric_max_side);
  const DisparityMap small_disp = downscale_for_metric(disparity, metric_max_side);
  const double scale = static_cast<double>(small_aif.width()) / aif.width();
  const DefocusMap def = defocus_map(small_disp, {focus_disparity, k * scale});
  return ssim(render_tiled(small_aif, def, small_disp, shape, cfg), small_target);
}

}  // namespace refocus
