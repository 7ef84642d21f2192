#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "refocus/error.hpp"
#include "refocus/image.hpp"
#include "refocus/optics.hpp"
#include "refocus/parallel.hpp"
#include "refocus/shape.hpp"

namespace refocus {

enum class BoundaryMode { clamp, wrap };

struct RenderConfig {
  double highlight_boost_gamma = 2.2;
  double occlusion_softness_delta = 0.05;
  double min_radius_px = 0.5;
  BoundaryMode boundary_mode = BoundaryMode::clamp;
  int tile_size_px = 512;
  unsigned threads = 0;  // 0 = hardware concurrency
};

inline void validate(const RenderConfig& cfg) {
  if (!(cfg.highlight_boost_gamma >= 1.0) || !std::isfinite(cfg.highlight_boost_gamma)) {
    throw Error(Errc::invalid_argument, "gamma must be >= 1");
  }
  if (!(cfg.occlusion_softness_delta > 0.0)) throw Error(Errc::invalid_argument, "occlusion delta must be > 0");
  if (!(cfg.min_radius_px > 0.0)) throw Error(Errc::invalid_argument, "min radius must be > 0");
  if (cfg.tile_size_px < 64) throw Error(Errc::invalid_argument, "tile size must be >= 64");
}

/// Kernel radii are snapped to this many steps per pixel so kernels can be
/// shared between pixels with nearly equal blur.
inline constexpr double radius_steps_per_px = 32.0;

/// Effective splat radius for a signed defocus value.
inline double splat_radius(double defocus, double min_radius_px) {
  if (defocus == 0.0) return 0.0;
  const double r = std::max(std::abs(defocus), min_radius_px);
  return std::round(r * radius_steps_per_px) / radius_steps_per_px;
}

namespace detail {

// Nonzero kernel weights as horizontal runs.
struct KernelRuns {
  struct Run {
    int dy;
    int dx0;
    int length;
    std::size_t offset;
  };
  int half_extent = 0;
  std::vector<Run> runs;
  std::vector<double> weights;
};

inline KernelRuns to_runs(const Kernel& k) {
  KernelRuns out;
  out.half_extent = k.half_extent;
  const int n = k.size();
  for (int j = 0; j < n; ++j) {
    int i = 0;
    while (i < n) {
      while (i < n && k.weights[static_cast<std::size_t>(j) * n + i] == 0.0) ++i;
      if (i == n) break;
      const int start = i;
      while (i < n && k.weights[static_cast<std::size_t>(j) * n + i] != 0.0) ++i;
      KernelRuns::Run run{j - k.half_extent, start - k.half_extent, i - start, out.weights.size()};
      for (int t = start; t < i; ++t) out.weights.push_back(k.weights[static_cast<std::size_t>(j) * n + t]);
      out.runs.push_back(run);
    }
  }
  return out;
}

inline int wrap_index(int v, int n) {
  const int m = v % n;
  return m < 0 ? m + n : m;
}

}  // namespace detail

/// Occlusion-aware scatter with weighted-average normalization.
///
/// Each source pixel is raised to gamma, splatted through the aperture kernel
/// at its defocus radius, and gated by omega = 1 when the source is at least
/// as near as the target, fading linearly to 0 over `occlusion_softness_delta`
/// of disparity otherwise. Output is C/W (or the boosted source where W is
/// ~0), raised back by 1/gamma.
inline Image render_bokeh(const Image& aif, const DefocusMap& defocus, const DisparityMap& disparity,
                          const ApertureShape& shape, const RenderConfig& cfg) {
  validate(cfg);
  const int width = aif.width();
  const int height = aif.height();
  if (defocus.width() != width || defocus.height() != height || disparity.width() != width ||
      disparity.height() != height) {
    throw Error(Errc::dimension_mismatch, "image, defocus and disparity must share dimensions");
  }
  const std::size_t n = aif.pixel_count();
  const double gamma = cfg.highlight_boost_gamma;

  std::vector<double> boosted(n * 3);
  {
    auto src = aif.data();
    for (std::size_t i = 0; i < boosted.size(); ++i) {
      boosted[i] = gamma == 1.0 ? src[i] : std::pow(static_cast<double>(src[i]), gamma);
    }
  }

  // One kernel per distinct snapped radius.
  std::vector<detail::KernelRuns> kernels;
  std::vector<std::int32_t> kernel_of(n);
  {
    std::unordered_map<std::int64_t, std::int32_t> index_of;
    std::vector<double> radii;
    auto def = defocus.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double r = splat_radius(def[i], cfg.min_radius_px);
      const auto key = static_cast<std::int64_t>(std::llround(r * radius_steps_per_px));
      auto [it, inserted] = index_of.try_emplace(key, static_cast<std::int32_t>(radii.size()));
      if (inserted) radii.push_back(r);
      kernel_of[i] = it->second;
    }
    kernels.resize(radii.size());
    parallel_for(radii.size(), cfg.threads,
                 [&](std::size_t k) { kernels[k] = detail::to_runs(rasterize_kernel(shape, radii[k])); });
  }
  int max_half = 0;
  for (const auto& k : kernels) max_half = std::max(max_half, k.half_extent);

  auto disp = disparity.values();
  const double inv_delta = 1.0 / cfg.occlusion_softness_delta;
  const bool wrap = cfg.boundary_mode == BoundaryMode::wrap;

  // Accumulators: r, g, b, weight per target pixel.
  std::vector<double> acc(n * 4, 0.0);

  // Each band owns a disjoint range of target rows, so bands never share
  // accumulator cells and per-target summation order is the source order.
  const unsigned bands = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(cfg.threads), height));
  parallel_for(bands, cfg.threads, [&](std::size_t band) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(height) * band / bands);
    const int y1 = static_cast<int>(static_cast<std::int64_t>(height) * (band + 1) / bands);
    const int sy0 = wrap ? 0 : std::max(0, y0 - max_half);
    const int sy1 = wrap ? height : std::min(height, y1 + max_half);
    for (int py = sy0; py < sy1; ++py) {
      for (int px = 0; px < width; ++px) {
        const std::size_t p = static_cast<std::size_t>(py) * width + px;
        const auto& kernel = kernels[kernel_of[p]];
        const double dp = disp[p];
        const double jr = boosted[3 * p];
        const double jg = boosted[3 * p + 1];
        const double jb = boosted[3 * p + 2];
        for (const auto& run : kernel.runs) {
          int ty = py + run.dy;
          if (wrap) {
            ty = detail::wrap_index(ty, height);
          }
          if (ty < y0 || ty >= y1) continue;
          const double* w = kernel.weights.data() + run.offset;
          const std::size_t row = static_cast<std::size_t>(ty) * width;
          int t0 = 0;
          int t1 = run.length;
          if (!wrap) {
            t0 = std::max(0, -(px + run.dx0));
            t1 = std::min(run.length, width - (px + run.dx0));
          }
          for (int t = t0; t < t1; ++t) {
            int tx = px + run.dx0 + t;
            if (wrap) tx = detail::wrap_index(tx, width);
            const std::size_t q = row + tx;
            const double dq = disp[q];
            double omega = 1.0;
            if (dp < dq) {
              omega = 1.0 - (dq - dp) * inv_delta;
              if (omega <= 0.0) continue;
            }
            const double ww = w[t] * omega;
            double* a = acc.data() + 4 * q;
            a[0] += jr * ww;
            a[1] += jg * ww;
            a[2] += jb * ww;
            a[3] += ww;
          }
        }
      }
    }
  });

  Image out(width, height);
  auto dst = out.data();
  const double inv_gamma = 1.0 / gamma;
  for (std::size_t q = 0; q < n; ++q) {
    const double* a = acc.data() + 4 * q;
    for (int c = 0; c < 3; ++c) {
      const double o = a[3] > 1e-9 ? a[c] / a[3] : boosted[3 * q + c];
      dst[3 * q + c] = static_cast<float>(gamma == 1.0 ? o : std::pow(o, inv_gamma));
    }
  }
  return out;
}

namespace detail {

struct Window {
  int x0, y0, width, height;
};

template <class Map, class Copy>
Map crop_with(int src_w, int src_h, const Window& w, bool wrap, Map out, Copy copy) {
  for (int y = 0; y < w.height; ++y) {
    const int sy = wrap ? wrap_index(w.y0 + y, src_h) : w.y0 + y;
    for (int x = 0; x < w.width; ++x) {
      const int sx = wrap ? wrap_index(w.x0 + x, src_w) : w.x0 + x;
      copy(out, x, y, sx, sy);
    }
  }
  return out;
}

}  // namespace detail

/// Renders tile by tile on windows padded by an apron that covers the largest
/// splat, keeps only each tile's interior, and stitches without blending.
inline Image render_tiled(const Image& aif, const DefocusMap& defocus, const DisparityMap& disparity,
                          const ApertureShape& shape, const RenderConfig& cfg) {
  validate(cfg);
  const int width = aif.width();
  const int height = aif.height();
  if (defocus.width() != width || defocus.height() != height || disparity.width() != width ||
      disparity.height() != height) {
    throw Error(Errc::dimension_mismatch, "image, defocus and disparity must share dimensions");
  }
  const int tile = cfg.tile_size_px;
  if (width <= tile && height <= tile) return render_bokeh(aif, defocus, disparity, shape, cfg);

  const int apron = static_cast<int>(std::ceil(max_abs(defocus))) + 1;
  const bool wrap = cfg.boundary_mode == BoundaryMode::wrap;
  if (wrap && (tile + 2 * apron > width || tile + 2 * apron > height)) {
    // A toroidal window larger than the canvas would duplicate sources.
    return render_bokeh(aif, defocus, disparity, shape, cfg);
  }

  const int tiles_x = (width + tile - 1) / tile;
  const int tiles_y = (height + tile - 1) / tile;
  RenderConfig tile_cfg = cfg;
  tile_cfg.threads = 1;
  tile_cfg.boundary_mode = BoundaryMode::clamp;

  Image out(width, height);
  parallel_for(static_cast<std::size_t>(tiles_x) * tiles_y, cfg.threads, [&](std::size_t t) {
    const int tx0 = static_cast<int>(t % tiles_x) * tile;
    const int ty0 = static_cast<int>(t / tiles_x) * tile;
    const int tw = std::min(tile, width - tx0);
    const int th = std::min(tile, height - ty0);
    detail::Window win{tx0 - apron, ty0 - apron, tw + 2 * apron, th + 2 * apron};
    if (!wrap) {
      const int x1 = std::min(width, win.x0 + win.width);
      const int y1 = std::min(height, win.y0 + win.height);
      win.x0 = std::max(0, win.x0);
      win.y0 = std::max(0, win.y0);
      win.width = x1 - win.x0;
      win.height = y1 - win.y0;
    }
    const Image sub_aif = detail::crop_with(width, height, win, wrap, Image(win.width, win.height),
                                            [&](Image& o, int x, int y, int sx, int sy) {
                                              o.set(x, y, aif.at(sx, sy, 0), aif.at(sx, sy, 1), aif.at(sx, sy, 2));
                                            });
    const DefocusMap sub_def = detail::crop_with(width, height, win, wrap, DefocusMap(win.width, win.height),
                                                 [&](DefocusMap& o, int x, int y, int sx, int sy) {
                                                   o.at(x, y) = defocus.at(sx, sy);
                                                 });
    const DisparityMap sub_disp = detail::crop_with(width, height, win, wrap, DisparityMap(win.width, win.height),
                                                    [&](DisparityMap& o, int x, int y, int sx, int sy) {
                                                      if (disparity.valid(sx, sy)) {
                                                        o.set(x, y, disparity.at(sx, sy));
                                                      } else {
                                                        o.invalidate(x, y);
                                                      }
                                                    });
    const Image rendered = render_bokeh(sub_aif, sub_def, sub_disp, shape, tile_cfg);
    const int ox = tx0 - win.x0;
    const int oy = ty0 - win.y0;
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) {
        out.set(tx0 + x, ty0 + y, rendered.at(ox + x, oy + y, 0), rendered.at(ox + x, oy + y, 1),
                rendered.at(ox + x, oy + y, 2));
      }
    }
  });
  return out;
}

}  // namespace refocus
