#pragma once

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refocus/calibration.hpp"
#include "refocus/error.hpp"
#include "refocus/exif.hpp"
#include "refocus/image.hpp"
#include "refocus/io.hpp"
#include "refocus/manifest.hpp"
#include "refocus/optics.hpp"
#include "refocus/render.hpp"
#include "refocus/shape.hpp"

namespace refocus {

/// SplitMix64; fixed output across platforms, unlike std distributions.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
  std::uint64_t state_;
};

/// Seed for the i-th sample of a batch rooted at `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 mix(seed ^ (0xD1B54A32D192ED03ull * (index + 1)));
  return mix.next();
}

struct KRange {
  double lo = 1.0;
  double hi = 32.0;
};

/// Focus planes are drawn from this quantile band of the valid disparities.
inline constexpr double focus_quantile_lo = 0.1;
inline constexpr double focus_quantile_hi = 0.9;

namespace detail {

struct SampleLayout {
  std::filesystem::path bokeh;
  std::filesystem::path aif;
  std::filesystem::path depth;
};

inline SampleLayout layout_for(const std::filesystem::path& out_dir, const std::string& id,
                               const std::string& aif_ext = ".png") {
  return {out_dir / "bokeh" / (id + ".png"), out_dir / "aif" / (id + aif_ext), out_dir / "depth" / (id + ".pfm")};
}

inline void copy_into(const std::filesystem::path& from, const std::filesystem::path& to) {
  std::error_code ec;
  std::filesystem::create_directories(to.parent_path(), ec);
  if (std::filesystem::exists(to, ec) && std::filesystem::equivalent(from, to, ec)) return;
  std::filesystem::copy_file(from, to, std::filesystem::copy_options::overwrite_existing, ec);
  if (ec) throw Error(Errc::io_error, "cannot copy " + from.string() + " to " + to.string());
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// The median metric depth under the mask, in millimetres.
inline double masked_depth_mm(const DepthMap& depth, const GrayMap& mask) {
  if (mask.width() != depth.width() || mask.height() != depth.height()) {
    throw Error(Errc::dimension_mismatch, "mask and depth differ in size");
  }
  std::vector<double> samples;
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (mask.at(x, y) > 0.5f && depth.valid(x, y)) samples.push_back(depth.at(x, y));
    }
  }
  if (samples.empty()) throw Error(Errc::empty_mask, "mask selects no valid pixels");
  return median_of(std::move(samples)) * 1000.0;
}

inline bool mask_is_empty(const GrayMap& mask) {
  return std::none_of(mask.data().begin(), mask.data().end(), [](float v) { return v > 0.5f; });
}

}  // namespace detail

/// Samples a focus plane from the valid-disparity quantile band and a
/// log-uniform bokeh level, renders, and writes bokeh / aif / depth files.
inline TrainingSample generate_synthetic_sample(const Image& aif, const DepthMap& depth, std::uint64_t seed,
                                                KRange k_range, const ApertureShape& shape, const RenderConfig& cfg,
                                                const std::filesystem::path& out_dir) {
  if (!(k_range.lo > 0.0) || !(k_range.hi >= k_range.lo) || !std::isfinite(k_range.hi)) {
    throw Error(Errc::invalid_argument, "k_range must satisfy 0 < lo <= hi");
  }
  if (depth.width() != aif.width() || depth.height() != aif.height()) {
    throw Error(Errc::dimension_mismatch, "aif and depth differ in size");
  }
  const DisparityMap disparity = disparity_from_depth(depth);

  std::vector<double> valid;
  for (int y = 0; y < disparity.height(); ++y) {
    for (int x = 0; x < disparity.width(); ++x) {
      if (disparity.valid(x, y)) valid.push_back(disparity.at(x, y));
    }
  }
  std::sort(valid.begin(), valid.end());

  SplitMix64 rng(seed);
  const double q = focus_quantile_lo + (focus_quantile_hi - focus_quantile_lo) * rng.uniform();
  const double focus = std::clamp(sorted_quantile(valid, q), 0.0, 1.0);
  const double u = rng.uniform();
  const double k = k_range.lo == k_range.hi
                       ? k_range.lo
                       : std::exp(std::log(k_range.lo) + u * (std::log(k_range.hi) - std::log(k_range.lo)));

  const Image bokeh = render_tiled(aif, defocus_map(disparity, {focus, k}), disparity, shape, cfg);

  char id[32];
  std::snprintf(id, sizeof id, "syn_%016" PRIx64, seed);
  const auto layout = detail::layout_for(out_dir, id);
  save_image(bokeh, layout.bokeh);
  save_image(aif, layout.aif);
  save_depth_pfm(depth, layout.depth);

  TrainingSample s;
  s.bokeh_path = layout.bokeh.string();
  s.aif_path = layout.aif.string();
  s.depth_path = layout.depth.string();
  s.bokeh_level = k;
  s.focus_disparity = focus;
  s.route = Route::synthetic;
  s.shape_name = shape.name();
  s.provenance = "seed=" + std::to_string(seed) + " gamma=" + detail::format_number(cfg.highlight_boost_gamma);
  return s;
}

/// Real bokeh photo with EXIF: K from lens metadata, focus plane from the
/// in-focus mask. Without SubjectDistance, S1 falls back to the median
/// metric depth under the mask.
inline TrainingSample annotate_real_exif(const std::filesystem::path& bokeh_path,
                                         std::span<const std::uint8_t> exif_bytes,
                                         const std::filesystem::path& aif_path,
                                         const std::filesystem::path& depth_path, const GrayMap& mask,
                                         double pixel_ratio, const std::filesystem::path& out_dir) {
  exif::LensMeta meta = exif::parse_exif(exif_bytes);
  const bool empty_mask = detail::mask_is_empty(mask);
  if (!meta.focus_distance && empty_mask) {
    throw Error(Errc::missing_tag, "SubjectDistance (0x9206) absent and no mask to derive S1",
                exif::tag::subject_distance);
  }
  if (empty_mask) throw Error(Errc::empty_mask, "mask selects no pixels");

  const DepthMap depth = load_depth(depth_path);
  const DisparityMap disparity = disparity_from_depth(depth);
  const double focus = focus_disparity_from_mask(disparity, mask);

  std::string s1_source = "exif";
  if (!meta.focus_distance) {
    meta.focus_distance = exif::SubjectDistance::finite(detail::masked_depth_mm(depth, mask));
    s1_source = "mask_depth";
  }
  const double k = bokeh_level_from_exif(meta, pixel_ratio);

  const std::string id = bokeh_path.stem().string();
  const auto layout = detail::layout_for(out_dir, id, aif_path.extension().string());
  detail::copy_into(bokeh_path, layout.bokeh);
  detail::copy_into(aif_path, layout.aif);
  save_depth_pfm(depth, layout.depth);

  TrainingSample s;
  s.bokeh_path = layout.bokeh.string();
  s.aif_path = layout.aif.string();
  s.depth_path = layout.depth.string();
  s.bokeh_level = k;
  s.focus_disparity = focus;
  s.route = Route::real_exif;
  s.shape_name = "circle";
  s.provenance = "f=" + detail::format_number(meta.focal_length_mm) + "mm F=" + detail::format_number(meta.f_number) +
                 " S1=" +
                 (meta.focus_distance->infinity ? std::string("inf") : detail::format_number(meta.focus_distance->mm) + "mm") +
                 " S1_source=" + s1_source + " pixel_ratio=" + detail::format_number(pixel_ratio) + " external_aif";
  return s;
}

/// Real pair without EXIF: focus plane from the mask, K by SSIM calibration.
inline TrainingSample calibrate_real_pair(const std::filesystem::path& aif_path,
                                          const std::filesystem::path& depth_path, const GrayMap& mask,
                                          const std::filesystem::path& real_bokeh_path, const SearchBounds& bounds,
                                          const ApertureShape& shape, const RenderConfig& cfg,
                                          const std::filesystem::path& out_dir,
                                          int metric_max_side = calibration_max_side) {
  validate(bounds);
  const Image aif = load_image(aif_path);
  const DepthMap depth = load_depth(depth_path);
  const Image target = load_image(real_bokeh_path);
  const DisparityMap disparity = disparity_from_depth(depth);
  if (mask.width() != disparity.width() || mask.height() != disparity.height()) {
    throw Error(Errc::dimension_mismatch, "mask and depth differ in size");
  }
  const double focus = focus_disparity_from_mask(disparity, mask);
  const CalibrationResult cal =
      calibrate_bokeh_level(aif, disparity, focus, target, shape, bounds, cfg, metric_max_side);

  const std::string id = real_bokeh_path.stem().string();
  const auto layout = detail::layout_for(out_dir, id, aif_path.extension().string());
  detail::copy_into(real_bokeh_path, layout.bokeh);
  detail::copy_into(aif_path, layout.aif);
  save_depth_pfm(depth, layout.depth);

  TrainingSample s;
  s.bokeh_path = layout.bokeh.string();
  s.aif_path = layout.aif.string();
  s.depth_path = layout.depth.string();
  s.bokeh_level = cal.k_star;
  s.focus_disparity = focus;
  s.route = Route::real_calibrated;
  s.shape_name = shape.name();
  s.provenance = "ssim=" + detail::format_number(cal.ssim_at_k_star) + " iterations=" + std::to_string(cal.iterations) +
                 " external_aif";
  return s;
}

struct SharpnessRanking {
  std::vector<std::pair<std::string, double>> ranked;
  std::vector<std::string> warnings;
};

/// Ranks images by Laplacian variance of their luma, highest first, ties by
/// path. Unreadable files are skipped and reported in `warnings`.
inline SharpnessRanking filter_sharp(const std::vector<std::filesystem::path>& image_paths, std::size_t top_n) {
  if (top_n < 1) throw Error(Errc::invalid_argument, "top_n must be >= 1");
  SharpnessRanking out;
  for (const auto& path : image_paths) {
    try {
      out.ranked.emplace_back(path.string(), laplacian_variance(luma(load_image(path))));
    } catch (const Error& e) {
      out.warnings.push_back(path.string() + ": " + e.what());
    }
  }
  std::sort(out.ranked.begin(), out.ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (out.ranked.size() > top_n) out.ranked.resize(top_n);
  return out;
}

}  // namespace refocus
