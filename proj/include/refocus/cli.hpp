#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "refocus/calibration.hpp"
#include "refocus/datagen.hpp"
#include "refocus/error.hpp"
#include "refocus/io.hpp"
#include "refocus/manifest.hpp"
#include "refocus/optics.hpp"
#include "refocus/render.hpp"
#include "refocus/shape.hpp"

namespace refocus::cli {

// Exit codes.
inline constexpr int exit_ok = 0;
inline constexpr int exit_flags = 2;
inline constexpr int exit_io = 3;
inline constexpr int exit_dims = 4;
inline constexpr int exit_calibration = 5;
inline constexpr int exit_datagen_empty = 6;
inline constexpr int exit_port = 7;

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::file_not_found:
    case Errc::unsupported_format:
    case Errc::corrupt_data:
    case Errc::io_error:
    case Errc::missing_sidecar:
    case Errc::degenerate_shape:
    case Errc::not_exif:
    case Errc::malformed_ifd:
    case Errc::missing_tag:
      return exit_io;
    case Errc::dimension_mismatch:
      return exit_dims;
    default:
      return exit_flags;
  }
}

/// Flag-level check of a --shape value; files are only opened later.
inline bool shape_spec_ok(const std::string& spec) {
  if (builtin_shape(spec)) return true;
  const auto ext = std::filesystem::path(spec).extension().string();
  return ext == ".png" || ext == ".json";
}

struct RenderFlags {
  double gamma = 2.2;
  int tile_size = 512;
  bool wrap = false;
  std::string shape = "circle";
};

inline void add_render_flags(CLI::App* cmd, RenderFlags& f) {
  cmd->add_option("--shape", f.shape, "circle|triangle|heart|star|<path.png>|<path.json>");
  cmd->add_option("--tile-size", f.tile_size, "Tile size in pixels (>= 64)");
  cmd->add_option("--gamma", f.gamma, "Highlight boost exponent (>= 1)");
  cmd->add_flag("--wrap", f.wrap, "Toroidal boundary handling");
}

inline std::optional<std::string> check_render_flags(const RenderFlags& f) {
  if (f.tile_size < 64) return "--tile-size must be >= 64";
  if (!(f.gamma >= 1.0)) return "--gamma must be >= 1";
  if (!shape_spec_ok(f.shape)) return "--shape must be a builtin name or a .png/.json path";
  return std::nullopt;
}

inline RenderConfig to_config(const RenderFlags& f) {
  RenderConfig cfg;
  cfg.highlight_boost_gamma = f.gamma;
  cfg.tile_size_px = f.tile_size;
  cfg.boundary_mode = f.wrap ? BoundaryMode::wrap : BoundaryMode::clamp;
  return cfg;
}

inline std::vector<std::filesystem::path> png_files_in(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file(ec) && (ext == ".png" || ext == ".PNG")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Runs the `refocus` command line. `serve` is dispatched through
/// `serve_fn` so this header stays free of the HTTP stack.
template <class ServeFn>
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, ServeFn&& serve_fn) {
  CLI::App app{"Depth-guided refocusing: render, calibrate, and generate training data", "refocus"};
  app.require_subcommand(1);

  // render
  auto* render = app.add_subcommand("render", "Render shallow depth of field from an all-in-focus image");
  std::string r_image, r_depth, r_out;
  std::optional<int> r_fx, r_fy;
  std::optional<double> r_fd;
  double r_k = 0.0;
  RenderFlags r_flags;
  render->add_option("--image", r_image, "All-in-focus PNG")->required();
  render->add_option("--depth", r_depth, "Depth map (PFM or 16-bit PNG + sidecar)")->required();
  render->add_option("--focus-x", r_fx, "Focus point x");
  render->add_option("--focus-y", r_fy, "Focus point y");
  render->add_option("--focus-disparity", r_fd, "Focus plane as normalized disparity");
  render->add_option("--k", r_k, "Bokeh level (CoC px per unit disparity)")->required();
  render->add_option("--out", r_out, "Output PNG")->required();
  add_render_flags(render, r_flags);

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Estimate the bokeh level of a target photograph");
  std::string c_aif, c_depth, c_mask, c_target;
  SearchBounds c_bounds;
  RenderFlags c_flags;
  calibrate->add_option("--aif", c_aif)->required();
  calibrate->add_option("--depth", c_depth)->required();
  calibrate->add_option("--mask", c_mask, "In-focus mask PNG")->required();
  calibrate->add_option("--target", c_target, "Real bokeh PNG")->required();
  calibrate->add_option("--k-min", c_bounds.k_min);
  calibrate->add_option("--k-max", c_bounds.k_max);
  calibrate->add_option("--tol", c_bounds.tolerance_px);
  calibrate->add_option("--coarse", c_bounds.coarse_samples);
  add_render_flags(calibrate, c_flags);

  // datagen
  auto* datagen = app.add_subcommand("datagen", "Produce training samples and append them to a manifest");
  datagen->require_subcommand(1);
  std::string d_manifest, d_out_dir;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", d_manifest, "JSONL manifest to append to")->required();
    cmd->add_option("--out-dir", d_out_dir, "Output root for bokeh/, aif/, depth/")->required();
  };
  auto* d_syn = datagen->add_subcommand("synthetic", "Render synthetic pairs from all-in-focus images");
  std::vector<std::string> s_images, s_depths;
  std::uint64_t s_seed = 0;
  KRange s_range{1.0, 32.0};
  RenderFlags s_flags;
  add_common(d_syn);
  d_syn->add_option("--image", s_images, "All-in-focus PNG (repeatable)")->required();
  d_syn->add_option("--depth", s_depths, "Depth map per image (repeatable)")->required();
  d_syn->add_option("--seed", s_seed, "Random seed");
  d_syn->add_option("--k-min", s_range.lo);
  d_syn->add_option("--k-max", s_range.hi);
  add_render_flags(d_syn, s_flags);

  auto* d_exif = datagen->add_subcommand("exif", "Annotate real bokeh photos from EXIF");
  std::vector<std::string> e_bokeh, e_exif, e_aif, e_depth, e_mask;
  double e_pixel_ratio = 1.0;
  add_common(d_exif);
  d_exif->add_option("--bokeh", e_bokeh, "Real bokeh PNG (repeatable)")->required();
  d_exif->add_option("--exif", e_exif, "EXIF source: JPEG, APP1 payload or TIFF (repeatable)")->required();
  d_exif->add_option("--aif", e_aif, "Externally supplied all-in-focus PNG (repeatable)")->required();
  d_exif->add_option("--depth", e_depth)->required();
  d_exif->add_option("--mask", e_mask)->required();
  d_exif->add_option("--pixel-ratio", e_pixel_ratio, "Metric-to-pixel CoC scale");

  auto* d_cal = datagen->add_subcommand("calibrated", "Calibrate K for real image pairs");
  std::vector<std::string> k_aif, k_depth, k_mask, k_target;
  SearchBounds k_bounds;
  RenderFlags k_flags;
  add_common(d_cal);
  d_cal->add_option("--aif", k_aif)->required();
  d_cal->add_option("--depth", k_depth)->required();
  d_cal->add_option("--mask", k_mask)->required();
  d_cal->add_option("--target", k_target)->required();
  d_cal->add_option("--k-min", k_bounds.k_min);
  d_cal->add_option("--k-max", k_bounds.k_max);
  d_cal->add_option("--tol", k_bounds.tolerance_px);
  d_cal->add_option("--coarse", k_bounds.coarse_samples);
  add_render_flags(d_cal, k_flags);

  // sharpness
  auto* sharpness = app.add_subcommand("sharpness", "Rank images by Laplacian variance");
  std::string h_dir;
  std::size_t h_top = 0;
  sharpness->add_option("--dir", h_dir)->required();
  sharpness->add_option("--top", h_top)->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  int v_port = 8080;
  std::string v_session_dir = "sessions";
  std::string v_static_dir;
  long v_ttl = 3600;
  serve->add_option("--port", v_port)->required();
  serve->add_option("--session-dir", v_session_dir);
  serve->add_option("--static-dir", v_static_dir, "Directory served at /");
  serve->add_option("--ttl", v_ttl, "Session idle TTL in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? exit_ok : exit_flags;
  }

  auto flag_error = [&](const std::string& msg) {
    err << "error: " << msg << "\n";
    return exit_flags;
  };

  try {
    if (render->parsed()) {
      const bool by_click = r_fx.has_value() || r_fy.has_value();
      if (by_click && (!r_fx || !r_fy)) return flag_error("--focus-x and --focus-y go together");
      if (by_click == r_fd.has_value()) return flag_error("give either --focus-x/--focus-y or --focus-disparity");
      if (r_fd && !(*r_fd >= 0.0 && *r_fd <= 1.0)) return flag_error("--focus-disparity must lie in [0,1]");
      if (!(r_k >= 0.0)) return flag_error("--k must be >= 0");
      if (auto m = check_render_flags(r_flags)) return flag_error(*m);

      const ApertureShape shape = resolve_shape(r_flags.shape);
      const Image aif = load_image(r_image);
      const DisparityMap disparity = disparity_from_depth(load_depth(r_depth));
      if (disparity.width() != aif.width() || disparity.height() != aif.height()) {
        err << "error: depth and image dimensions differ\n";
        return exit_dims;
      }
      if (by_click && (*r_fx < 0 || *r_fy < 0 || *r_fx >= aif.width() || *r_fy >= aif.height())) {
        return flag_error("focus point outside the image");
      }
      const double focus = by_click ? focus_disparity_at(disparity, *r_fx, *r_fy) : *r_fd;
      const DefocusMap defocus = defocus_map(disparity, {focus, r_k});
      save_image(render_tiled(aif, defocus, disparity, shape, to_config(r_flags)), r_out);
      out << nlohmann::json{{"focus_disparity", focus}, {"k", r_k}, {"max_radius_px", max_abs(defocus)}}.dump()
          << "\n";
      return exit_ok;
    }

    if (calibrate->parsed()) {
      try {
        validate(c_bounds);
      } catch (const Error& e) {
        return flag_error(e.what());
      }
      if (auto m = check_render_flags(c_flags)) return flag_error(*m);
      const ApertureShape shape = resolve_shape(c_flags.shape);
      const Image aif = load_image(c_aif);
      const DisparityMap disparity = disparity_from_depth(load_depth(c_depth));
      const GrayMap mask = load_gray(c_mask);
      const Image target = load_image(c_target);
      if (disparity.width() != aif.width() || disparity.height() != aif.height() || target.width() != aif.width() ||
          target.height() != aif.height() || mask.width() != aif.width() || mask.height() != aif.height()) {
        err << "error: input dimensions differ\n";
        return exit_dims;
      }
      try {
        const double focus = focus_disparity_from_mask(disparity, mask);
        const CalibrationResult r =
            calibrate_bokeh_level(aif, disparity, focus, target, shape, c_bounds, to_config(c_flags));
        out << nlohmann::json{{"k_star", r.k_star},
                              {"ssim", r.ssim_at_k_star},
                              {"iterations", r.iterations},
                              {"trace_length", r.trace.size()},
                              {"focus_disparity", focus}}
                   .dump()
            << "\n";
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_calibration;
      }
      return exit_ok;
    }

    if (datagen->parsed()) {
      std::vector<TrainingSample> samples;
      std::size_t attempted = 0;
      auto attempt = [&](auto&& make) {
        ++attempted;
        try {
          samples.push_back(make());
        } catch (const std::exception& e) {
          err << "warning: sample " << attempted << " skipped: " << e.what() << "\n";
        }
      };
      if (d_syn->parsed()) {
        if (s_images.size() != s_depths.size()) return flag_error("--image and --depth counts differ");
        if (!(s_range.lo > 0.0) || !(s_range.hi >= s_range.lo)) return flag_error("need 0 < --k-min <= --k-max");
        if (auto m = check_render_flags(s_flags)) return flag_error(*m);
        const ApertureShape shape = resolve_shape(s_flags.shape);
        for (std::size_t i = 0; i < s_images.size(); ++i) {
          attempt([&] {
            const Image aif = load_image(s_images[i]);
            const DepthMap depth = load_depth(s_depths[i]);
            return generate_synthetic_sample(aif, depth, derive_seed(s_seed, i), s_range, shape, to_config(s_flags),
                                             d_out_dir);
          });
        }
      } else if (d_exif->parsed()) {
        const std::size_t n = e_bokeh.size();
        if (e_exif.size() != n || e_aif.size() != n || e_depth.size() != n || e_mask.size() != n) {
          return flag_error("--bokeh/--exif/--aif/--depth/--mask counts differ");
        }
        if (!(e_pixel_ratio > 0.0)) return flag_error("--pixel-ratio must be > 0");
        for (std::size_t i = 0; i < n; ++i) {
          attempt([&] {
            const Bytes exif_bytes = read_file_bytes(e_exif[i]);
            return annotate_real_exif(e_bokeh[i], exif_bytes, e_aif[i], e_depth[i], load_gray(e_mask[i]),
                                      e_pixel_ratio, d_out_dir);
          });
        }
      } else if (d_cal->parsed()) {
        const std::size_t n = k_aif.size();
        if (k_depth.size() != n || k_mask.size() != n || k_target.size() != n) {
          return flag_error("--aif/--depth/--mask/--target counts differ");
        }
        try {
          validate(k_bounds);
        } catch (const Error& e) {
          return flag_error(e.what());
        }
        if (auto m = check_render_flags(k_flags)) return flag_error(*m);
        const ApertureShape shape = resolve_shape(k_flags.shape);
        for (std::size_t i = 0; i < n; ++i) {
          attempt([&] {
            return calibrate_real_pair(k_aif[i], k_depth[i], load_gray(k_mask[i]), k_target[i], k_bounds, shape,
                                       to_config(k_flags), d_out_dir);
          });
        }
      }
      if (samples.empty()) {
        err << "error: no sample succeeded\n";
        return exit_datagen_empty;
      }
      append_manifest(samples, d_manifest);
      out << samples.size() << "\n";
      return exit_ok;
    }

    if (sharpness->parsed()) {
      if (h_top < 1) return flag_error("--top must be >= 1");
      const auto files = png_files_in(h_dir);
      if (files.empty()) {
        err << "error: no PNG files in " << h_dir << "\n";
        return exit_io;
      }
      const SharpnessRanking ranking = filter_sharp(files, h_top);
      for (const auto& w : ranking.warnings) err << "warning: " << w << "\n";
      for (const auto& [path, score] : ranking.ranked) out << score << '\t' << path << '\n';
      return exit_ok;
    }

    if (serve->parsed()) {
      if (v_port < 0 || v_port > 65535) return flag_error("--port must lie in [0, 65535]");
      if (v_ttl <= 0) return flag_error("--ttl must be > 0");
      return serve_fn(v_port, v_session_dir, v_static_dir, v_ttl, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
  return exit_flags;
}

}  // namespace refocus::cli
