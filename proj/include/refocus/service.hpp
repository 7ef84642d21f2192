#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"

#include "refocus/base64.hpp"
#include "refocus/calibration.hpp"
#include "refocus/error.hpp"
#include "refocus/image.hpp"
#include "refocus/io.hpp"
#include "refocus/optics.hpp"
#include "refocus/render.hpp"
#include "refocus/shape.hpp"

namespace refocus::service {

using Clock = std::chrono::system_clock;
using json = nlohmann::json;

inline constexpr std::size_t max_upload_bytes = 64ull * 1024 * 1024;
inline constexpr int preview_max_side = 768;
inline constexpr int thumbnail_radius_px = 15;

struct RenderParams {
  double focus_disparity = 0.0;
  double k = 0.0;
  std::string shape;
};

struct Session {
  std::string id;
  Image aif;
  DisparityMap disparity;
  Clock::time_point created_at;
  Clock::time_point last_access;
  std::optional<RenderParams> last_render_params;
  std::atomic<bool> calibrating{false};
  std::mutex params_mutex;
};

/// Releases a session's calibration slot on destruction.
class CalibrationGuard {
public:
  explicit CalibrationGuard(std::shared_ptr<Session> s) : session_(std::move(s)) {}
  CalibrationGuard(CalibrationGuard&&) = default;
  CalibrationGuard& operator=(CalibrationGuard&&) = default;
  ~CalibrationGuard() {
    if (session_) session_->calibrating = false;
  }

private:
  std::shared_ptr<Session> session_;
};

struct Options {
  std::filesystem::path session_dir = "sessions";
  std::chrono::seconds ttl{3600};
  std::optional<std::filesystem::path> static_dir;
  RenderConfig render;
  std::function<Clock::time_point()> clock = [] { return Clock::now(); };
};

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// HTTP facade over interactive refocusing sessions.
///
/// Uploaded files are persisted verbatim under the session directory and
/// every session is decoded from those bytes, so a restarted server renders
/// byte-identical responses.
class Service {
public:
  explicit Service(Options options) : options_(std::move(options)) {
    std::error_code ec;
    std::filesystem::create_directories(options_.session_dir, ec);
    if (ec) throw Error(Errc::io_error, "cannot create session dir " + options_.session_dir.string());
  }

  const Options& options() const { return options_; }

  void mount(httplib::Server& srv) {
    srv.set_payload_max_length(max_upload_bytes);
    srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    srv.Post("/api/upload", [this](const httplib::Request& req, httplib::Response& res) { handle_upload(req, res); });
    srv.Post("/api/render", [this](const httplib::Request& req, httplib::Response& res) { handle_render(req, res); });
    srv.Post("/api/calibrate",
             [this](const httplib::Request& req, httplib::Response& res) { handle_calibrate(req, res); });
    srv.Get("/api/shapes", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(shapes_json(), "application/json");
    });
    if (options_.static_dir) srv.set_mount_point("/", options_.static_dir->string());
  }

  /// Finds a live session (memory first, then disk). Expired sessions are
  /// removed and reported as absent.
  std::shared_ptr<Session> find_session(const std::string& id) {
    if (!valid_id(id)) return nullptr;
    std::lock_guard lock(registry_mutex_);
    const auto now = options_.clock();
    auto it = sessions_.find(id);
    std::shared_ptr<Session> s;
    if (it != sessions_.end()) {
      s = it->second;
    } else {
      s = load_from_disk(id);
      if (!s) return nullptr;
      sessions_.emplace(id, s);
    }
    if (now - s->last_access > options_.ttl) {
      sessions_.erase(id);
      std::error_code ec;
      std::filesystem::remove_all(options_.session_dir / id, ec);
      return nullptr;
    }
    s->last_access = now;
    write_meta(*s);
    return s;
  }

  /// Claims the single calibration slot of a session, or nullopt if taken.
  std::optional<CalibrationGuard> try_begin_calibration(const std::shared_ptr<Session>& s) {
    bool expected = false;
    if (!s->calibrating.compare_exchange_strong(expected, true)) return std::nullopt;
    return CalibrationGuard(s);
  }

  /// Creates a session from raw uploaded bytes; throws Error on bad input.
  std::shared_ptr<Session> create_session(const Bytes& image_bytes, const Bytes& depth_bytes,
                                          const std::optional<std::string>& sidecar) {
    auto s = std::make_shared<Session>();
    decode_assets(*s, image_bytes, depth_bytes, sidecar);
    s->id = new_id();
    s->created_at = options_.clock();
    s->last_access = s->created_at;
    const auto dir = options_.session_dir / s->id;
    write_file_bytes(dir / "image.png", image_bytes);
    write_file_bytes(dir / "depth.bin", depth_bytes);
    if (sidecar) {
      write_file_bytes(dir / "depth_sidecar.json",
                       std::span(reinterpret_cast<const std::uint8_t*>(sidecar->data()), sidecar->size()));
    }
    write_meta(*s);
    std::lock_guard lock(registry_mutex_);
    sessions_.emplace(s->id, s);
    return s;
  }

  std::string shapes_json() {
    std::call_once(shapes_once_, [this] {
      json list = json::array();
      for (auto name : builtin_shape_names) {
        const Kernel k = rasterize_kernel(*builtin_shape(name), thumbnail_radius_px);
        double peak = 0.0;
        for (double w : k.weights) peak = std::max(peak, w);
        GrayMap thumb(k.size(), k.size());
        for (int y = 0; y < k.size(); ++y) {
          for (int x = 0; x < k.size(); ++x) thumb.at(x, y) = static_cast<float>(k.at(x - k.half_extent, y - k.half_extent) / peak);
        }
        list.push_back({{"name", std::string(name)}, {"thumbnail_png", base64::encode(encode_gray_png8(thumb))}});
      }
      shapes_cache_ = json{{"shapes", list}}.dump();
    });
    return shapes_cache_;
  }

private:
  static void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    res.status = status;
    res.set_content(json{{"code", code}, {"message", message}}.dump(), "application/json");
  }

  static std::string error_code_for(Errc c) {
    switch (c) {
      case Errc::dimension_mismatch: return "dim_mismatch";
      case Errc::unsupported_format: return "unsupported_format";
      case Errc::corrupt_data: return "corrupt_data";
      case Errc::missing_sidecar: return "missing_sidecar";
      case Errc::no_valid_pixels: return "no_valid_pixels";
      case Errc::no_valid_neighbors: return "no_valid_neighbors";
      case Errc::empty_mask: return "empty_mask";
      case Errc::degenerate_shape: return "degenerate_shape";
      case Errc::invalid_bounds: return "invalid_bounds";
      default: return "invalid";
    }
  }

  static bool valid_id(const std::string& id) {
    return id.size() == 32 && id.find_first_not_of("0123456789abcdef") == std::string::npos;
  }

  std::string new_id() {
    std::lock_guard lock(rng_mutex_);
    static constexpr char hex[] = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 32; ++i) id += hex[rng_() & 15];
    return id;
  }

  static void decode_assets(Session& s, const Bytes& image_bytes, const Bytes& depth_bytes,
                            const std::optional<std::string>& sidecar) {
    s.aif = decode_image(image_bytes);
    std::optional<std::string_view> side;
    if (sidecar) side = *sidecar;
    const DepthMap depth = decode_depth(depth_bytes, side);
    if (depth.width() != s.aif.width() || depth.height() != s.aif.height()) {
      throw Error(Errc::dimension_mismatch, "depth and image differ in size");
    }
    s.disparity = disparity_from_depth(depth);
  }

  void write_meta(const Session& s) const {
    const auto secs = [](Clock::time_point t) {
      return std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count();
    };
    const std::string text = json{{"created_at", secs(s.created_at)}, {"last_access", secs(s.last_access)}}.dump();
    std::error_code ec;
    if (!std::filesystem::is_directory(options_.session_dir / s.id, ec)) return;
    write_file_bytes(options_.session_dir / s.id / "meta.json",
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  std::shared_ptr<Session> load_from_disk(const std::string& id) const {
    const auto dir = options_.session_dir / id;
    std::error_code ec;
    if (!std::filesystem::is_regular_file(dir / "image.png", ec)) return nullptr;
    try {
      auto s = std::make_shared<Session>();
      std::optional<std::string> sidecar;
      if (std::filesystem::is_regular_file(dir / "depth_sidecar.json", ec)) {
        const Bytes side = read_file_bytes(dir / "depth_sidecar.json");
        sidecar = std::string(side.begin(), side.end());
      }
      decode_assets(*s, read_file_bytes(dir / "image.png"), read_file_bytes(dir / "depth.bin"), sidecar);
      s->id = id;
      const Bytes meta_bytes = read_file_bytes(dir / "meta.json");
      const auto meta = json::parse(meta_bytes.begin(), meta_bytes.end());
      s->created_at = Clock::time_point(std::chrono::seconds(meta.at("created_at").get<std::int64_t>()));
      s->last_access = Clock::time_point(std::chrono::seconds(meta.at("last_access").get<std::int64_t>()));
      return s;
    } catch (const std::exception&) {
      return nullptr;
    }
  }

  void handle_upload(const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("image") || !req.has_file("depth")) {
      send_error(res, 400, "malformed", "multipart form with 'image' and 'depth' required");
      return;
    }
    const auto image = req.get_file_value("image");
    const auto depth = req.get_file_value("depth");
    std::optional<std::string> sidecar;
    if (req.has_file("depth_sidecar")) sidecar = req.get_file_value("depth_sidecar").content;
    try {
      const auto s = create_session(Bytes(image.content.begin(), image.content.end()),
                                    Bytes(depth.content.begin(), depth.content.end()), sidecar);
      GrayMap preview = s->disparity.as_gray();
      json body{{"session_id", s->id},
                {"width", s->aif.width()},
                {"height", s->aif.height()},
                {"disparity_preview_png", base64::encode(encode_gray_png8(preview))}};
      res.set_content(body.dump(), "application/json");
    } catch (const Error& e) {
      send_error(res, 400, error_code_for(e.code()), e.what());
    }
  }

  static std::optional<ApertureShape> shape_from_json(const json& body) {
    if (!body.contains("shape")) return ApertureShape::circle();
    const auto& s = body["shape"];
    if (s.is_string()) return builtin_shape(s.get<std::string>());
    if (s.is_object() && s.contains("vertices") && s["vertices"].is_array()) {
      std::vector<Vec2> vertices;
      for (const auto& v : s["vertices"]) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) return std::nullopt;
        vertices.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      return ApertureShape::polygon(std::move(vertices), "inline");
    }
    return std::nullopt;
  }

  void handle_render(const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("session_id") || !body["session_id"].is_string()) {
      send_error(res, 422, "invalid", "JSON body with session_id required");
      return;
    }
    const auto s = find_session(body["session_id"].get<std::string>());
    if (!s) {
      send_error(res, 404, "unknown_session", "no such session");
      return;
    }
    try {
      if (!body.contains("k") || !body["k"].is_number() || !(body["k"].get<double>() >= 0.0)) {
        send_error(res, 422, "invalid", "k must be a number >= 0");
        return;
      }
      const double k = body["k"].get<double>();
      double focus = 0.0;
      const json focus_json = body.value("focus", json::object());
      if (focus_json.contains("x") && focus_json.contains("y") && focus_json["x"].is_number() &&
          focus_json["y"].is_number()) {
        focus = focus_disparity_at(s->disparity, static_cast<int>(std::floor(focus_json["x"].get<double>())),
                                   static_cast<int>(std::floor(focus_json["y"].get<double>())));
      } else if (focus_json.contains("disparity") && focus_json["disparity"].is_number()) {
        focus = focus_json["disparity"].get<double>();
      } else {
        send_error(res, 422, "invalid", "focus must be {x,y} or {disparity}");
        return;
      }
      const auto shape = shape_from_json(body);
      if (!shape) {
        send_error(res, 422, "invalid", "unknown shape");
        return;
      }
      const bool preview = body.value("preview", true);

      Image out;
      if (preview && std::max(s->aif.width(), s->aif.height()) > preview_max_side) {
        const Image small = downscale_for_metric(s->aif, preview_max_side);
        const DisparityMap small_disp = downscale_for_metric(s->disparity, preview_max_side);
        const double scale = static_cast<double>(small.width()) / s->aif.width();
        out = render_tiled(small, defocus_map(small_disp, {focus, k * scale}), small_disp, *shape, options_.render);
      } else {
        out = render_tiled(s->aif, defocus_map(s->disparity, {focus, k}), s->disparity, *shape, options_.render);
      }
      {
        std::lock_guard lock(s->params_mutex);
        s->last_render_params = RenderParams{focus, k, shape->name()};
      }
      const Bytes png = encode_image_png16(out);
      res.set_header("X-Focus-Disparity", format_double(focus));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const Error& e) {
      send_error(res, 422, error_code_for(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 422, "invalid", e.what());
    }
  }

  void handle_calibrate(const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("session_id") || !body["session_id"].is_string()) {
      send_error(res, 422, "invalid", "JSON body with session_id required");
      return;
    }
    const auto s = find_session(body["session_id"].get<std::string>());
    if (!s) {
      send_error(res, 404, "unknown_session", "no such session");
      return;
    }
    auto guard = try_begin_calibration(s);
    if (!guard) {
      send_error(res, 409, "calibration_running", "a calibration is already running for this session");
      return;
    }
    try {
      if (!body.contains("target") || !body["target"].is_string() || !body.contains("mask") ||
          !body["mask"].is_string()) {
        send_error(res, 422, "invalid", "target and mask must be base64 PNG strings");
        return;
      }
      const auto target_bytes = base64::decode(body["target"].get<std::string>());
      const auto mask_bytes = base64::decode(body["mask"].get<std::string>());
      if (!target_bytes || !mask_bytes) {
        send_error(res, 422, "invalid", "bad base64");
        return;
      }
      const Image target = decode_image(*target_bytes);
      const GrayMap mask = decode_gray(*mask_bytes);
      if (target.width() != s->aif.width() || target.height() != s->aif.height() || mask.width() != s->aif.width() ||
          mask.height() != s->aif.height()) {
        send_error(res, 422, "dim_mismatch", "target and mask must match the session image");
        return;
      }
      SearchBounds bounds;
      if (body.contains("bounds") && body["bounds"].is_object()) {
        const auto& b = body["bounds"];
        bounds.k_min = b.value("k_min", bounds.k_min);
        bounds.k_max = b.value("k_max", bounds.k_max);
        bounds.tolerance_px = b.value("tolerance_px", bounds.tolerance_px);
        bounds.coarse_samples = b.value("coarse_samples", bounds.coarse_samples);
      }
      const auto shape = shape_from_json(body);
      if (!shape) {
        send_error(res, 422, "invalid", "unknown shape");
        return;
      }
      const double focus = focus_disparity_from_mask(s->disparity, mask);
      const CalibrationResult r =
          calibrate_bokeh_level(s->aif, s->disparity, focus, target, *shape, bounds, options_.render);
      json trace = json::array();
      for (const auto& [k, v] : r.trace) trace.push_back({k, v});
      res.set_content(json{{"k_star", r.k_star},
                           {"ssim", r.ssim_at_k_star},
                           {"iterations", r.iterations},
                           {"focus_disparity", focus},
                           {"trace", trace}}
                          .dump(),
                      "application/json");
    } catch (const Error& e) {
      send_error(res, 422, error_code_for(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 422, "invalid", e.what());
    }
  }

  Options options_;
  std::mutex registry_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_{std::random_device{}()};
  std::once_flag shapes_once_;
  std::string shapes_cache_;
};

}  // namespace refocus::service
