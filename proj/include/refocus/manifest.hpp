#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "refocus/error.hpp"

namespace refocus {

enum class Route { synthetic, real_exif, real_calibrated };

constexpr std::string_view route_name(Route r) {
  switch (r) {
    case Route::synthetic: return "synthetic";
    case Route::real_exif: return "real_exif";
    case Route::real_calibrated: return "real_calibrated";
  }
  return "synthetic";
}

inline std::optional<Route> parse_route(std::string_view s) {
  if (s == "synthetic") return Route::synthetic;
  if (s == "real_exif") return Route::real_exif;
  if (s == "real_calibrated") return Route::real_calibrated;
  return std::nullopt;
}

/// One training record: bokeh image, all-in-focus image, depth, bokeh level
/// and focus plane, plus bookkeeping.
struct TrainingSample {
  std::string bokeh_path;
  std::string aif_path;
  std::string depth_path;
  double bokeh_level = 0.0;
  double focus_disparity = 0.0;
  Route route = Route::synthetic;
  std::string shape_name;
  std::string provenance;

  bool operator==(const TrainingSample&) const = default;
};

inline nlohmann::ordered_json to_json(const TrainingSample& s) {
  nlohmann::ordered_json j;
  j["bokeh_path"] = s.bokeh_path;
  j["aif_path"] = s.aif_path;
  j["depth_path"] = s.depth_path;
  j["bokeh_level"] = s.bokeh_level;
  j["focus_disparity"] = s.focus_disparity;
  j["route"] = std::string(route_name(s.route));
  j["shape_name"] = s.shape_name;
  j["provenance"] = s.provenance;
  return j;
}

inline std::string manifest_line(const TrainingSample& s) { return to_json(s).dump(); }

namespace detail {

inline TrainingSample sample_from_json(const nlohmann::json& j, std::int64_t line, bool check_files) {
  auto fail = [line](const std::string& what) -> Error {
    return Error(Errc::schema_violation, "line " + std::to_string(line) + ": " + what, line);
  };
  if (!j.is_object()) throw fail("record is not an object");
  static constexpr const char* string_fields[] = {"bokeh_path", "aif_path", "depth_path", "route", "shape_name",
                                                  "provenance"};
  for (const char* f : string_fields) {
    if (!j.contains(f) || !j[f].is_string()) throw fail(std::string("missing string field ") + f);
  }
  for (const char* f : {"bokeh_level", "focus_disparity"}) {
    if (!j.contains(f) || !j[f].is_number()) throw fail(std::string("missing numeric field ") + f);
  }
  if (j.size() != 8) throw fail("unexpected fields");
  TrainingSample s;
  s.bokeh_path = j["bokeh_path"].get<std::string>();
  s.aif_path = j["aif_path"].get<std::string>();
  s.depth_path = j["depth_path"].get<std::string>();
  s.bokeh_level = j["bokeh_level"].get<double>();
  s.focus_disparity = j["focus_disparity"].get<double>();
  s.shape_name = j["shape_name"].get<std::string>();
  s.provenance = j["provenance"].get<std::string>();
  const auto route = parse_route(j["route"].get<std::string>());
  if (!route) throw fail("unknown route");
  s.route = *route;
  if (!(s.bokeh_level >= 0.0) || !std::isfinite(s.bokeh_level)) throw fail("bokeh_level must be >= 0");
  if (!(s.focus_disparity >= 0.0 && s.focus_disparity <= 1.0)) throw fail("focus_disparity must lie in [0,1]");
  if (check_files) {
    std::error_code ec;
    for (const auto* p : {&s.bokeh_path, &s.aif_path, &s.depth_path}) {
      if (!std::filesystem::is_regular_file(*p, ec)) throw fail("missing file " + *p);
    }
  }
  return s;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<TrainingSample>& samples,
                        std::ios::openmode mode) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | mode);
  if (!out) throw Error(Errc::io_error, "cannot write manifest " + path.string());
  for (const auto& s : samples) out << manifest_line(s) << '\n';
  if (!out) throw Error(Errc::io_error, "short write to " + path.string());
}

}  // namespace detail

/// JSON Lines, one record per line, in the given order.
inline void write_manifest(const std::vector<TrainingSample>& samples, const std::filesystem::path& path) {
  detail::write_lines(path, samples, std::ios::trunc);
}

inline void append_manifest(const std::vector<TrainingSample>& samples, const std::filesystem::path& path) {
  detail::write_lines(path, samples, std::ios::app);
}

inline std::vector<TrainingSample> read_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot read manifest " + path.string());
  std::vector<TrainingSample> samples;
  std::string line;
  std::int64_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::schema_violation, "line " + std::to_string(number) + ": invalid JSON", number);
    samples.push_back(detail::sample_from_json(j, number, check_files));
  }
  return samples;
}

}  // namespace refocus
