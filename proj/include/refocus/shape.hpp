#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "refocus/error.hpp"
#include "refocus/image.hpp"
#include "refocus/io.hpp"

namespace refocus {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

namespace geometry {

inline double signed_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

inline Vec2 area_centroid(const std::vector<Vec2>& poly) {
  const double a = signed_area(poly);
  double cx = 0.0;
  double cy = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    const double cross = p.x * q.y - q.x * p.y;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

inline double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline bool segments_cross(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double o1 = orient(a, b, c);
  const double o2 = orient(a, b, d);
  const double o3 = orient(c, d, a);
  const double o4 = orient(c, d, b);
  return ((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0)) && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0;
}

/// True when no two non-adjacent edges intersect.
inline bool is_simple(const std::vector<Vec2>& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

/// Even-odd crossing test.
inline bool contains(const std::vector<Vec2>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double xi = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < xi) inside = !inside;
    }
  }
  return inside;
}

}  // namespace geometry

/// Aperture shape in unit coordinates (y up). Polygons are stored already
/// normalized: area centroid at the origin, farthest vertex at distance 1.
/// Rasters keep their pixels and carry the equivalent normalization.
class ApertureShape {
public:
  enum class Kind { circle, polygon, raster };

  static ApertureShape circle() {
    ApertureShape s;
    s.kind_ = Kind::circle;
    s.name_ = "circle";
    return s;
  }

  static ApertureShape polygon(std::vector<Vec2> vertices, std::string name = "polygon") {
    if (vertices.size() < 3) throw Error(Errc::degenerate_shape, "polygon needs at least 3 vertices");
    for (const Vec2& v : vertices) {
      if (!std::isfinite(v.x) || !std::isfinite(v.y)) throw Error(Errc::degenerate_shape, "non-finite vertex");
    }
    const double area = geometry::signed_area(vertices);
    if (!(std::abs(area) > 1e-12)) throw Error(Errc::degenerate_shape, "zero-area polygon");
    if (!geometry::is_simple(vertices)) throw Error(Errc::degenerate_shape, "self-intersecting polygon");
    const Vec2 c = geometry::area_centroid(vertices);
    double max_dist = 0.0;
    for (Vec2& v : vertices) {
      v.x -= c.x;
      v.y -= c.y;
      max_dist = std::max(max_dist, std::hypot(v.x, v.y));
    }
    for (Vec2& v : vertices) {
      v.x /= max_dist;
      v.y /= max_dist;
    }
    ApertureShape s;
    s.kind_ = Kind::polygon;
    s.vertices_ = std::move(vertices);
    s.name_ = std::move(name);
    for (const Vec2& v : s.vertices_) {
      s.bbox_min_ = {std::min(s.bbox_min_.x, v.x), std::min(s.bbox_min_.y, v.y)};
      s.bbox_max_ = {std::max(s.bbox_max_.x, v.x), std::max(s.bbox_max_.y, v.y)};
    }
    return s;
  }

  /// Raster PSF with values in [0,1]; row 0 is the top of the shape.
  static ApertureShape raster(GrayMap mask, std::string name = "raster") {
    double mass = 0.0;
    double mx = 0.0;
    double my = 0.0;
    for (int y = 0; y < mask.height(); ++y) {
      for (int x = 0; x < mask.width(); ++x) {
        const double w = mask.at(x, y);
        if (!std::isfinite(w) || w < 0.0 || w > 1.0) throw Error(Errc::degenerate_shape, "raster values must lie in [0,1]");
        mass += w;
        mx += w * (x + 0.5);
        my += w * (y + 0.5);
      }
    }
    if (!(mass > 0.0)) throw Error(Errc::degenerate_shape, "zero-mass raster");
    ApertureShape s;
    s.kind_ = Kind::raster;
    s.raster_center_ = {mx / mass, my / mass};
    double max_dist = 0.0;
    for (int y = 0; y < mask.height(); ++y) {
      for (int x = 0; x < mask.width(); ++x) {
        if (mask.at(x, y) > 0.0f) {
          max_dist = std::max(max_dist, std::hypot(x + 0.5 - s.raster_center_.x, y + 0.5 - s.raster_center_.y));
        }
      }
    }
    s.raster_extent_ = std::max(max_dist, 0.5);
    s.raster_ = std::move(mask);
    s.name_ = std::move(name);
    return s;
  }

  Kind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<Vec2>& vertices() const noexcept { return vertices_; }
  const GrayMap& raster_map() const noexcept { return raster_; }

  /// Coverage density at a point of the unit shape (u right, v up).
  double density(double u, double v) const {
    switch (kind_) {
      case Kind::circle:
        return u * u + v * v <= 1.0 ? 1.0 : 0.0;
      case Kind::polygon:
        if (u < bbox_min_.x || u > bbox_max_.x || v < bbox_min_.y || v > bbox_max_.y) return 0.0;
        return geometry::contains(vertices_, u, v) ? 1.0 : 0.0;
      case Kind::raster:
        return sample_raster(raster_center_.x + u * raster_extent_, raster_center_.y - v * raster_extent_);
    }
    return 0.0;
  }

private:
  // Bilinear over pixel centres; outside the raster the density is 0.
  double sample_raster(double rx, double ry) const {
    const double fx = rx - 0.5;
    const double fy = ry - 0.5;
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const double tx = fx - x0;
    const double ty = fy - y0;
    auto value = [&](int x, int y) -> double {
      if (x < 0 || y < 0 || x >= raster_.width() || y >= raster_.height()) return 0.0;
      return raster_.at(x, y);
    };
    return (1 - tx) * (1 - ty) * value(x0, y0) + tx * (1 - ty) * value(x0 + 1, y0) +
           (1 - tx) * ty * value(x0, y0 + 1) + tx * ty * value(x0 + 1, y0 + 1);
  }

  Kind kind_ = Kind::circle;
  std::string name_ = "circle";
  std::vector<Vec2> vertices_;
  Vec2 bbox_min_{1e300, 1e300};
  Vec2 bbox_max_{-1e300, -1e300};
  GrayMap raster_;
  Vec2 raster_center_;
  double raster_extent_ = 1.0;
};

inline constexpr std::array<std::string_view, 4> builtin_shape_names{"circle", "triangle", "heart", "star"};

inline std::optional<ApertureShape> builtin_shape(std::string_view name) {
  constexpr double pi = std::numbers::pi;
  if (name == "circle") return ApertureShape::circle();
  if (name == "triangle") {
    std::vector<Vec2> v;
    for (int k = 0; k < 3; ++k) {
      const double a = pi / 2 + 2 * pi * k / 3;
      v.push_back({std::cos(a), std::sin(a)});
    }
    return ApertureShape::polygon(std::move(v), "triangle");
  }
  if (name == "star") {
    const double inner = 0.5 * (3.0 - std::sqrt(5.0));
    std::vector<Vec2> v;
    for (int k = 0; k < 10; ++k) {
      const double a = pi / 2 + pi * k / 5;
      const double r = k % 2 == 0 ? 1.0 : inner;
      v.push_back({r * std::cos(a), r * std::sin(a)});
    }
    return ApertureShape::polygon(std::move(v), "star");
  }
  if (name == "heart") {
    std::vector<Vec2> v;
    for (int k = 0; k < 32; ++k) {
      const double t = 2 * pi * k / 32;
      const double s = std::sin(t);
      v.push_back({16 * s * s * s, 13 * std::cos(t) - 5 * std::cos(2 * t) - 2 * std::cos(3 * t) - std::cos(4 * t)});
    }
    return ApertureShape::polygon(std::move(v), "heart");
  }
  return std::nullopt;
}

/// Loads `*.png` as a raster PSF or `*.json` as `{ "vertices": [[x,y], ...] }`.
inline ApertureShape load_shape(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".png" || ext == ".PNG") return ApertureShape::raster(load_gray(path), path.stem().string());
  if (ext == ".json" || ext == ".JSON") {
    const Bytes bytes = read_file_bytes(path);
    const auto doc = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("vertices") || !doc["vertices"].is_array()) {
      throw Error(Errc::unsupported_format, "polygon JSON needs a vertices array");
    }
    std::vector<Vec2> vertices;
    for (const auto& v : doc["vertices"]) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw Error(Errc::unsupported_format, "vertex must be [x, y]");
      }
      vertices.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    return ApertureShape::polygon(std::move(vertices), path.stem().string());
  }
  throw Error(Errc::unsupported_format, "shape must be .png or .json: " + path.string());
}

/// Resolves a builtin name or a shape file path.
inline ApertureShape resolve_shape(std::string_view spec) {
  if (auto s = builtin_shape(spec)) return *s;
  return load_shape(std::filesystem::path(spec));
}

/// Rasterized aperture at a given radius; weights sum to 1.
struct Kernel {
  double radius_px = 0.0;
  int half_extent = 0;
  std::vector<double> weights;  // row-major, (2*half_extent+1)^2

  int size() const noexcept { return 2 * half_extent + 1; }
  double at(int dx, int dy) const {
    return weights[static_cast<std::size_t>(dy + half_extent) * size() + (dx + half_extent)];
  }
};

inline constexpr int kernel_supersampling = 4;

inline Kernel rasterize_kernel(const ApertureShape& shape, double radius_px) {
  if (!(radius_px >= 0.0) || !std::isfinite(radius_px)) throw Error(Errc::invalid_argument, "radius must be >= 0");
  Kernel k;
  k.radius_px = radius_px;
  k.half_extent = static_cast<int>(std::ceil(radius_px));
  const int n = k.size();
  k.weights.assign(static_cast<std::size_t>(n) * n, 0.0);
  if (radius_px == 0.0) {
    k.weights[0] = 1.0;
    return k;
  }
  constexpr int ss = kernel_supersampling;
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      double cover = 0.0;
      for (int b = 0; b < ss; ++b) {
        const double sy = (j - k.half_extent) + (b + 0.5) / ss - 0.5;
        for (int a = 0; a < ss; ++a) {
          const double sx = (i - k.half_extent) + (a + 0.5) / ss - 0.5;
          cover += shape.density(sx / radius_px, -sy / radius_px);
        }
      }
      k.weights[static_cast<std::size_t>(j) * n + i] = cover;
      total += cover;
    }
  }
  if (total <= 0.0) {
    // Radius below the subsample pitch: nothing was hit, fall back to a delta.
    std::fill(k.weights.begin(), k.weights.end(), 0.0);
    k.weights[static_cast<std::size_t>(k.half_extent) * n + k.half_extent] = 1.0;
    return k;
  }
  for (double& w : k.weights) w /= total;
  return k;
}

}  // namespace refocus
