#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "refocus/image.hpp"
#include "refocus/optics.hpp"

namespace refocus::fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("refocus_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline Image random_image(int w, int h, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Image img(w, h);
  for (float& v : img.data()) v = dist(rng);
  return img;
}

inline DisparityMap random_disparity(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  DisparityMap d(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) d.set(x, y, dist(rng));
  }
  return d;
}

inline DisparityMap constant_disparity(int w, int h, float v) {
  DisparityMap d(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) d.set(x, y, v);
  }
  return d;
}

inline Image checkerboard(int w, int h, float a = 0.0f, float b = 1.0f) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = ((x + y) % 2 == 0) ? a : b;
      img.set(x, y, v, v, v);
    }
  }
  return img;
}

/// Smooth multi-frequency texture with a few highlights.
inline Image textured_scene(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = x / static_cast<double>(w), v = y / static_cast<double>(h);
      const double base = 0.5 + 0.2 * std::sin(23.0 * u + 3.0 * v) + 0.15 * std::cos(31.0 * v - 7.0 * u) +
                          0.1 * std::sin(71.0 * u * v);
      const bool stripe = ((x / 5) + (y / 7)) % 2 == 0;
      img.set(x, y, static_cast<float>(std::clamp(base + (stripe ? 0.1 : -0.1), 0.0, 1.0)),
              static_cast<float>(std::clamp(base * 0.8, 0.0, 1.0)),
              static_cast<float>(std::clamp(1.0 - base * 0.6, 0.0, 1.0)));
    }
  }
  return img;
}

/// Two-plane scene: left half at `near_m`, right half at `far_m`.
inline DepthMap two_plane_depth(int w, int h, float near_m = 1.0f, float far_m = 4.0f) {
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) d.set(x, y, x < w / 2 ? near_m : far_m);
  }
  return d;
}

/// Little helper for building TIFF/EXIF byte fixtures in either byte order.
class TiffBuilder {
public:
  struct Field {
    std::uint16_t tag;
    std::uint16_t type;
    std::vector<std::uint32_t> values;  // RATIONAL: num, den pairs
  };

  explicit TiffBuilder(bool big_endian) : be_(big_endian) {}

  /// Serializes IFD0 (with an Exif pointer when `exif` is nonempty).
  std::vector<std::uint8_t> build(const std::vector<Field>& ifd0, const std::vector<Field>& exif) const {
    std::vector<std::uint8_t> out;
    if (be_) {
      out = {'M', 'M', 0, 42};
    } else {
      out = {'I', 'I', 42, 0};
    }
    put32(out, 8);
    std::vector<Field> first = ifd0;
    if (!exif.empty()) first.push_back({0x8769, 4, {0}});
    const std::size_t ifd0_size = 2 + first.size() * 12 + 4;
    const std::size_t exif_offset = 8 + ifd0_size + data_size(first);
    if (!exif.empty()) first.back().values[0] = static_cast<std::uint32_t>(exif_offset);
    write_ifd(out, first, 8);
    if (!exif.empty()) write_ifd(out, exif, exif_offset);
    return out;
  }

private:
  static std::size_t payload_bytes(const Field& f) {
    switch (f.type) {
      case 3: return 2 * f.values.size();
      case 4: return 4 * f.values.size();
      case 5:
      case 10: return 4 * f.values.size();
      default: return f.values.size();
    }
  }

  static std::size_t data_size(const std::vector<Field>& fields) {
    std::size_t n = 0;
    for (const auto& f : fields) {
      if (payload_bytes(f) > 4) n += payload_bytes(f);
    }
    return n;
  }

  void put16(std::vector<std::uint8_t>& o, std::uint32_t v) const {
    if (be_) {
      o.push_back(v >> 8 & 0xFF);
      o.push_back(v & 0xFF);
    } else {
      o.push_back(v & 0xFF);
      o.push_back(v >> 8 & 0xFF);
    }
  }
  void put32(std::vector<std::uint8_t>& o, std::uint32_t v) const {
    if (be_) {
      put16(o, v >> 16);
      put16(o, v & 0xFFFF);
    } else {
      put16(o, v & 0xFFFF);
      put16(o, v >> 16);
    }
  }

  void put_values(std::vector<std::uint8_t>& o, const Field& f) const {
    for (std::uint32_t v : f.values) {
      if (f.type == 3) {
        put16(o, v);
      } else {
        put32(o, v);
      }
    }
  }

  void write_ifd(std::vector<std::uint8_t>& out, const std::vector<Field>& fields, std::size_t at) const {
    out.resize(at);
    put16(out, static_cast<std::uint32_t>(fields.size()));
    std::size_t data_at = at + 2 + fields.size() * 12 + 4;
    std::vector<std::uint8_t> data;
    for (const auto& f : fields) {
      put16(out, f.tag);
      put16(out, f.type);
      const std::uint32_t count = f.type == 5 || f.type == 10 ? static_cast<std::uint32_t>(f.values.size() / 2)
                                                              : static_cast<std::uint32_t>(f.values.size());
      put32(out, count);
      if (payload_bytes(f) > 4) {
        put32(out, static_cast<std::uint32_t>(data_at + data.size()));
        put_values(data, f);
      } else {
        std::vector<std::uint8_t> inline_bytes;
        put_values(inline_bytes, f);
        inline_bytes.resize(4, 0);
        out.insert(out.end(), inline_bytes.begin(), inline_bytes.end());
      }
    }
    put32(out, 0);
    out.insert(out.end(), data.begin(), data.end());
  }

  bool be_;
};

/// FocalLength 50/1 and FNumber 18/10 in the Exif IFD, SubjectDistance 2/1.
inline std::vector<std::uint8_t> lens_fixture(bool big_endian, bool with_fnumber = true, bool with_distance = true) {
  std::vector<TiffBuilder::Field> exif;
  if (with_fnumber) exif.push_back({0x829D, 5, {18, 10}});
  if (with_distance) exif.push_back({0x9206, 5, {2, 1}});
  exif.push_back({0x920A, 5, {50, 1}});
  exif.push_back({0xA20E, 5, {4000, 1}});
  exif.push_back({0xA210, 3, {2}});
  return TiffBuilder(big_endian).build({{0x010F, 2, {'X', 0}}}, exif);
}

// Independent reference geometry, deliberately not sharing code with the
// library's shape module.
namespace oracle {

struct Pt {
  double x, y;
};

inline std::vector<Pt> raw_outline(const std::string& name) {
  const double pi = std::numbers::pi;
  std::vector<Pt> v;
  if (name == "triangle") {
    for (int k = 0; k < 3; ++k) v.push_back({std::cos(pi / 2 + 2 * pi * k / 3), std::sin(pi / 2 + 2 * pi * k / 3)});
  } else if (name == "star") {
    const double inner = (3.0 - std::sqrt(5.0)) / 2.0;
    for (int k = 0; k < 10; ++k) {
      const double r = k % 2 ? inner : 1.0;
      v.push_back({r * std::cos(pi / 2 + k * pi / 5), r * std::sin(pi / 2 + k * pi / 5)});
    }
  } else if (name == "heart") {
    for (int k = 0; k < 32; ++k) {
      const double t = k * 2 * pi / 32;
      v.push_back({16 * std::pow(std::sin(t), 3), 13 * std::cos(t) - 5 * std::cos(2 * t) - 2 * std::cos(3 * t) -
                                                       std::cos(4 * t)});
    }
  }
  return v;
}

// Area centroid at the origin, farthest vertex at distance 1.
inline std::vector<Pt> normalized_outline(const std::string& name) {
  std::vector<Pt> v = raw_outline(name);
  double a = 0, cx = 0, cy = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Pt p = v[i], q = v[(i + 1) % v.size()];
    const double cr = p.x * q.y - q.x * p.y;
    a += cr;
    cx += (p.x + q.x) * cr;
    cy += (p.y + q.y) * cr;
  }
  cx /= 3 * a;
  cy /= 3 * a;
  double far = 0;
  for (auto& p : v) {
    p.x -= cx;
    p.y -= cy;
    far = std::max(far, std::sqrt(p.x * p.x + p.y * p.y));
  }
  for (auto& p : v) {
    p.x /= far;
    p.y /= far;
  }
  return v;
}

// Winding number test.
inline bool inside(const std::vector<Pt>& poly, double x, double y) {
  int wn = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Pt a = poly[i], b = poly[(i + 1) % poly.size()];
    const double side = (b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y);
    if (a.y <= y) {
      if (b.y > y && side > 0) ++wn;
    } else if (b.y <= y && side < 0) {
      --wn;
    }
  }
  return wn != 0;
}

/// Footprint of one point light at (cx, cy) with blur radius r on a w x h
/// torus: per-pixel coverage of the shape from a 4x4 sample grid, unit sum.
inline std::vector<double> point_light_footprint(const std::string& name, double r, int w, int h, int cx, int cy) {
  const auto poly = normalized_outline(name);
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  const int half = static_cast<int>(std::ceil(r));
  double total = 0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      int hits = 0;
      for (int b = 0; b < 4; ++b) {
        for (int a = 0; a < 4; ++a) {
          const double u = (dx + (a + 0.5) / 4 - 0.5) / r;
          const double v = -(dy + (b + 0.5) / 4 - 0.5) / r;
          const bool in = name == "circle" ? (u * u + v * v <= 1.0) : inside(poly, u, v);
          hits += in ? 1 : 0;
        }
      }
      const int x = ((cx + dx) % w + w) % w;
      const int y = ((cy + dy) % h + h) % h;
      out[static_cast<std::size_t>(y) * w + x] += hits;
      total += hits;
    }
  }
  for (double& v : out) v /= total;
  return out;
}

inline double ncc(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle

}  // namespace refocus::fixtures
