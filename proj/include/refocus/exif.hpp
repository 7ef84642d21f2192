#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>

#include "refocus/error.hpp"

namespace refocus::exif {

namespace tag {
inline constexpr std::uint16_t exif_ifd_pointer = 0x8769;
inline constexpr std::uint16_t f_number = 0x829D;
inline constexpr std::uint16_t subject_distance = 0x9206;
inline constexpr std::uint16_t focal_length = 0x920A;
inline constexpr std::uint16_t focal_plane_x_resolution = 0xA20E;
inline constexpr std::uint16_t focal_plane_resolution_unit = 0xA210;
}  // namespace tag

enum class ResolutionUnit { inch, cm, mm };

/// Subject distance in millimetres, or the EXIF "infinity" marker.
struct SubjectDistance {
  bool infinity = false;
  double mm = 0.0;

  static SubjectDistance at_infinity() { return {true, 0.0}; }
  static SubjectDistance finite(double mm) { return {false, mm}; }
  bool operator==(const SubjectDistance&) const = default;
};

struct LensMeta {
  double focal_length_mm = 0.0;
  double f_number = 0.0;
  std::optional<SubjectDistance> focus_distance;
  std::optional<double> focal_plane_x_resolution;
  std::optional<ResolutionUnit> focal_plane_unit;

  bool operator==(const LensMeta&) const = default;
};

namespace detail {

enum class ByteOrder { little, big };

// Bounds-checked view over the TIFF stream. Every read validates against
// the buffer end and throws MalformedIfd instead of reading out of range.
class TiffReader {
public:
  TiffReader(std::span<const std::uint8_t> tiff, ByteOrder order) : tiff_(tiff), order_(order) {}

  std::size_t size() const { return tiff_.size(); }

  std::uint16_t u16(std::size_t offset) const {
    require(offset, 2);
    const auto* p = tiff_.data() + offset;
    return order_ == ByteOrder::little ? std::uint16_t(p[0] | p[1] << 8) : std::uint16_t(p[1] | p[0] << 8);
  }

  std::uint32_t u32(std::size_t offset) const {
    require(offset, 4);
    const auto* p = tiff_.data() + offset;
    if (order_ == ByteOrder::little) {
      return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    }
    return std::uint32_t(p[3]) | std::uint32_t(p[2]) << 8 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[0]) << 24;
  }

  void require(std::size_t offset, std::size_t length) const {
    if (offset > tiff_.size() || length > tiff_.size() - offset) {
      throw Error(Errc::malformed_ifd, "offset " + std::to_string(offset) + " out of bounds");
    }
  }

private:
  std::span<const std::uint8_t> tiff_;
  ByteOrder order_;
};

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t value_offset = 0;  // where the value bytes start
  std::uint32_t raw_value = 0;   // the 4-byte inline field
};

constexpr std::uint16_t type_short = 3;
constexpr std::uint16_t type_long = 4;
constexpr std::uint16_t type_rational = 5;
constexpr std::uint16_t type_srational = 10;

inline std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

// IFD entries for the five tags we care about plus the Exif pointer.
struct IfdScan {
  std::optional<Entry> exif_pointer;
  std::optional<Entry> f_number;
  std::optional<Entry> focal_length;
  std::optional<Entry> subject_distance;
  std::optional<Entry> x_resolution;
  std::optional<Entry> resolution_unit;
};

inline IfdScan scan_ifd(const TiffReader& r, std::size_t ifd_offset) {
  IfdScan scan;
  const std::uint16_t count = r.u16(ifd_offset);
  r.require(ifd_offset + 2, static_cast<std::size_t>(count) * 12);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::size_t at = ifd_offset + 2 + static_cast<std::size_t>(i) * 12;
    Entry e;
    const std::uint16_t id = r.u16(at);
    e.type = r.u16(at + 2);
    e.count = r.u32(at + 4);
    e.raw_value = r.u32(at + 8);
    const std::size_t unit = type_size(e.type);
    const std::uint64_t total = static_cast<std::uint64_t>(unit) * e.count;
    e.value_offset = total <= 4 ? at + 8 : e.raw_value;
    switch (id) {
      case tag::exif_ifd_pointer: scan.exif_pointer = e; break;
      case tag::f_number: scan.f_number = e; break;
      case tag::focal_length: scan.focal_length = e; break;
      case tag::subject_distance: scan.subject_distance = e; break;
      case tag::focal_plane_x_resolution: scan.x_resolution = e; break;
      case tag::focal_plane_resolution_unit: scan.resolution_unit = e; break;
      default: break;
    }
  }
  return scan;
}

struct Rational {
  double numerator = 0.0;
  double denominator = 1.0;
  bool all_ones_numerator = false;  // 0xFFFFFFFF, the infinity marker
};

inline Rational read_rational(const TiffReader& r, const Entry& e, std::uint16_t id) {
  if ((e.type != type_rational && e.type != type_srational) || e.count < 1) {
    throw Error(Errc::malformed_ifd, "tag " + std::to_string(id) + " is not a rational", id);
  }
  r.require(e.value_offset, 8);
  const std::uint32_t num = r.u32(e.value_offset);
  const std::uint32_t den = r.u32(e.value_offset + 4);
  if (den == 0) throw Error(Errc::malformed_ifd, "zero-denominator rational in tag " + std::to_string(id), id);
  Rational out;
  out.all_ones_numerator = num == 0xFFFFFFFFu;
  if (e.type == type_srational) {
    out.numerator = static_cast<std::int32_t>(num);
    out.denominator = static_cast<std::int32_t>(den);
  } else {
    out.numerator = num;
    out.denominator = den;
  }
  return out;
}

inline double positive_value(const Rational& q, std::uint16_t id) {
  const double v = q.numerator / q.denominator;
  if (!std::isfinite(v) || v <= 0.0) throw Error(Errc::malformed_ifd, "non-positive value in tag " + std::to_string(id), id);
  return v;
}

inline std::uint32_t read_integer(const TiffReader& r, const Entry& e) {
  if (e.count < 1) throw Error(Errc::malformed_ifd, "empty integer entry");
  if (e.type == type_short) return r.u16(e.value_offset);
  if (e.type == type_long) return r.u32(e.value_offset);
  throw Error(Errc::malformed_ifd, "unexpected integer type");
}

inline std::span<const std::uint8_t> locate_tiff(std::span<const std::uint8_t> bytes) {
  auto starts_tiff = [](std::span<const std::uint8_t> b) {
    return b.size() >= 8 && ((b[0] == 'I' && b[1] == 'I' && b[2] == 0x2A && b[3] == 0) ||
                             (b[0] == 'M' && b[1] == 'M' && b[2] == 0 && b[3] == 0x2A));
  };
  static constexpr std::uint8_t exif_header[6] = {'E', 'x', 'i', 'f', 0, 0};
  if (starts_tiff(bytes)) return bytes;
  if (bytes.size() >= 6 && std::memcmp(bytes.data(), exif_header, 6) == 0) {
    auto tiff = bytes.subspan(6);
    if (starts_tiff(tiff)) return tiff;
    throw Error(Errc::not_exif, "Exif payload lacks a TIFF header");
  }
  // Full JPEG: walk markers up to the first APP1 Exif segment.
  if (bytes.size() >= 4 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
    std::size_t pos = 2;
    while (pos + 4 <= bytes.size() && bytes[pos] == 0xFF) {
      const std::uint8_t marker = bytes[pos + 1];
      if (marker == 0xD9 || marker == 0xDA) break;
      const std::size_t length = std::size_t(bytes[pos + 2]) << 8 | bytes[pos + 3];
      if (length < 2 || pos + 2 + length > bytes.size()) break;
      auto payload = bytes.subspan(pos + 4, length - 2);
      if (marker == 0xE1 && payload.size() >= 6 && std::memcmp(payload.data(), exif_header, 6) == 0) {
        auto tiff = payload.subspan(6);
        if (starts_tiff(tiff)) return tiff;
      }
      pos += 2 + length;
    }
  }
  throw Error(Errc::not_exif, "no Exif/TIFF header found");
}

}  // namespace detail

/// Extracts focal length, f-number, subject distance and focal-plane
/// resolution from an APP1 Exif payload, a bare TIFF stream or a JPEG file.
/// SubjectDistance is converted from metres to millimetres; 0 (unknown) is
/// reported as absent.
inline LensMeta parse_exif(std::span<const std::uint8_t> bytes) {
  using namespace detail;
  const auto tiff = locate_tiff(bytes);
  const ByteOrder order = tiff[0] == 'I' ? ByteOrder::little : ByteOrder::big;
  const TiffReader r(tiff, order);

  const IfdScan ifd0 = scan_ifd(r, r.u32(4));
  IfdScan exif_ifd;
  if (ifd0.exif_pointer) {
    if (ifd0.exif_pointer->type != type_long && ifd0.exif_pointer->type != 13) {
      throw Error(Errc::malformed_ifd, "Exif IFD pointer has wrong type");
    }
    exif_ifd = scan_ifd(r, ifd0.exif_pointer->raw_value);
  }
  auto pick = [](const std::optional<Entry>& primary, const std::optional<Entry>& fallback) {
    return primary ? primary : fallback;
  };

  const auto focal = pick(exif_ifd.focal_length, ifd0.focal_length);
  if (!focal) throw Error(Errc::missing_tag, "FocalLength (0x920A)", tag::focal_length);
  const auto fnum = pick(exif_ifd.f_number, ifd0.f_number);
  if (!fnum) throw Error(Errc::missing_tag, "FNumber (0x829D)", tag::f_number);

  LensMeta meta;
  meta.focal_length_mm = positive_value(read_rational(r, *focal, tag::focal_length), tag::focal_length);
  meta.f_number = positive_value(read_rational(r, *fnum, tag::f_number), tag::f_number);

  if (const auto dist = pick(exif_ifd.subject_distance, ifd0.subject_distance)) {
    const Rational q = read_rational(r, *dist, tag::subject_distance);
    if (q.all_ones_numerator) {
      meta.focus_distance = SubjectDistance::at_infinity();
    } else if (q.numerator > 0) {
      meta.focus_distance = SubjectDistance::finite(positive_value(q, tag::subject_distance) * 1000.0);
    }
  }
  if (const auto xres = pick(exif_ifd.x_resolution, ifd0.x_resolution)) {
    meta.focal_plane_x_resolution =
        positive_value(read_rational(r, *xres, tag::focal_plane_x_resolution), tag::focal_plane_x_resolution);
  }
  if (const auto unit = pick(exif_ifd.resolution_unit, ifd0.resolution_unit)) {
    switch (read_integer(r, *unit)) {
      case 2: meta.focal_plane_unit = ResolutionUnit::inch; break;
      case 3: meta.focal_plane_unit = ResolutionUnit::cm; break;
      case 4: meta.focal_plane_unit = ResolutionUnit::mm; break;
      default: break;
    }
  }
  return meta;
}

}  // namespace refocus::exif
