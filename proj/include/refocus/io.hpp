#pragma once

#include <png.h>

#include <cctype>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "refocus/error.hpp"
#include "refocus/image.hpp"

namespace refocus {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw Error(Errc::file_not_found, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_error, "short write to " + path.string());
}

/// Decoded PNG samples before any colour interpretation.
struct PngRaster {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;

  double max_value() const { return bit_depth == 16 ? 65535.0 : 255.0; }
  double normalized(std::size_t pixel, int channel) const {
    return samples[pixel * channels + channel] / max_value();
  }
};

namespace detail {

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

struct PngWriteSink {
  Bytes* out;
};

inline void png_read_from_memory(png_structp png, png_bytep dst, png_size_t length) {
  auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->size) png_error(png, "truncated PNG stream");
  std::memcpy(dst, cursor->data + cursor->offset, length);
  cursor->offset += length;
}

inline void png_write_to_memory(png_structp png, png_bytep src, png_size_t length) {
  auto* sink = static_cast<PngWriteSink*>(png_get_io_ptr(png));
  sink->out->insert(sink->out->end(), src, src + length);
}

inline void png_flush_noop(png_structp) {}

inline void png_silent_warning(png_structp, png_const_charp) {}

[[noreturn]] inline void png_silent_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }

// Returns false on a libpng error. Every non-trivial local is constructed
// before setjmp so a longjmp never skips a constructor.
inline bool decode_png_impl(const std::uint8_t* data, std::size_t size, PngRaster* out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_silent_error, png_silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  PngReadCursor cursor{data, size, 0};
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &cursor, png_read_from_memory);
  png_read_info(png, info);

  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int channels = png_get_channels(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16) || (depth != 8 && depth != 16)) {
    png_error(png, "unsupported PNG layout");
  }

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out->width = static_cast<int>(width);
  out->height = static_cast<int>(height);
  out->channels = channels;
  out->bit_depth = depth;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  out->samples.resize(count);
  if (depth == 8) {
    for (std::size_t i = 0; i < count; ++i) out->samples[i] = buffer[i];
  } else {
    std::memcpy(out->samples.data(), buffer.data(), count * 2);
  }
  return true;
}

inline bool encode_png_impl(const PngRaster& raster, int compression, Bytes* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_silent_error, png_silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  PngWriteSink sink{out};
  const int bytes_per_sample = raster.bit_depth / 8;
  const std::size_t row_bytes = static_cast<std::size_t>(raster.width) * raster.channels * bytes_per_sample;
  std::vector<std::uint8_t> row(row_bytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &sink, png_write_to_memory, png_flush_noop);
  int color_type = PNG_COLOR_TYPE_GRAY;
  if (raster.channels == 2) color_type = PNG_COLOR_TYPE_GRAY_ALPHA;
  if (raster.channels == 3) color_type = PNG_COLOR_TYPE_RGB;
  if (raster.channels == 4) color_type = PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height),
               raster.bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, compression);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(raster.width) * raster.channels;
  for (int y = 0; y < raster.height; ++y) {
    const std::uint16_t* src = raster.samples.data() + static_cast<std::size_t>(y) * per_row;
    if (bytes_per_sample == 1) {
      for (std::size_t i = 0; i < per_row; ++i) row[i] = static_cast<std::uint8_t>(src[i]);
    } else {
      for (std::size_t i = 0; i < per_row; ++i) {
        row[2 * i] = static_cast<std::uint8_t>(src[i] >> 8);
        row[2 * i + 1] = static_cast<std::uint8_t>(src[i] & 0xFF);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

inline bool has_png_signature(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

inline std::uint16_t quantize(double encoded, double max_value) {
  const double clamped = std::clamp(encoded, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(clamped * max_value));
}

}  // namespace detail

inline PngRaster decode_png(std::span<const std::uint8_t> bytes) {
  if (!detail::has_png_signature(bytes)) throw Error(Errc::unsupported_format, "not a PNG stream");
  PngRaster raster;
  if (!detail::decode_png_impl(bytes.data(), bytes.size(), &raster)) throw Error(Errc::corrupt_data, "PNG decode failed");
  return raster;
}

inline Bytes encode_png(const PngRaster& raster) {
  if (raster.width < 1 || raster.height < 1 || raster.channels < 1 || raster.channels > 4 ||
      (raster.bit_depth != 8 && raster.bit_depth != 16) ||
      raster.samples.size() != static_cast<std::size_t>(raster.width) * raster.height * raster.channels) {
    throw Error(Errc::invalid_argument, "inconsistent PNG raster");
  }
  Bytes out;
  if (!detail::encode_png_impl(raster, 6, &out)) throw Error(Errc::io_error, "PNG encode failed");
  return out;
}

/// Decodes an 8/16-bit PNG to linear light. Alpha is dropped; gray is replicated.
inline Image decode_image(std::span<const std::uint8_t> bytes) {
  const PngRaster raster = decode_png(bytes);
  Image img(raster.width, raster.height);
  const bool rgb = raster.channels >= 3;
  const double max_value = raster.max_value();
  // Decode through a lookup table; the sample grid is at most 65536 wide.
  std::vector<float> table(static_cast<std::size_t>(max_value) + 1);
  for (std::size_t v = 0; v < table.size(); ++v) table[v] = static_cast<float>(srgb_decode(v / max_value));
  auto dst = img.data();
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const std::uint16_t* s = raster.samples.data() + p * raster.channels;
    for (int c = 0; c < 3; ++c) dst[3 * p + c] = table[rgb ? s[c] : s[0]];
  }
  return img;
}

/// Clamps to [0,1], sRGB-encodes and packs as 16-bit RGB PNG.
inline Bytes encode_image_png16(const Image& img) {
  PngRaster raster{img.width(), img.height(), 3, 16, {}};
  raster.samples.resize(img.data().size());
  auto src = img.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    raster.samples[i] = detail::quantize(srgb_encode(std::clamp<double>(src[i], 0.0, 1.0)), 65535.0);
  }
  return encode_png(raster);
}

inline Image load_image(const std::filesystem::path& path) { return decode_image(read_file_bytes(path)); }

inline void save_image(const Image& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_image_png16(img));
}

/// Raw normalized samples in [0,1] without any transfer function. Colour
/// inputs are reduced with Rec. 709 weights.
inline GrayMap decode_gray(std::span<const std::uint8_t> bytes) {
  const PngRaster raster = decode_png(bytes);
  GrayMap out(raster.width, raster.height);
  auto dst = out.data();
  for (std::size_t p = 0; p < dst.size(); ++p) {
    if (raster.channels >= 3) {
      dst[p] = static_cast<float>(rec709_weights[0] * raster.normalized(p, 0) +
                                  rec709_weights[1] * raster.normalized(p, 1) +
                                  rec709_weights[2] * raster.normalized(p, 2));
    } else {
      dst[p] = static_cast<float>(raster.normalized(p, 0));
    }
  }
  return out;
}

inline GrayMap load_gray(const std::filesystem::path& path) { return decode_gray(read_file_bytes(path)); }

inline Bytes encode_gray_png8(const GrayMap& map) {
  PngRaster raster{map.width(), map.height(), 1, 8, {}};
  raster.samples.resize(map.pixel_count());
  auto src = map.data();
  for (std::size_t i = 0; i < src.size(); ++i) raster.samples[i] = detail::quantize(src[i], 255.0);
  return encode_png(raster);
}

inline void save_gray_png8(const GrayMap& map, const std::filesystem::path& path) {
  write_file_bytes(path, encode_gray_png8(map));
}

// ---------------------------------------------------------------------------
// Depth: PFM or 16-bit PNG with a `{ "meters_per_unit": x }` JSON sidecar.

namespace detail {

inline bool is_pfm(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'F' || bytes[1] == 'f');
}

inline DepthMap decode_pfm(std::span<const std::uint8_t> bytes) {
  const bool color = bytes[1] == 'F';
  std::size_t pos = 2;
  auto next_token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw Error(Errc::corrupt_data, "truncated PFM header");
    return std::string(bytes.begin() + start, bytes.begin() + pos);
  };
  int width = 0;
  int height = 0;
  double scale = 0.0;
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    scale = std::stod(next_token());
  } catch (const std::logic_error&) {
    throw Error(Errc::corrupt_data, "malformed PFM header");
  }
  // A single whitespace byte separates the header from the raster.
  if (pos >= bytes.size()) throw Error(Errc::corrupt_data, "truncated PFM header");
  ++pos;
  if (width < 1 || height < 1 || width > (1 << 16) || height > (1 << 16) || scale == 0.0) {
    throw Error(Errc::corrupt_data, "invalid PFM dimensions or scale");
  }
  const int comps = color ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * comps;
  if (bytes.size() - pos < count * 4) throw Error(Errc::corrupt_data, "truncated PFM raster");
  const bool little = scale < 0.0;
  std::vector<float> values(static_cast<std::size_t>(width) * height);
  for (int row = 0; row < height; ++row) {
    // PFM stores scanlines bottom to top.
    const int y = height - 1 - row;
    for (int x = 0; x < width; ++x) {
      const std::size_t src = pos + ((static_cast<std::size_t>(row) * width + x) * comps) * 4;
      std::uint8_t b[4];
      std::memcpy(b, bytes.data() + src, 4);
      std::uint32_t bits = little ? (std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                                     std::uint32_t(b[3]) << 24)
                                  : (std::uint32_t(b[3]) | std::uint32_t(b[2]) << 8 | std::uint32_t(b[1]) << 16 |
                                     std::uint32_t(b[0]) << 24);
      float v;
      std::memcpy(&v, &bits, 4);
      values[static_cast<std::size_t>(y) * width + x] = v;
    }
  }
  return DepthMap::from_values(width, height, values);
}

inline double parse_sidecar(std::string_view text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("meters_per_unit") ||
      !doc["meters_per_unit"].is_number()) {
    throw Error(Errc::missing_sidecar, "sidecar lacks numeric meters_per_unit");
  }
  const double scale = doc["meters_per_unit"].get<double>();
  if (!std::isfinite(scale) || scale <= 0.0) throw Error(Errc::missing_sidecar, "meters_per_unit must be > 0");
  return scale;
}

}  // namespace detail

/// Accepts PFM bytes directly; PNG bytes require the sidecar JSON text.
inline DepthMap decode_depth(std::span<const std::uint8_t> bytes, std::optional<std::string_view> sidecar_json) {
  if (detail::is_pfm(bytes)) return detail::decode_pfm(bytes);
  if (!detail::has_png_signature(bytes)) throw Error(Errc::unsupported_format, "depth must be PFM or 16-bit PNG");
  const PngRaster raster = decode_png(bytes);
  if (raster.bit_depth != 16 || raster.channels != 1) {
    throw Error(Errc::unsupported_format, "depth PNG must be 16-bit grayscale");
  }
  if (!sidecar_json) throw Error(Errc::missing_sidecar, "PNG depth requires a meters_per_unit sidecar");
  const double scale = detail::parse_sidecar(*sidecar_json);
  std::vector<float> meters(raster.samples.size());
  for (std::size_t i = 0; i < meters.size(); ++i) meters[i] = static_cast<float>(raster.samples[i] * scale);
  return DepthMap::from_values(raster.width, raster.height, meters);
}

/// Sidecar for `depth.png` is `depth.json` next to it.
inline std::filesystem::path depth_sidecar_path(const std::filesystem::path& depth_png) {
  auto p = depth_png;
  p.replace_extension(".json");
  return p;
}

inline DepthMap load_depth(const std::filesystem::path& path) {
  const Bytes bytes = read_file_bytes(path);
  if (detail::is_pfm(bytes)) return detail::decode_pfm(bytes);
  if (!detail::has_png_signature(bytes)) throw Error(Errc::unsupported_format, "depth must be PFM or 16-bit PNG");
  const auto sidecar = depth_sidecar_path(path);
  std::error_code ec;
  if (!std::filesystem::is_regular_file(sidecar, ec)) {
    throw Error(Errc::missing_sidecar, "missing sidecar " + sidecar.string());
  }
  const Bytes text = read_file_bytes(sidecar);
  return decode_depth(bytes, std::string_view(reinterpret_cast<const char*>(text.data()), text.size()));
}

/// Little-endian grayscale PFM; invalid pixels are written as 0.
inline Bytes encode_depth_pfm(const DepthMap& depth) {
  std::ostringstream header;
  header << "Pf\n" << depth.width() << ' ' << depth.height() << "\n-1.0\n";
  const std::string h = header.str();
  Bytes out(h.begin(), h.end());
  out.reserve(out.size() + static_cast<std::size_t>(depth.width()) * depth.height() * 4);
  for (int row = 0; row < depth.height(); ++row) {
    const int y = depth.height() - 1 - row;
    for (int x = 0; x < depth.width(); ++x) {
      const float v = depth.valid(x, y) ? depth.at(x, y) : 0.0f;
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  return out;
}

inline void save_depth_pfm(const DepthMap& depth, const std::filesystem::path& path) {
  write_file_bytes(path, encode_depth_pfm(depth));
}

}  // namespace refocus
