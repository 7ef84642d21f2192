#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace refocus {

enum class Errc {
  file_not_found,
  unsupported_format,
  corrupt_data,
  io_error,
  missing_sidecar,
  too_small,
  not_exif,
  missing_tag,
  malformed_ifd,
  no_valid_pixels,
  degenerate_focus,
  missing_field,
  no_valid_neighbors,
  empty_mask,
  degenerate_shape,
  dimension_mismatch,
  invalid_bounds,
  invalid_argument,
  schema_violation,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::file_not_found: return "FileNotFound";
    case Errc::unsupported_format: return "UnsupportedFormat";
    case Errc::corrupt_data: return "CorruptData";
    case Errc::io_error: return "IoError";
    case Errc::missing_sidecar: return "MissingSidecar";
    case Errc::too_small: return "TooSmall";
    case Errc::not_exif: return "NotExif";
    case Errc::missing_tag: return "MissingTag";
    case Errc::malformed_ifd: return "MalformedIfd";
    case Errc::no_valid_pixels: return "NoValidPixels";
    case Errc::degenerate_focus: return "DegenerateFocus";
    case Errc::missing_field: return "MissingField";
    case Errc::no_valid_neighbors: return "NoValidNeighbors";
    case Errc::empty_mask: return "EmptyMask";
    case Errc::degenerate_shape: return "DegenerateShape";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::invalid_bounds: return "InvalidBounds";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::schema_violation: return "SchemaViolation";
  }
  return "Unknown";
}

/// Single exception type for the library. `detail` carries the EXIF tag id
/// for MissingTag and the 1-based line number for SchemaViolation.
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& message, std::int64_t detail = 0)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code), detail_(detail) {}

  Errc code() const noexcept { return code_; }
  std::int64_t detail() const noexcept { return detail_; }

private:
  Errc code_;
  std::int64_t detail_;
};

}  // namespace refocus
