#pragma once

// Binary PPM (P6) decoding and ViT-style patch extraction.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "mdt/errors.hpp"

namespace mdt {

// Channel-last pixels scaled to [0, 1].
struct PixelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;  // height * width * 3

  float at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * width + x) * 3 + c]; }
};

namespace detail {

class PpmHeaderReader {
 public:
  explicit PpmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) throw FormatError(std::string("PPM ") + what + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PPM header: expected ") + what, start);
    return v;
  }

  std::size_t pos() const noexcept { return pos_; }
  void advance(std::size_t n) noexcept { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline PixelGrid parse_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("not a PNM stream (bad magic)", 0);
  if (bytes[1] != '6') throw FormatError(std::string("unsupported PNM format P") + static_cast<char>(bytes[1]) +
                                             " (only binary P6 is supported)", 1);
  detail::PpmHeaderReader r(bytes);
  r.advance(2);
  if (r.pos() < bytes.size() && !std::isspace(bytes[r.pos()]) && bytes[r.pos()] != '#')
    throw FormatError("PPM header: expected whitespace after magic", r.pos());
  const std::size_t width = r.read_uint("width");
  const std::size_t height = r.read_uint("height");
  const std::size_t maxval_at = r.pos();
  const std::size_t maxval = r.read_uint("maxval");
  if (width == 0 || height == 0) throw FormatError("PPM dimensions must be positive", maxval_at);
  if (maxval == 0 || maxval > 255) throw FormatError("PPM maxval must be in 1..255, got " + std::to_string(maxval), maxval_at);
  if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()]))
    throw FormatError("PPM header: expected a single whitespace byte before pixel data", r.pos());
  r.advance(1);
  const std::size_t payload = width * height * 3;
  if (bytes.size() - r.pos() < payload)
    throw FormatError("PPM payload truncated: need " + std::to_string(payload) + " bytes, have " +
                          std::to_string(bytes.size() - r.pos()),
                      bytes.size());
  PixelGrid g;
  g.height = height;
  g.width = width;
  g.values.resize(payload);
  const float inv = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < payload; ++i) g.values[i] = static_cast<float>(bytes[r.pos() + i]) * inv;
  return g;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline PixelGrid read_ppm(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_ppm(bytes);
  } catch (const FormatError& e) {
    throw e.prefixed(path);
  }
}

// Encodes 8-bit RGB as P6 with maxval 255.
inline std::vector<std::uint8_t> encode_ppm(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw ShapeError("encode_ppm: pixel buffer does not match dimensions");
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

struct ImagePatches {
  std::size_t grid_rows = 0;  // H / P
  std::size_t grid_cols = 0;  // W / P
  std::size_t patch_size = 0;
  std::vector<float> values;  // num_patches x patch_dim

  std::size_t num_patches() const noexcept { return grid_rows * grid_cols; }
  std::size_t patch_dim() const noexcept { return 3 * patch_size * patch_size; }
};

// Row-major patch order; each patch is flattened row by row, channel last.
inline ImagePatches patchify(const PixelGrid& grid, std::size_t patch) {
  if (patch == 0 || grid.height % patch != 0 || grid.width % patch != 0)
    throw ShapeError("patchify: " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                     " image is not divisible by patch size " + std::to_string(patch));
  ImagePatches out;
  out.grid_rows = grid.height / patch;
  out.grid_cols = grid.width / patch;
  out.patch_size = patch;
  out.values.reserve(grid.values.size());
  for (std::size_t pr = 0; pr < out.grid_rows; ++pr)
    for (std::size_t pc = 0; pc < out.grid_cols; ++pc)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < 3; ++c) out.values.push_back(grid.at(pr * patch + y, pc * patch + x, c));
  return out;
}

}  // namespace mdt
