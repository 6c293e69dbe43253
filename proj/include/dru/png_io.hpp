#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dru {

// Minimal 8-bit PNG codec (zlib-backed). Writes grayscale (1 channel) and
// RGBA (4 channel) non-interlaced images; reads any 8-bit non-interlaced,
// non-palette PNG. Malformed files, unsupported bit depths and channel
// layouts raise FormatError with distinct messages.
struct PngImage {
  std::int64_t w = 0, h = 0;
  int channels = 0;                  // 1, 2, 3 or 4
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

void write_png(const std::string& path, const PngImage& img);
PngImage read_png(const std::string& path);

}  // namespace dru
