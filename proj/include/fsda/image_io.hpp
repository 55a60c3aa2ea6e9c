#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fsda {

/// Decoded PNG: interleaved samples, 8- or 16-bit, 1 or 3 channels.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // height * width * channels, row-major interleaved

  std::uint16_t at(int y, int x, int c = 0) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint16_t& at(int y, int x, int c = 0) {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

RawImage make_raw(int width, int height, int channels, int bit_depth);

/// Throws IoError naming the path on failure. Palette and gray+alpha inputs are rejected.
RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

}  // namespace fsda
