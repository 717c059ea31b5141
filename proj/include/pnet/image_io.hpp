#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace pnet {

/// 8-bit raster, interleaved row-major (gray: 1 channel, RGB: 3 channels).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c = 0) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c = 0) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes a PNG into `channels` (1 or 3) 8-bit channels, converting colour type as needed.
Image8 read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace pnet
