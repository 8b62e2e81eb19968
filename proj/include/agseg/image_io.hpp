// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit PNG raster I/O.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace agseg::io {

class ImageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit raster, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

/// Decodes gray, gray+alpha, RGB, RGBA or palette PNGs into 1 or 3 channels.
/// Alpha-carrying files are rejected (channel count not in {1, 3}).
Image8 read_png(const std::string& path);

/// Writes a gray (1 channel) or RGB (3 channel) 8-bit PNG.
void write_png(const std::string& path, const Image8& image);

} // namespace agseg::io
