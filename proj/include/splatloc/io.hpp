#pragma once

#include <cstdint>
#include <filesystem>

#include "splatloc/image.hpp"

namespace splatloc::io {

// Float raster layout, little-endian:
//   bytes 0-3   magic "SPLF"
//   uint32      version (1)
//   uint32      height, width, channels
//   float32     height * width * channels values, row-major, channels interleaved
inline constexpr char kRasterMagic[4] = {'S', 'P', 'L', 'F'};
inline constexpr std::uint32_t kRasterVersion = 1;

void write_raster(const std::filesystem::path& path, const Image& image);
Image read_raster(const std::filesystem::path& path);

/// 8-bit RGB (3 channels) or grayscale (1 channel); values are clamped to [0,1].
void write_png(const std::filesystem::path& path, const Image& image);
/// Returns a 3-channel image in [0,1]; grayscale and alpha inputs are converted.
Image read_png(const std::filesystem::path& path);

}  // namespace splatloc::io
