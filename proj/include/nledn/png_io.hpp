#pragma once

// Minimal PNG reader/writer for the dataset pipeline. Supports exactly
// the on-disk contract: 8-bit RGB, non-interlaced. zlib does the
// compression; chunk framing and scanline filtering live here.

#include <cstdint>
#include <string>
#include <vector>

namespace nledn {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // RGB, row-major, 3 bytes per pixel
};

RgbImage read_png(const std::string& path);
void write_png(const std::string& path, const RgbImage& image);

}  // namespace nledn
