#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace atv {

// 8-bit interleaved raster; channels is 1 (grayscale) or 3 (RGB).
struct ImageU8 {
  int w = 0, h = 0, channels = 1;
  std::vector<uint8_t> pixels;  // row-major, h*w*channels bytes
};

// Binary netpbm with maxval 255: P6 (PPM, RGB) and P5 (PGM, grayscale).
ImageU8 read_pnm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img);

}  // namespace atv
