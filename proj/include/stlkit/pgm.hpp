#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stlkit {

// Binary PGM (P5), 8-bit or 16-bit (big-endian sample words per the PNM
// convention). Pixels are normalized to [0,1] as value / maxval.
struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<float> pixels;  // row-major, height * width
};

PgmImage read_pgm(const std::string& path);

// 8-bit writer; values are clamped/rounded from [0,1].
void write_pgm(const std::string& path, int width, int height,
               const std::vector<float>& pixels);

// Raw-byte writer used when exact output values are already known.
void write_pgm_bytes(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& bytes);

}  // namespace stlkit
