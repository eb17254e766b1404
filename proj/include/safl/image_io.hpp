#pragma once

#include <string>
#include <vector>

namespace safl {

// Binary PPM (P6, 8-bit). rgb is interleaved row-major, values in [0,1].
void write_ppm(const std::string& path, const std::vector<float>& rgb, int width, int height);

// Binary PGM (P5, 16-bit big-endian). Depth is meters; stored in 0.1 mm units
// so the full bin working range fits comfortably in 16 bits. Invalid depth
// (sentinel 0) stays 0.
void write_pgm16(const std::string& path, const std::vector<double>& depth, int width, int height);

struct Pgm16 {
  int width = 0;
  int height = 0;
  std::vector<double> depth;  // meters, decoded from 0.1 mm units
};

Pgm16 read_pgm16(const std::string& path);

}  // namespace safl
