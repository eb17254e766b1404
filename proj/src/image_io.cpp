#include "safl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "safl/errors.hpp"

namespace safl {

namespace {

constexpr double kDepthUnit = 1e-4;  // 0.1 mm per count

uint8_t quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_ppm(const std::string& path, const std::vector<float>& rgb, int width, int height) {
  if (width <= 0 || height <= 0) throw DimError("write_ppm: non-positive image extent");
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw DimError("write_ppm: pixel buffer length does not match extents");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_ppm: cannot open " + path);
  f << "P6\n" << width << " " << height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    const float* src = rgb.data() + static_cast<size_t>(y) * width * 3;
    for (size_t i = 0; i < row.size(); ++i) row[i] = quantize8(src[i]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write_ppm: short write to " + path);
}

void write_pgm16(const std::string& path, const std::vector<double>& depth, int width,
                 int height) {
  if (width <= 0 || height <= 0) throw DimError("write_pgm16: non-positive image extent");
  if (depth.size() != static_cast<size_t>(width) * height)
    throw DimError("write_pgm16: depth buffer length does not match extents");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pgm16: cannot open " + path);
  f << "P5\n" << width << " " << height << "\n65535\n";
  std::vector<uint8_t> row(static_cast<size_t>(width) * 2);
  for (int y = 0; y < height; ++y) {
    const double* src = depth.data() + static_cast<size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      const long counts = std::lround(std::clamp(src[x] / kDepthUnit, 0.0, 65535.0));
      row[2 * x] = static_cast<uint8_t>(counts >> 8);  // big-endian per PGM spec
      row[2 * x + 1] = static_cast<uint8_t>(counts & 0xff);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write_pgm16: short write to " + path);
}

Pgm16 read_pgm16(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_pgm16: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw FormatError("read_pgm16: not a binary PGM", 0);
  Pgm16 img;
  int maxval = 0;
  f >> img.width >> img.height >> maxval;
  if (!f || img.width <= 0 || img.height <= 0)
    throw FormatError("read_pgm16: bad header", static_cast<size_t>(f.tellg()));
  if (maxval != 65535)
    throw FormatError("read_pgm16: expected 16-bit maxval", static_cast<size_t>(f.tellg()));
  f.get();  // single whitespace byte after maxval
  const size_t n = static_cast<size_t>(img.width) * img.height;
  std::vector<uint8_t> raw(n * 2);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(f.gcount()) != raw.size())
    throw FormatError("read_pgm16: truncated pixel data", static_cast<size_t>(f.gcount()));
  img.depth.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const unsigned counts = (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
    img.depth[i] = counts * kDepthUnit;
  }
  return img;
}

}  // namespace safl
