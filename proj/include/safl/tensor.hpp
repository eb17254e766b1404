#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "safl/errors.hpp"

namespace safl {

// Dense rank-4 array, row-major with batch outermost: index order (b, c, y, x).
template <typename T>
struct Tensor4 {
  std::array<int, 4> dims{0, 0, 0, 0};
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int b, int c, int h, int w, T fill = T(0))
      : dims{b, c, h, w}, data(checked_len(b, c, h, w), fill) {}

  int batch() const { return dims[0]; }
  int channels() const { return dims[1]; }
  int height() const { return dims[2]; }
  int width() const { return dims[3]; }
  size_t size() const { return data.size(); }

  size_t index(int b, int c, int y, int x) const {
    return ((static_cast<size_t>(b) * dims[1] + c) * dims[2] + y) * dims[3] + x;
  }

  T& at(int b, int c, int y, int x) { return data[index(b, c, y, x)]; }
  const T& at(int b, int c, int y, int x) const { return data[index(b, c, y, x)]; }

  // Contiguous HxW plane for (b, c).
  T* plane(int b, int c) { return data.data() + index(b, c, 0, 0); }
  const T* plane(int b, int c) const { return data.data() + index(b, c, 0, 0); }

  bool same_shape(const Tensor4& o) const { return dims == o.dims; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(T v) { data.assign(data.size(), v); }

 private:
  static size_t checked_len(int b, int c, int h, int w) {
    if (b < 0 || c < 0 || h < 0 || w < 0) throw DimError("Tensor4: negative extent");
    return static_cast<size_t>(b) * static_cast<size_t>(c) * static_cast<size_t>(h) *
           static_cast<size_t>(w);
  }
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
  return Tensor4<T>(t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
}

inline std::string shape_str(const std::array<int, 4>& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]) + "x" +
         std::to_string(d[3]);
}

}  // namespace safl
