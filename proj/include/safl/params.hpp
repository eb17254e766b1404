#pragma once

#include <cmath>
#include <vector>

#include "safl/rng.hpp"
#include "safl/tensor.hpp"

namespace safl {

// Convolution weights/bias plus their momentum buffers. Momentum buffers
// always shape-match their parameters and start at zero.
template <typename T>
struct LayerParams {
  Tensor4<T> weights;     // (out_ch, in_ch, kh, kw)
  std::vector<T> bias;    // per out_ch
  Tensor4<T> w_momentum;  // same shape as weights
  std::vector<T> b_momentum;

  int out_channels() const { return weights.dims[0]; }
  int in_channels() const { return weights.dims[1]; }
  int kernel_h() const { return weights.dims[2]; }
  int kernel_w() const { return weights.dims[3]; }
  size_t param_count() const { return weights.size() + bias.size(); }
};

// Zero-mean gaussian weights with std sqrt(2 / fan_in), zero bias.
template <typename T>
LayerParams<T> make_conv_params(int out_ch, int in_ch, int kh, int kw, Rng& rng) {
  LayerParams<T> p;
  p.weights = Tensor4<T>(out_ch, in_ch, kh, kw);
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kh * kw));
  for (T& v : p.weights.data) v = static_cast<T>(stddev * rng.normal());
  p.bias.assign(out_ch, T(0));
  p.w_momentum = zeros_like(p.weights);
  p.b_momentum.assign(out_ch, T(0));
  return p;
}

}  // namespace safl
