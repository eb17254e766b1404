#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "safl/params.hpp"
#include "safl/tensor.hpp"

namespace safl {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Patch matrix for one batch item: rows (in_ch*kh*kw), cols (oh*ow).
template <typename T>
void im2col(const Tensor4<T>& in, int b, int kh, int kw, int stride, int pad, int oh, int ow,
            MatRM<T>& cols) {
  const int ih = in.height(), iw = in.width();
  int row = 0;
  for (int c = 0; c < in.channels(); ++c) {
    const T* src = in.plane(b, c);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        T* dst = cols.data() + static_cast<size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) {
            std::fill(dst + static_cast<size_t>(oy) * ow, dst + static_cast<size_t>(oy + 1) * ow,
                      T(0));
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[static_cast<size_t>(oy) * ow + ox] =
                (ix >= 0 && ix < iw) ? src[static_cast<size_t>(iy) * iw + ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto the (b)-th input image.
template <typename T>
void col2im_add(const MatRM<T>& cols, int b, int kh, int kw, int stride, int pad, int oh, int ow,
                Tensor4<T>& out) {
  const int ih = out.height(), iw = out.width();
  int row = 0;
  for (int c = 0; c < out.channels(); ++c) {
    T* dst = out.plane(b, c);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const T* src = cols.data() + static_cast<size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < iw) dst[static_cast<size_t>(iy) * iw + ix] += src[static_cast<size_t>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, im2col + GEMM per batch item. Reduction order is fixed, so
// identical inputs give bitwise identical outputs.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& in, const LayerParams<T>& p, int stride, int pad) {
  if (stride < 1) throw DimError("conv2d: stride must be positive");
  if (pad < 0) throw DimError("conv2d: padding must be non-negative");
  if (in.channels() != p.in_channels())
    throw DimError("conv2d: input channel axis (got " + std::to_string(in.channels()) +
                   ", expected " + std::to_string(p.in_channels()) + ")");
  const int kh = p.kernel_h(), kw = p.kernel_w();
  const int oh = conv_out_extent(in.height(), kh, stride, pad);
  const int ow = conv_out_extent(in.width(), kw, stride, pad);
  if (oh < 1 || ow < 1)
    throw DimError("conv2d: kernel exceeds padded input (height " + std::to_string(in.height()) +
                   ", width " + std::to_string(in.width()) + ")");
  const int cout = p.out_channels();
  Tensor4<T> out(in.batch(), cout, oh, ow);
  MatRM<T> cols(in.channels() * kh * kw, oh * ow);
  CMapRM<T> wmat(p.weights.data.data(), cout, in.channels() * kh * kw);
  Eigen::Map<const VecX<T>> bvec(p.bias.data(), cout);
  for (int b = 0; b < in.batch(); ++b) {
    detail::im2col(in, b, kh, kw, stride, pad, oh, ow, cols);
    MapRM<T> omat(out.plane(b, 0), cout, oh * ow);
    omat.noalias() = wmat * cols;
    omat.colwise() += bvec;
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& in, const LayerParams<T>& p, int stride, int pad,
                             const Tensor4<T>& d_out, bool need_input_grad = true) {
  const int kh = p.kernel_h(), kw = p.kernel_w();
  const int oh = conv_out_extent(in.height(), kh, stride, pad);
  const int ow = conv_out_extent(in.width(), kw, stride, pad);
  const int cout = p.out_channels();
  if (d_out.batch() != in.batch() || d_out.channels() != cout || d_out.height() != oh ||
      d_out.width() != ow)
    throw DimError("conv2d_backward: upstream gradient shape " + shape_str(d_out.dims) +
                   ", expected " + shape_str({in.batch(), cout, oh, ow}));
  ConvGrads<T> g;
  g.weights = zeros_like(p.weights);
  g.bias.assign(cout, T(0));
  if (need_input_grad) g.input = zeros_like(in);

  MatRM<T> cols(in.channels() * kh * kw, oh * ow);
  MatRM<T> dcols(in.channels() * kh * kw, oh * ow);
  MapRM<T> dwmat(g.weights.data.data(), cout, in.channels() * kh * kw);
  CMapRM<T> wmat(p.weights.data.data(), cout, in.channels() * kh * kw);
  for (int b = 0; b < in.batch(); ++b) {
    detail::im2col(in, b, kh, kw, stride, pad, oh, ow, cols);
    CMapRM<T> domat(d_out.plane(b, 0), cout, oh * ow);
    dwmat.noalias() += domat * cols.transpose();
    // fixed-order bias reduction: Eigen's redux over a Map peels to the
    // allocation's alignment boundary, so its sum order (and hence the
    // result bits) would vary with the heap layout
    for (int c = 0; c < cout; ++c) {
      const T* row = d_out.plane(b, c);
      T s = T(0);
      for (int k = 0; k < oh * ow; ++k) s += row[k];
      g.bias[c] += s;
    }
    if (need_input_grad) {
      dcols.noalias() = wmat.transpose() * domat;
      detail::col2im_add(dcols, b, kh, kw, stride, pad, oh, ow, g.input);
    }
  }
  return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& in) {
  Tensor4<T> out = in;
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

// Gradient passes only where the forward input was strictly positive.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& in, const Tensor4<T>& d_out) {
  if (!in.same_shape(d_out)) throw DimError("relu_backward: shape mismatch");
  Tensor4<T> g = d_out;
  for (size_t i = 0; i < g.data.size(); ++i)
    if (!(in.data[i] > T(0))) g.data[i] = T(0);
  return g;
}

// 2x2 window, stride 2. Ties go to the first maximum in row-major order.
template <typename T>
Tensor4<T> max_pool2(const Tensor4<T>& in) {
  if (in.height() % 2 != 0)
    throw DimError("max_pool2: height axis must be even, got " + std::to_string(in.height()));
  if (in.width() % 2 != 0)
    throw DimError("max_pool2: width axis must be even, got " + std::to_string(in.width()));
  Tensor4<T> out(in.batch(), in.channels(), in.height() / 2, in.width() / 2);
  for (int b = 0; b < in.batch(); ++b)
    for (int c = 0; c < in.channels(); ++c) {
      const T* src = in.plane(b, c);
      T* dst = out.plane(b, c);
      const int iw = in.width(), ow = out.width();
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < ow; ++x) {
          const T* w0 = src + static_cast<size_t>(2 * y) * iw + 2 * x;
          T m = w0[0];
          if (w0[1] > m) m = w0[1];
          if (w0[iw] > m) m = w0[iw];
          if (w0[iw + 1] > m) m = w0[iw + 1];
          dst[static_cast<size_t>(y) * ow + x] = m;
        }
    }
  return out;
}

template <typename T>
Tensor4<T> max_pool2_backward(const Tensor4<T>& in, const Tensor4<T>& d_out) {
  if (d_out.batch() != in.batch() || d_out.channels() != in.channels() ||
      d_out.height() != in.height() / 2 || d_out.width() != in.width() / 2)
    throw DimError("max_pool2_backward: upstream gradient shape mismatch");
  Tensor4<T> g = zeros_like(in);
  for (int b = 0; b < in.batch(); ++b)
    for (int c = 0; c < in.channels(); ++c) {
      const T* src = in.plane(b, c);
      const T* dsrc = d_out.plane(b, c);
      T* dst = g.plane(b, c);
      const int iw = in.width(), ow = d_out.width();
      for (int y = 0; y < d_out.height(); ++y)
        for (int x = 0; x < ow; ++x) {
          const size_t base = static_cast<size_t>(2 * y) * iw + 2 * x;
          // first maximum in row-major order within the window
          size_t arg = base;
          T m = src[base];
          if (src[base + 1] > m) { m = src[base + 1]; arg = base + 1; }
          if (src[base + iw] > m) { m = src[base + iw]; arg = base + iw; }
          if (src[base + iw + 1] > m) { arg = base + iw + 1; }
          dst[arg] += dsrc[static_cast<size_t>(y) * ow + x];
        }
    }
  return g;
}

// Twofold resize by pixel replication; no trainable parameters.
template <typename T>
Tensor4<T> upsample_nearest2(const Tensor4<T>& in) {
  Tensor4<T> out(in.batch(), in.channels(), in.height() * 2, in.width() * 2);
  for (int b = 0; b < in.batch(); ++b)
    for (int c = 0; c < in.channels(); ++c) {
      const T* src = in.plane(b, c);
      T* dst = out.plane(b, c);
      const int iw = in.width(), ow = out.width();
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < ow; ++x)
          dst[static_cast<size_t>(y) * ow + x] = src[static_cast<size_t>(y / 2) * iw + x / 2];
    }
  return out;
}

// Each source pixel collects the gradient of its 2x2 replicas.
template <typename T>
Tensor4<T> upsample_nearest2_backward(const Tensor4<T>& d_out) {
  if (d_out.height() % 2 != 0 || d_out.width() % 2 != 0)
    throw DimError("upsample_nearest2_backward: gradient spatial extents must be even");
  Tensor4<T> g(d_out.batch(), d_out.channels(), d_out.height() / 2, d_out.width() / 2);
  for (int b = 0; b < d_out.batch(); ++b)
    for (int c = 0; c < d_out.channels(); ++c) {
      const T* src = d_out.plane(b, c);
      T* dst = g.plane(b, c);
      const int iw = d_out.width(), ow = g.width();
      for (int y = 0; y < d_out.height(); ++y)
        for (int x = 0; x < iw; ++x)
          dst[static_cast<size_t>(y / 2) * ow + x / 2] += src[static_cast<size_t>(y) * iw + x];
    }
  return g;
}

// Channel concatenation, a's channels first.
template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.batch() != b.batch())
    throw DimError("concat_channels: batch axis mismatch (" + std::to_string(a.batch()) + " vs " +
                   std::to_string(b.batch()) + ")");
  if (a.height() != b.height() || a.width() != b.width())
    throw DimError("concat_channels: spatial axes mismatch (" + shape_str(a.dims) + " vs " +
                   shape_str(b.dims) + ")");
  Tensor4<T> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  const size_t plane = static_cast<size_t>(a.height()) * a.width();
  for (int n = 0; n < a.batch(); ++n) {
    if (a.channels() > 0)
      std::copy(a.plane(n, 0), a.plane(n, 0) + plane * a.channels(), out.plane(n, 0));
    if (b.channels() > 0)
      std::copy(b.plane(n, 0), b.plane(n, 0) + plane * b.channels(), out.plane(n, a.channels()));
  }
  return out;
}

// Splits an upstream gradient back into the two concatenated operands.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(int a_channels,
                                                           const Tensor4<T>& d_out) {
  if (a_channels < 0 || a_channels > d_out.channels())
    throw DimError("concat_channels_backward: split channel count out of range");
  Tensor4<T> da(d_out.batch(), a_channels, d_out.height(), d_out.width());
  Tensor4<T> db(d_out.batch(), d_out.channels() - a_channels, d_out.height(), d_out.width());
  const size_t plane = static_cast<size_t>(d_out.height()) * d_out.width();
  for (int n = 0; n < d_out.batch(); ++n) {
    if (a_channels > 0)
      std::copy(d_out.plane(n, 0), d_out.plane(n, 0) + plane * a_channels, da.plane(n, 0));
    if (db.channels() > 0)
      std::copy(d_out.plane(n, a_channels), d_out.plane(n, a_channels) + plane * db.channels(),
                db.plane(n, 0));
  }
  return {std::move(da), std::move(db)};
}

// Top-left spatial crop, used to align upsampled decoder maps with skip
// features when the input size is not divisible by the full downsample factor.
template <typename T>
Tensor4<T> crop_spatial(const Tensor4<T>& in, int out_h, int out_w) {
  if (out_h > in.height() || out_w > in.width() || out_h < 1 || out_w < 1)
    throw DimError("crop_spatial: target extent " + std::to_string(out_h) + "x" +
                   std::to_string(out_w) + " out of range for " + shape_str(in.dims));
  if (out_h == in.height() && out_w == in.width()) return in;
  Tensor4<T> out(in.batch(), in.channels(), out_h, out_w);
  for (int b = 0; b < in.batch(); ++b)
    for (int c = 0; c < in.channels(); ++c)
      for (int y = 0; y < out_h; ++y) {
        const T* src = in.plane(b, c) + static_cast<size_t>(y) * in.width();
        std::copy(src, src + out_w, out.plane(b, c) + static_cast<size_t>(y) * out_w);
      }
  return out;
}

// Zero-pads the gradient back to the pre-crop extents.
template <typename T>
Tensor4<T> crop_spatial_backward(int orig_h, int orig_w, const Tensor4<T>& d_out) {
  if (orig_h == d_out.height() && orig_w == d_out.width()) return d_out;
  Tensor4<T> g(d_out.batch(), d_out.channels(), orig_h, orig_w);
  for (int b = 0; b < d_out.batch(); ++b)
    for (int c = 0; c < d_out.channels(); ++c)
      for (int y = 0; y < d_out.height(); ++y) {
        const T* src = d_out.plane(b, c) + static_cast<size_t>(y) * d_out.width();
        std::copy(src, src + d_out.width(), g.plane(b, c) + static_cast<size_t>(y) * orig_w);
      }
  return g;
}

// Elementwise sum (residual shortcut join). Backward is the identity on both
// addends, so no dedicated backward function exists.
template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!a.same_shape(b))
    throw DimError("add: shape mismatch (" + shape_str(a.dims) + " vs " + shape_str(b.dims) + ")");
  Tensor4<T> out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

// Two-way softmax across the channel axis, per pixel, stabilized by the
// per-pixel max logit.
template <typename T>
Tensor4<T> pixel_softmax2(const Tensor4<T>& logits) {
  if (logits.channels() != 2)
    throw DimError("pixel_softmax2: channel axis must be 2, got " +
                   std::to_string(logits.channels()));
  Tensor4<T> out = zeros_like(logits);
  const size_t plane = static_cast<size_t>(logits.height()) * logits.width();
  for (int b = 0; b < logits.batch(); ++b) {
    const T* l0 = logits.plane(b, 0);
    const T* l1 = logits.plane(b, 1);
    T* p0 = out.plane(b, 0);
    T* p1 = out.plane(b, 1);
    for (size_t i = 0; i < plane; ++i) {
      const T m = std::max(l0[i], l1[i]);
      const T e0 = std::exp(l0[i] - m);
      const T e1 = std::exp(l1[i] - m);
      const T z = e0 + e1;
      p0[i] = e0 / z;
      p1[i] = e1 / z;
    }
  }
  return out;
}

template <typename T>
Tensor4<T> pixel_softmax2_backward(const Tensor4<T>& probs, const Tensor4<T>& d_probs) {
  if (!probs.same_shape(d_probs)) throw DimError("pixel_softmax2_backward: shape mismatch");
  Tensor4<T> g = zeros_like(probs);
  const size_t plane = static_cast<size_t>(probs.height()) * probs.width();
  for (int b = 0; b < probs.batch(); ++b) {
    const T* p0 = probs.plane(b, 0);
    const T* p1 = probs.plane(b, 1);
    const T* d0 = d_probs.plane(b, 0);
    const T* d1 = d_probs.plane(b, 1);
    T* g0 = g.plane(b, 0);
    T* g1 = g.plane(b, 1);
    for (size_t i = 0; i < plane; ++i) {
      const T jac = p0[i] * p1[i];
      g0[i] = jac * (d0[i] - d1[i]);
      g1[i] = -g0[i];
    }
  }
  return g;
}

}  // namespace safl
