#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "safl/ops.hpp"
#include "safl/optim.hpp"
#include "safl/params.hpp"
#include "safl/rng.hpp"

namespace safl {

struct NetworkConfig {
  int patch_size = 168;  // P
  int input_size = 224;  // R = 4P/3
  int map_size = 56;     // M = P/3 = R/4
  std::array<int, 4> widths{16, 32, 64, 128};
  bool freeze_encoder = false;
  bool depth_as_rgb = false;  // double-RGB ablation: feed RGB to both streams
  double depth_min = 0.5;     // meters, linear normalization range for the depth stream
  double depth_max = 1.1;

  void validate() const {
    if (patch_size < 3 || patch_size % 3 != 0)
      throw ConfigError("NetworkConfig: patch size must be a positive multiple of 3, got " +
                        std::to_string(patch_size));
    if (input_size != 4 * patch_size / 3)
      throw ConfigError("NetworkConfig: input size must be 4/3 of the patch size");
    if (map_size != patch_size / 3)
      throw ConfigError("NetworkConfig: map size must be a third of the patch size");
    for (int w : widths)
      if (w < 1) throw ConfigError("NetworkConfig: channel widths must be positive");
    if (!(depth_max > depth_min))
      throw ConfigError("NetworkConfig: depth range must be non-empty");
  }
};

inline NetworkConfig make_network_config(int patch_size,
                                         std::array<int, 4> widths = {16, 32, 64, 128}) {
  NetworkConfig cfg;
  cfg.patch_size = patch_size;
  cfg.input_size = 4 * patch_size / 3;
  cfg.map_size = patch_size / 3;
  cfg.widths = widths;
  cfg.validate();
  return cfg;
}

// conv1(k3, stride) -> relu -> conv2(k3) joined with the shortcut, then relu.
// Downsampling stages carry a 1x1 strided projection shortcut.
template <typename T>
struct ResidualBlock {
  LayerParams<T> conv1, conv2;
  LayerParams<T> proj;
  bool has_proj = false;
  int stride = 1;
};

template <typename T>
struct DecoderStage {
  LayerParams<T> conv1, conv2;
};

// Dual shared-weight encoder streams (RGB + depth) with a U-net decoder over
// the concatenated skip features. One parameter set serves both streams.
template <typename T>
struct Network {
  NetworkConfig cfg;
  LayerParams<T> stem;                // 3 -> w0, k3 s2 p1
  std::array<ResidualBlock<T>, 4> enc;  // scales R/4, R/8, R/16, R/32
  std::array<DecoderStage<T>, 3> dec;   // deepest first: R/16, R/8, R/4
  LayerParams<T> head;                // 1x1, w0 -> 2
  uint64_t step = 0;                  // n_l, trials trained on
};

// Spatial extent of each encoder scale (ceil halving below the stem).
inline std::array<int, 4> encoder_extents(int input_size) {
  std::array<int, 4> e{};
  e[0] = input_size / 4;
  for (int k = 1; k < 4; ++k) e[k] = (e[k - 1] + 1) / 2;
  return e;
}

template <typename T>
Network<T> build_network(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  Network<T> net;
  net.cfg = cfg;
  Rng rng(seed);
  const auto& w = cfg.widths;
  net.stem = make_conv_params<T>(w[0], 3, 3, 3, rng);
  for (int k = 0; k < 4; ++k) {
    auto& blk = net.enc[k];
    const int cin = k == 0 ? w[0] : w[k - 1];
    blk.stride = k == 0 ? 1 : 2;
    blk.conv1 = make_conv_params<T>(w[k], cin, 3, 3, rng);
    blk.conv2 = make_conv_params<T>(w[k], w[k], 3, 3, rng);
    blk.has_proj = blk.stride != 1 || cin != w[k];
    if (blk.has_proj) blk.proj = make_conv_params<T>(w[k], cin, 1, 1, rng);
  }
  // decoder stage d[k] emits width w[2-k]: w2 at R/16, w1 at R/8, w0 at R/4
  for (int k = 0; k < 3; ++k) {
    const int out_w = w[2 - k];
    const int up_w = k == 0 ? 2 * w[3] : w[3 - k];
    const int cat_w = up_w + 2 * w[2 - k];  // upsampled + both streams' skips
    net.dec[k].conv1 = make_conv_params<T>(out_w, cat_w, 3, 3, rng);
    net.dec[k].conv2 = make_conv_params<T>(out_w, out_w, 3, 3, rng);
  }
  net.head = make_conv_params<T>(2, w[0], 1, 1, rng);
  return net;
}

// Stable iteration over every parameter tensor, used by the optimizer step
// and checkpoint code. Names double as the checkpoint tensor prefix.
template <typename T, typename Fn>
void for_each_layer(Network<T>& net, Fn&& fn) {
  fn("enc.stem", net.stem, true);
  for (int k = 0; k < 4; ++k) {
    const std::string p = "enc.b" + std::to_string(k + 1);
    fn(p + ".c1", net.enc[k].conv1, true);
    fn(p + ".c2", net.enc[k].conv2, true);
    if (net.enc[k].has_proj) fn(p + ".proj", net.enc[k].proj, true);
  }
  for (int k = 0; k < 3; ++k) {
    const std::string p = "dec.d" + std::to_string(3 - k);
    fn(p + ".c1", net.dec[k].conv1, false);
    fn(p + ".c2", net.dec[k].conv2, false);
  }
  fn("dec.head", net.head, false);
}

template <typename T>
size_t parameter_count(const Network<T>& net) {
  size_t n = 0;
  for_each_layer(const_cast<Network<T>&>(net),
                 [&](const std::string&, LayerParams<T>& p, bool) { n += p.param_count(); });
  return n;
}

// ---- forward ---------------------------------------------------------------

template <typename T>
struct BlockCtx {
  Tensor4<T> in, pre1, act1, pre2, sum;
};

template <typename T>
struct StreamCtx {
  Tensor4<T> in, stem_pre, stem_act, pooled;
  std::array<BlockCtx<T>, 4> blk;
  std::array<Tensor4<T>, 4> feat;  // block outputs (post-relu)
};

template <typename T>
struct DecStageCtx {
  Tensor4<T> up, cropped, cat, pre1, act1, pre2, out;
  int in_h = 0, in_w = 0;  // extents before upsampling, for the crop backward
  std::array<int, 2> split{};  // channel counts: upsampled part, rgb skip part
};

template <typename T>
struct FwdCtx {
  StreamCtx<T> rgb, depth;
  Tensor4<T> deep;  // concat of both streams' deepest features
  std::array<DecStageCtx<T>, 3> dec;
  Tensor4<T> logits, probs;
};

namespace detail {

template <typename T>
void stream_forward(const Network<T>& net, const Tensor4<T>& x, StreamCtx<T>& s) {
  s.in = x;
  s.stem_pre = conv2d(x, net.stem, 2, 1);
  s.stem_act = relu(s.stem_pre);
  s.pooled = max_pool2(s.stem_act);
  Tensor4<T> cur = s.pooled;
  for (int k = 0; k < 4; ++k) {
    const auto& b = net.enc[k];
    auto& c = s.blk[k];
    c.in = cur;
    c.pre1 = conv2d(c.in, b.conv1, b.stride, 1);
    c.act1 = relu(c.pre1);
    c.pre2 = conv2d(c.act1, b.conv2, 1, 1);
    const Tensor4<T> shortcut = b.has_proj ? conv2d(c.in, b.proj, b.stride, 0) : c.in;
    c.sum = add(c.pre2, shortcut);
    s.feat[k] = relu(c.sum);
    cur = s.feat[k];
  }
}

// returns d(input); accumulates parameter gradients through `grads`
template <typename T, typename GradSink>
Tensor4<T> stream_backward(const Network<T>& net, const StreamCtx<T>& s,
                           std::array<Tensor4<T>, 4> d_feat, GradSink&& sink,
                           bool need_input_grad) {
  Tensor4<T> d_cur = std::move(d_feat[3]);
  for (int k = 3; k >= 0; --k) {
    const auto& b = net.enc[k];
    const auto& c = s.blk[k];
    const Tensor4<T> d_sum = relu_backward(c.sum, d_cur);
    auto g2 = conv2d_backward(c.act1, b.conv2, 1, 1, d_sum);
    const Tensor4<T> d_pre1 = relu_backward(c.pre1, g2.input);
    auto g1 = conv2d_backward(c.in, b.conv1, b.stride, 1, d_pre1);
    Tensor4<T> d_in = std::move(g1.input);
    if (b.has_proj) {
      auto gp = conv2d_backward(c.in, b.proj, b.stride, 0, d_sum);
      d_in = add(d_in, gp.input);
      sink("enc.b" + std::to_string(k + 1) + ".proj", std::move(gp.weights), std::move(gp.bias));
    } else {
      d_in = add(d_in, d_sum);
    }
    sink("enc.b" + std::to_string(k + 1) + ".c2", std::move(g2.weights), std::move(g2.bias));
    sink("enc.b" + std::to_string(k + 1) + ".c1", std::move(g1.weights), std::move(g1.bias));
    if (k > 0) {
      d_cur = add(d_feat[k - 1], d_in);
    } else {
      d_cur = std::move(d_in);
    }
  }
  const Tensor4<T> d_stem_act = max_pool2_backward(s.stem_act, d_cur);
  const Tensor4<T> d_stem_pre = relu_backward(s.stem_pre, d_stem_act);
  auto gs = conv2d_backward(s.in, net.stem, 2, 1, d_stem_pre, need_input_grad);
  sink("enc.stem", std::move(gs.weights), std::move(gs.bias));
  return need_input_grad ? std::move(gs.input) : Tensor4<T>();
}

}  // namespace detail

// Full forward pass over already-resized, already-normalized 3-channel inputs
// (batch x 3 x R x R each). Returns softmax probabilities (batch x 2 x M x M);
// logits stay in the context for the loss gradient.
template <typename T>
Tensor4<T> forward(const Network<T>& net, const Tensor4<T>& rgb, const Tensor4<T>& depth3,
                   FwdCtx<T>& ctx) {
  const int r = net.cfg.input_size;
  if (rgb.channels() != 3 || rgb.height() != r || rgb.width() != r)
    throw DimError("forward: rgb stream shape " + shape_str(rgb.dims) + ", expected Bx3x" +
                   std::to_string(r) + "x" + std::to_string(r));
  if (!depth3.same_shape(rgb)) throw DimError("forward: stream shapes differ");
  if (!rgb.all_finite() || !depth3.all_finite())
    throw NumericError("forward: non-finite input");

  detail::stream_forward(net, rgb, ctx.rgb);
  detail::stream_forward(net, depth3, ctx.depth);

  ctx.deep = concat_channels(ctx.rgb.feat[3], ctx.depth.feat[3]);
  Tensor4<T> cur = ctx.deep;
  for (int k = 0; k < 3; ++k) {
    auto& d = ctx.dec[k];
    const int skip = 2 - k;  // decoder stage k consumes encoder scale feat[skip]
    const auto& skip_rgb = ctx.rgb.feat[skip];
    const auto& skip_depth = ctx.depth.feat[skip];
    d.in_h = cur.height();
    d.in_w = cur.width();
    d.up = upsample_nearest2(cur);
    d.cropped = crop_spatial(d.up, skip_rgb.height(), skip_rgb.width());
    d.split = {d.cropped.channels(), skip_rgb.channels()};
    d.cat = concat_channels(concat_channels(d.cropped, skip_rgb), skip_depth);
    d.pre1 = conv2d(d.cat, net.dec[k].conv1, 1, 1);
    d.act1 = relu(d.pre1);
    d.pre2 = conv2d(d.act1, net.dec[k].conv2, 1, 1);
    d.out = relu(d.pre2);
    cur = d.out;
  }
  ctx.logits = conv2d(cur, net.head, 1, 0);
  ctx.probs = pixel_softmax2(ctx.logits);
  if (!ctx.probs.all_finite()) throw NumericError("forward: non-finite activations");
  return ctx.probs;
}

// Gradient of one named parameter tensor pair.
template <typename T>
struct LayerGrads {
  Tensor4<T> weights;
  std::vector<T> bias;
  bool used = false;
};

template <typename T>
struct NetGrads {
  LayerGrads<T> stem;
  std::array<std::array<LayerGrads<T>, 3>, 4> enc;  // [block][c1, c2, proj]
  std::array<std::array<LayerGrads<T>, 2>, 3> dec;  // [stage][c1, c2]
  LayerGrads<T> head;
  Tensor4<T> d_rgb, d_depth;  // input gradients (gradcheck support)

  LayerGrads<T>* slot(const std::string& name) {
    if (name == "enc.stem") return &stem;
    if (name == "dec.head") return &head;
    if (name.rfind("enc.b", 0) == 0) {
      const int blk = name[5] - '1';
      const std::string tail = name.substr(7);
      const int idx = tail == "c1" ? 0 : tail == "c2" ? 1 : 2;
      return &enc[blk][idx];
    }
    const int stage = 3 - (name[5] - '0');  // dec.dN -> ctx index
    return &dec[stage][name.back() - '1'];
  }

  void accumulate(const std::string& name, Tensor4<T>&& w, std::vector<T>&& b) {
    LayerGrads<T>* g = slot(name);
    if (!g->used) {
      g->weights = std::move(w);
      g->bias = std::move(b);
      g->used = true;
    } else {
      for (size_t i = 0; i < g->weights.data.size(); ++i) g->weights.data[i] += w.data[i];
      for (size_t i = 0; i < g->bias.size(); ++i) g->bias[i] += b[i];
    }
  }
};

// Backward pass from the logits gradient. Both streams share encoder
// parameters, so their contributions accumulate into the same slots.
template <typename T>
NetGrads<T> backward(const Network<T>& net, const FwdCtx<T>& ctx, const Tensor4<T>& d_logits,
                     bool encoder_grads = true, bool input_grads = false) {
  NetGrads<T> grads;
  const auto sink = [&](const std::string& name, Tensor4<T>&& w, std::vector<T>&& b) {
    grads.accumulate(name, std::move(w), std::move(b));
  };

  auto gh = conv2d_backward(ctx.dec[2].out, net.head, 1, 0, d_logits);
  sink("dec.head", std::move(gh.weights), std::move(gh.bias));
  Tensor4<T> d_cur = std::move(gh.input);

  std::array<std::array<Tensor4<T>, 4>, 2> d_feat;  // skip grads per stream
  for (int k = 2; k >= 0; --k) {
    const auto& d = ctx.dec[k];
    const Tensor4<T> d_out = relu_backward(d.pre2, d_cur);
    auto g2 = conv2d_backward(d.act1, net.dec[k].conv2, 1, 1, d_out);
    const Tensor4<T> d_act1 = relu_backward(d.pre1, g2.input);
    auto g1 = conv2d_backward(d.cat, net.dec[k].conv1, 1, 1, d_act1);
    sink("dec.d" + std::to_string(3 - k) + ".c2", std::move(g2.weights), std::move(g2.bias));
    sink("dec.d" + std::to_string(3 - k) + ".c1", std::move(g1.weights), std::move(g1.bias));

    auto [d_cat_a, d_skip_depth] = concat_channels_backward(d.split[0] + d.split[1], g1.input);
    auto [d_cropped, d_skip_rgb] = concat_channels_backward(d.split[0], d_cat_a);
    d_feat[0][2 - k] = std::move(d_skip_rgb);
    d_feat[1][2 - k] = std::move(d_skip_depth);
    d_cur = upsample_nearest2_backward(crop_spatial_backward(2 * d.in_h, 2 * d.in_w, d_cropped));
  }

  auto [d_deep_rgb, d_deep_depth] = concat_channels_backward(ctx.rgb.feat[3].channels(), d_cur);
  d_feat[0][3] = std::move(d_deep_rgb);
  d_feat[1][3] = std::move(d_deep_depth);

  if (encoder_grads || input_grads) {
    grads.d_rgb = detail::stream_backward(net, ctx.rgb, std::move(d_feat[0]), sink, input_grads);
    grads.d_depth =
        detail::stream_backward(net, ctx.depth, std::move(d_feat[1]), sink, input_grads);
  }
  return grads;
}

// ---- input preparation ------------------------------------------------------

// Bilinear resize (align-corners-off) of one plane from src_n^2 to dst_n^2.
template <typename T, typename Src>
void resize_bilinear_plane(const Src* src, int src_n, T* dst, int dst_n) {
  const double scale = static_cast<double>(src_n) / dst_n;
  for (int y = 0; y < dst_n; ++y) {
    const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, static_cast<double>(src_n - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, src_n - 1);
    const double wy = sy - y0;
    for (int x = 0; x < dst_n; ++x) {
      const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, static_cast<double>(src_n - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, src_n - 1);
      const double wx = sx - x0;
      const double v00 = static_cast<double>(src[static_cast<size_t>(y0) * src_n + x0]);
      const double v01 = static_cast<double>(src[static_cast<size_t>(y0) * src_n + x1]);
      const double v10 = static_cast<double>(src[static_cast<size_t>(y1) * src_n + x0]);
      const double v11 = static_cast<double>(src[static_cast<size_t>(y1) * src_n + x1]);
      dst[static_cast<size_t>(y) * dst_n + x] = static_cast<T>(
          (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
    }
  }
}

// Resize a P x P x 3 interleaved patch into batch slot b of a Bx3xRxR tensor.
template <typename T>
void fill_rgb_input(const std::vector<float>& rgb, int patch_size, Tensor4<T>& dst, int b) {
  const int r = dst.height();
  std::vector<float> plane(static_cast<size_t>(patch_size) * patch_size);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < plane.size(); ++i) plane[i] = rgb[i * 3 + c];
    resize_bilinear_plane(plane.data(), patch_size, dst.plane(b, c), r);
  }
}

// Normalize depth to [0,1] over the configured range, resize, and replicate
// across the three stream channels.
template <typename T>
void fill_depth_input(const std::vector<double>& depth, int patch_size, const NetworkConfig& cfg,
                      Tensor4<T>& dst, int b) {
  const int r = dst.height();
  const double span = cfg.depth_max - cfg.depth_min;
  std::vector<double> norm(depth.size());
  for (size_t i = 0; i < depth.size(); ++i)
    norm[i] = std::clamp((depth[i] - cfg.depth_min) / span, 0.0, 1.0);
  resize_bilinear_plane(norm.data(), patch_size, dst.plane(b, 0), r);
  const size_t plane = static_cast<size_t>(r) * r;
  std::copy(dst.plane(b, 0), dst.plane(b, 0) + plane, dst.plane(b, 1));
  std::copy(dst.plane(b, 0), dst.plane(b, 0) + plane, dst.plane(b, 2));
}

// ---- prediction -------------------------------------------------------------

// Batched patch prediction: returns Bx2xMxM probabilities.
template <typename T>
Tensor4<T> predict_patches(const Network<T>& net,
                           const std::vector<const std::vector<float>*>& rgbs,
                           const std::vector<const std::vector<double>*>& depths) {
  const int p = net.cfg.patch_size, r = net.cfg.input_size;
  if (rgbs.empty() || rgbs.size() != depths.size())
    throw PreconditionError("predict_patches: empty or mismatched batch");
  const int batch = static_cast<int>(rgbs.size());
  Tensor4<T> rgb_in(batch, 3, r, r), depth_in(batch, 3, r, r);
  for (int b = 0; b < batch; ++b) {
    if (rgbs[b]->size() != static_cast<size_t>(p) * p * 3)
      throw DimError("predict_patches: rgb patch length mismatch");
    if (depths[b]->size() != static_cast<size_t>(p) * p)
      throw DimError("predict_patches: depth patch length mismatch");
    fill_rgb_input(*rgbs[b], p, rgb_in, b);
    if (net.cfg.depth_as_rgb)
      fill_rgb_input(*rgbs[b], p, depth_in, b);
    else
      fill_depth_input(*depths[b], p, net.cfg, depth_in, b);
  }
  FwdCtx<T> ctx;
  return forward(net, rgb_in, depth_in, ctx);
}

// Affordance map for one patch: 1x2xMxM probabilities.
template <typename T>
Tensor4<T> predict_patch(const Network<T>& net, const std::vector<float>& rgb,
                         const std::vector<double>& depth) {
  return predict_patches(net, {&rgb}, {&depth});
}

// ---- loss -------------------------------------------------------------------

struct PixelLabel {
  int i = 0, j = 0;  // map pixel
  int label = 0;     // 1 = suction succeeded
};

template <typename T>
struct MaskedLoss {
  double loss = 0.0;
  Tensor4<T> d_logits;  // zero at every unselected pixel
};

// Mean cross entropy over the selected map pixels only (per-item lists line up
// with the batch axis). The gradient is w.r.t. the pre-softmax logits.
template <typename T>
MaskedLoss<T> masked_cross_entropy(const Tensor4<T>& probs,
                                   const std::vector<std::vector<PixelLabel>>& selected) {
  if (probs.channels() != 2) throw DimError("masked_cross_entropy: probability tensor not 2-channel");
  if (static_cast<int>(selected.size()) != probs.batch())
    throw DimError("masked_cross_entropy: batch axis mismatch");
  size_t n = 0;
  for (const auto& list : selected) n += list.size();
  if (n == 0) throw PreconditionError("masked_cross_entropy: no selected pixels");

  MaskedLoss<T> out;
  out.d_logits = zeros_like(probs);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int b = 0; b < probs.batch(); ++b) {
    for (const auto& s : selected[b]) {
      if (s.i < 0 || s.j < 0 || s.i >= probs.height() || s.j >= probs.width())
        throw BoundsError("masked_cross_entropy: map pixel (" + std::to_string(s.i) + "," +
                          std::to_string(s.j) + ") out of range");
      if (s.label != 0 && s.label != 1)
        throw PreconditionError("masked_cross_entropy: label must be 0 or 1");
      const double p_raw = static_cast<double>(probs.at(b, 0, s.i, s.j));
      const double p = std::clamp(p_raw, 1e-7, 1.0 - 1e-7);
      out.loss += inv_n * (s.label ? -std::log(p) : -std::log(1.0 - p));
      const T g = static_cast<T>((p_raw - s.label) * inv_n);
      out.d_logits.at(b, 0, s.i, s.j) += g;
      out.d_logits.at(b, 1, s.i, s.j) -= g;
    }
  }
  return out;
}

// Single-map convenience overload.
template <typename T>
MaskedLoss<T> masked_cross_entropy(const Tensor4<T>& probs, const std::vector<PixelLabel>& sel) {
  if (probs.batch() != 1) throw DimError("masked_cross_entropy: expected a single map");
  return masked_cross_entropy(probs, std::vector<std::vector<PixelLabel>>{sel});
}

// ---- labeled samples & augmentation ------------------------------------------

struct LabeledSample {
  std::vector<float> rgb;     // P*P*3 interleaved
  std::vector<double> depth;  // P*P meters
  int map_i = 0, map_j = 0;
  int label = 0;
};

enum class Augment { kIdentity, kRot90, kRot180, kRot270, kMirrorH, kFlipV };

constexpr std::array<Augment, 6> kAugmentSet = {Augment::kIdentity, Augment::kRot90,
                                                Augment::kRot180,   Augment::kRot270,
                                                Augment::kMirrorH,  Augment::kFlipV};

// Destination cell of (i, j) on an n x n grid under the isometry. The same
// mapping serves image pixels and map pixels, which keeps labels attached to
// their image content.
inline std::pair<int, int> augment_coord(Augment a, int i, int j, int n) {
  switch (a) {
    case Augment::kIdentity: return {i, j};
    case Augment::kRot90: return {j, n - 1 - i};
    case Augment::kRot180: return {n - 1 - i, n - 1 - j};
    case Augment::kRot270: return {n - 1 - j, i};
    case Augment::kMirrorH: return {i, n - 1 - j};
    case Augment::kFlipV: return {n - 1 - i, j};
  }
  return {i, j};
}

inline LabeledSample augment_apply(const LabeledSample& s, Augment a, int patch_size) {
  LabeledSample out;
  out.rgb.resize(s.rgb.size());
  out.depth.resize(s.depth.size());
  out.label = s.label;
  const int n = patch_size;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const auto [di, dj] = augment_coord(a, i, j, n);
      const size_t src = static_cast<size_t>(i) * n + j;
      const size_t dst = static_cast<size_t>(di) * n + dj;
      out.depth[dst] = s.depth[src];
      for (int c = 0; c < 3; ++c) out.rgb[dst * 3 + c] = s.rgb[src * 3 + c];
    }
  const int m = n / 3;
  std::tie(out.map_i, out.map_j) = augment_coord(a, s.map_i, s.map_j, m);
  return out;
}

inline std::vector<LabeledSample> augment_sample(const LabeledSample& s, int patch_size) {
  std::vector<LabeledSample> out;
  out.reserve(kAugmentSet.size());
  for (Augment a : kAugmentSet) out.push_back(augment_apply(s, a, patch_size));
  return out;
}

// Patch with labels at several map pixels (dense supervision, e.g. oracle
// pretraining). LabeledSample is the single-pixel online case.
struct DenseSample {
  std::vector<float> rgb;
  std::vector<double> depth;
  std::vector<PixelLabel> labels;
};

// ---- training ---------------------------------------------------------------

// One forward/backward/update over the batch. Throws (with parameters
// untouched) if anything goes non-finite; increments the step counter once.
template <typename T>
double train_step(Network<T>& net, const std::vector<DenseSample>& batch,
                  const OptimizerConfig<T>& opt) {
  if (batch.empty()) throw PreconditionError("train_step: empty batch");
  const int p = net.cfg.patch_size, r = net.cfg.input_size;
  const int n = static_cast<int>(batch.size());
  Tensor4<T> rgb_in(n, 3, r, r), depth_in(n, 3, r, r);
  std::vector<std::vector<PixelLabel>> selected(n);
  for (int b = 0; b < n; ++b) {
    const auto& s = batch[b];
    if (s.rgb.size() != static_cast<size_t>(p) * p * 3 ||
        s.depth.size() != static_cast<size_t>(p) * p)
      throw DimError("train_step: sample patch extents do not match the network config");
    if (s.labels.empty()) throw PreconditionError("train_step: sample with no labels");
    fill_rgb_input(s.rgb, p, rgb_in, b);
    if (net.cfg.depth_as_rgb)
      fill_rgb_input(s.rgb, p, depth_in, b);
    else
      fill_depth_input(s.depth, p, net.cfg, depth_in, b);
    selected[b] = s.labels;
  }

  FwdCtx<T> ctx;
  const Tensor4<T> probs = forward(net, rgb_in, depth_in, ctx);
  const MaskedLoss<T> ml = masked_cross_entropy(probs, selected);
  if (!std::isfinite(ml.loss)) throw NumericError("train_step: non-finite loss");

  NetGrads<T> grads = backward(net, ctx, ml.d_logits, !net.cfg.freeze_encoder);

  // validate every gradient before mutating any parameter
  bool finite = true;
  for_each_layer(net, [&](const std::string& name, LayerParams<T>&, bool is_enc) {
    if (is_enc && net.cfg.freeze_encoder) return;
    const LayerGrads<T>* g = grads.slot(name);
    if (!g->used || !g->weights.all_finite()) finite = false;
    for (T v : g->bias)
      if (!std::isfinite(static_cast<double>(v))) finite = false;
  });
  if (!finite) throw NumericError("train_step: non-finite gradient");

  for_each_layer(net, [&](const std::string& name, LayerParams<T>& params, bool is_enc) {
    if (is_enc && net.cfg.freeze_encoder) return;
    LayerGrads<T>* g = grads.slot(name);
    sgd_momentum_step(params, g->weights, g->bias, opt);
  });
  ++net.step;
  return ml.loss;
}

template <typename T>
double train_step(Network<T>& net, const std::vector<LabeledSample>& batch,
                  const OptimizerConfig<T>& opt) {
  std::vector<DenseSample> dense(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    dense[b].rgb = batch[b].rgb;
    dense[b].depth = batch[b].depth;
    dense[b].labels = {{batch[b].map_i, batch[b].map_j, batch[b].label}};
  }
  return train_step(net, dense, opt);
}

}  // namespace safl
