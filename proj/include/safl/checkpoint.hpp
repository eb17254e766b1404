#pragma once

// Checkpoint file (binary, little-endian):
//   magic "SAFL" | version u32 | config block | tensor count u32 | tensors | crc32 u32
// config block: P u32, R u32, M u32, widths 4*u32, flags u32
//   (flags bit0 = freeze_encoder, bit1 = depth_as_rgb)
// tensor: name length u16, UTF-8 name, rank u8, dims rank*u32, f32 data
// The trailing CRC32 covers all preceding bytes.
//
// Per layer we store <name>.w/.b plus momentum buffers <name>.mw/.mb, and a
// one-element "step" tensor so a resumed run keeps its exploration schedule.
// depth_min/depth_max are run configuration, not state: the two-argument
// load adopts the caller's cfg (after checking the stored fields against it),
// the one-argument load falls back to default depth range.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "safl/errors.hpp"
#include "safl/network.hpp"

namespace safl {

inline constexpr uint32_t kCheckpointVersion = 1;

namespace ckptio {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Bounds-checked little-endian reader; every failure carries the offset.
struct Cursor {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw FormatError(std::string("checkpoint truncated reading ") + what, pos);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint8_t>(buf[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

struct StoredTensor {
  std::vector<uint32_t> dims;
  std::vector<float> data;
  size_t offset = 0;  // where its header started, for diagnostics
};

template <typename T>
void put_tensor(std::string& out, const std::string& name, const std::vector<uint32_t>& dims,
                const T* data, size_t count) {
  put_u16(out, static_cast<uint16_t>(name.size()));
  out.append(name);
  out.push_back(static_cast<char>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
  for (size_t i = 0; i < count; ++i) put_f32(out, static_cast<float>(data[i]));
}

inline uint32_t config_flags(const NetworkConfig& cfg) {
  return (cfg.freeze_encoder ? 1u : 0u) | (cfg.depth_as_rgb ? 2u : 0u);
}

}  // namespace ckptio

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
  using namespace ckptio;
  const NetworkConfig& cfg = net.cfg;
  std::string out;
  out.append("SAFL");
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(cfg.patch_size));
  put_u32(out, static_cast<uint32_t>(cfg.input_size));
  put_u32(out, static_cast<uint32_t>(cfg.map_size));
  for (int w : cfg.widths) put_u32(out, static_cast<uint32_t>(w));
  put_u32(out, config_flags(cfg));

  uint32_t count = 1;  // "step"
  for_each_layer(const_cast<Network<T>&>(net),
                 [&](const std::string&, LayerParams<T>&, bool) { count += 4; });
  put_u32(out, count);

  for_each_layer(const_cast<Network<T>&>(net), [&](const std::string& name, LayerParams<T>& p, bool) {
    const auto& wd = p.weights.dims;
    const std::vector<uint32_t> wdims = {static_cast<uint32_t>(wd[0]), static_cast<uint32_t>(wd[1]),
                                         static_cast<uint32_t>(wd[2]), static_cast<uint32_t>(wd[3])};
    const std::vector<uint32_t> bdims = {static_cast<uint32_t>(p.bias.size())};
    put_tensor(out, name + ".w", wdims, p.weights.data.data(), p.weights.data.size());
    put_tensor(out, name + ".b", bdims, p.bias.data(), p.bias.size());
    put_tensor(out, name + ".mw", wdims, p.w_momentum.data.data(), p.w_momentum.data.size());
    put_tensor(out, name + ".mb", bdims, p.b_momentum.data(), p.b_momentum.size());
  });
  const float step = static_cast<float>(net.step);
  put_tensor(out, "step", {1}, &step, 1);

  put_u32(out, static_cast<uint32_t>(
                   crc32(0, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()))));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

namespace ckptio {

// Parses and CRC-checks the whole file; returns the stored config and tensors.
struct ParsedCheckpoint {
  NetworkConfig cfg;  // depth range left at defaults; caller may override
  std::map<std::string, StoredTensor> tensors;
  uint64_t step = 0;
};

inline ParsedCheckpoint parse_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 8) throw FormatError("checkpoint shorter than header", buf.size());
  if (buf.compare(0, 4, "SAFL") != 0) throw FormatError("bad magic", 0);

  Cursor c{buf, 4};
  const uint32_t version = c.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported version " + std::to_string(version), 4);

  // CRC over everything before the trailing u32
  if (buf.size() < 4) throw FormatError("checkpoint missing crc", buf.size());
  const size_t crc_at = buf.size() - 4;
  Cursor tail{buf, crc_at};
  const uint32_t stored_crc = tail.u32("crc");
  const uint32_t actual_crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(crc_at)));
  if (stored_crc != actual_crc) throw FormatError("crc mismatch", crc_at);

  ParsedCheckpoint out;
  const uint32_t p = c.u32("patch size");
  const uint32_t r = c.u32("input size");
  const uint32_t m = c.u32("map size");
  std::array<int, 4> widths;
  for (int i = 0; i < 4; ++i) widths[i] = static_cast<int>(c.u32("stage width"));
  const uint32_t flags = c.u32("flags");

  out.cfg = make_network_config(static_cast<int>(p), widths);
  if (out.cfg.input_size != static_cast<int>(r) || out.cfg.map_size != static_cast<int>(m))
    throw FormatError("inconsistent sizes in config block", 12);
  out.cfg.freeze_encoder = (flags & 1u) != 0;
  out.cfg.depth_as_rgb = (flags & 2u) != 0;

  const uint32_t count = c.u32("tensor count");
  for (uint32_t t = 0; t < count; ++t) {
    const size_t at = c.pos;
    const uint16_t name_len = c.u16("tensor name length");
    const std::string name = c.bytes(name_len, "tensor name");
    const uint8_t rank = c.u8("tensor rank");
    if (rank < 1 || rank > 4) throw FormatError("bad rank for tensor " + name, at);
    StoredTensor st;
    st.offset = at;
    uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
      st.dims.push_back(c.u32("tensor dims"));
      n *= st.dims.back();
    }
    if (n > (buf.size() / 4) + 1) throw FormatError("tensor larger than file: " + name, at);
    st.data.resize(static_cast<size_t>(n));
    for (auto& v : st.data) v = c.f32("tensor data");
    if (!out.tensors.emplace(name, std::move(st)).second)
      throw FormatError("duplicate tensor " + name, at);
  }
  if (c.pos != crc_at) throw FormatError("trailing bytes after tensors", c.pos);

  const auto it = out.tensors.find("step");
  if (it == out.tensors.end()) throw FormatError("missing step tensor", crc_at);
  if (it->second.data.size() != 1) throw FormatError("step tensor must hold one value", it->second.offset);
  out.step = static_cast<uint64_t>(it->second.data[0]);
  return out;
}

}  // namespace ckptio

// Load with the file's own config (depth range at defaults).
template <typename T>
Network<T> load_checkpoint(const std::string& path) {
  using namespace ckptio;
  ParsedCheckpoint pc = parse_checkpoint(path);

  Network<T> net = build_network<T>(pc.cfg, /*seed=*/0);
  net.step = pc.step;
  for_each_layer(net, [&](const std::string& name, LayerParams<T>& p, bool) {
    auto fetch = [&](const std::string& suffix, size_t want, const std::vector<uint32_t>& want_dims)
        -> const StoredTensor& {
      const auto it = pc.tensors.find(name + suffix);
      if (it == pc.tensors.end()) throw FormatError("missing tensor " + name + suffix, 0);
      const StoredTensor& st = it->second;
      if (st.dims != want_dims || st.data.size() != want)
        throw FormatError("shape mismatch for tensor " + name + suffix, st.offset);
      return st;
    };
    const auto& wd = p.weights.dims;
    const std::vector<uint32_t> wdims = {static_cast<uint32_t>(wd[0]), static_cast<uint32_t>(wd[1]),
                                         static_cast<uint32_t>(wd[2]), static_cast<uint32_t>(wd[3])};
    const std::vector<uint32_t> bdims = {static_cast<uint32_t>(p.bias.size())};

    const StoredTensor& w = fetch(".w", p.weights.data.size(), wdims);
    const StoredTensor& b = fetch(".b", p.bias.size(), bdims);
    const StoredTensor& mw = fetch(".mw", p.w_momentum.data.size(), wdims);
    const StoredTensor& mb = fetch(".mb", p.b_momentum.size(), bdims);
    for (size_t i = 0; i < w.data.size(); ++i) p.weights.data[i] = static_cast<T>(w.data[i]);
    for (size_t i = 0; i < b.data.size(); ++i) p.bias[i] = static_cast<T>(b.data[i]);
    for (size_t i = 0; i < mw.data.size(); ++i) p.w_momentum.data[i] = static_cast<T>(mw.data[i]);
    for (size_t i = 0; i < mb.data.size(); ++i) p.b_momentum[i] = static_cast<T>(mb.data[i]);
  });
  return net;
}

// Load and insist the stored config matches `expect`; the returned network
// uses `expect` verbatim (so depth range and other run settings carry over).
template <typename T>
Network<T> load_checkpoint(const std::string& path, const NetworkConfig& expect) {
  using namespace ckptio;
  {
    ParsedCheckpoint pc = parse_checkpoint(path);
    const NetworkConfig& got = pc.cfg;
    if (got.patch_size != expect.patch_size || got.input_size != expect.input_size ||
        got.map_size != expect.map_size || got.widths != expect.widths ||
        config_flags(got) != config_flags(expect))
      throw ConfigError("checkpoint config does not match requested config: " + path);
  }
  Network<T> net = load_checkpoint<T>(path);
  net.cfg = expect;
  return net;
}

}  // namespace safl
