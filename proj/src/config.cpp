#include "safl/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

namespace safl {
namespace {

using Ref = std::variant<int RunConfig::*, double RunConfig::*, bool RunConfig::*,
                         uint64_t RunConfig::*, std::string RunConfig::*>;

struct Field {
  const char* key;
  Ref ref;
};

// Declaration order; dump_config follows it.
const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"patch_size", &RunConfig::patch_size},
      // widths handled separately (comma list)
      {"freeze_encoder", &RunConfig::freeze_encoder},
      {"depth_as_rgb", &RunConfig::depth_as_rgb},
      {"depth_min", &RunConfig::depth_min},
      {"depth_max", &RunConfig::depth_max},
      {"learning_rate", &RunConfig::learning_rate},
      {"momentum", &RunConfig::momentum},
      {"weight_decay", &RunConfig::weight_decay},
      {"n_ep", &RunConfig::n_ep},
      {"max_step", &RunConfig::max_step},
      {"augment", &RunConfig::augment},
      {"checkpoint_every", &RunConfig::checkpoint_every},
      {"seed", &RunConfig::seed},
      {"policy", &RunConfig::policy},
      {"n_objects", &RunConfig::n_objects},
      {"frame_w", &RunConfig::frame_w},
      {"frame_h", &RunConfig::frame_h},
      {"camera_height", &RunConfig::camera_height},
      {"camera_fill", &RunConfig::camera_fill},
      {"cyl_radius", &RunConfig::cyl_radius},
      {"cyl_height", &RunConfig::cyl_height},
      {"bin_x", &RunConfig::bin_x},
      {"bin_y", &RunConfig::bin_y},
      {"wall_height", &RunConfig::wall_height},
      {"wall_thickness", &RunConfig::wall_thickness},
      {"delta_z", &RunConfig::delta_z},
      {"theta_max_deg", &RunConfig::theta_max_deg},
      {"cup_radius", &RunConfig::cup_radius},
      {"seal_spread", &RunConfig::seal_spread},
      {"depth_noise_sd", &RunConfig::depth_noise_sd},
      {"eval_scenario", &RunConfig::eval_scenario},
      {"eval_objects", &RunConfig::eval_objects},
      {"repeats", &RunConfig::repeats},
      {"pretrain_scenes", &RunConfig::pretrain_scenes},
      {"pretrain_holdout", &RunConfig::pretrain_holdout},
      {"pretrain_epochs", &RunConfig::pretrain_epochs},
      {"pretrain_stride", &RunConfig::pretrain_stride},
      {"pretrain_batch", &RunConfig::pretrain_batch},
      {"out_dir", &RunConfig::out_dir},
      {"init_checkpoint", &RunConfig::init_checkpoint},
  };
  return f;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& v, const std::string& where) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(where + ": expected an integer, got '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& v, const std::string& where) {
  uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(where + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, const std::string& where) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw ConfigError(where + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(where + ": expected true/false, got '" + v + "'");
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value,
            const std::string& where) {
  if (key == "widths") {
    std::array<int, 4> w{};
    std::stringstream ss(value);
    std::string part;
    size_t n = 0;
    while (std::getline(ss, part, ',')) {
      if (n >= 4) throw ConfigError(where + ": widths takes exactly 4 values");
      w[n++] = parse_int(trim(part), where);
    }
    if (n != 4) throw ConfigError(where + ": widths takes exactly 4 values");
    cfg.widths = w;
    return;
  }
  for (const Field& f : fields()) {
    if (key != f.key) continue;
    std::visit(
        [&](auto member) {
          using M = std::remove_cvref_t<decltype(cfg.*member)>;
          if constexpr (std::is_same_v<M, int>)
            cfg.*member = parse_int(value, where);
          else if constexpr (std::is_same_v<M, double>)
            cfg.*member = parse_double(value, where);
          else if constexpr (std::is_same_v<M, bool>)
            cfg.*member = parse_bool(value, where);
          else if constexpr (std::is_same_v<M, uint64_t>)
            cfg.*member = parse_u64(value, where);
          else
            cfg.*member = value;
        },
        f.ref);
    return;
  }
  throw ConfigError(where + ": unknown key '" + key + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string raw;
  size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    assign(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  assign(cfg, key, value, "override --" + key);
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  const RunConfig* c = &cfg;
  const auto emit = [&](const char* key, const Ref& ref) {
    os << key << " = ";
    std::visit(
        [&](auto member) {
          using M = std::remove_cvref_t<decltype(c->*member)>;
          if constexpr (std::is_same_v<M, double>)
            os << format_double(c->*member);
          else if constexpr (std::is_same_v<M, bool>)
            os << (c->*member ? "true" : "false");
          else
            os << c->*member;
        },
        ref);
    os << "\n";
  };
  for (const Field& f : fields()) {
    emit(f.key, f.ref);
    if (std::string_view(f.key) == "patch_size")
      os << "widths = " << cfg.widths[0] << "," << cfg.widths[1] << "," << cfg.widths[2] << ","
         << cfg.widths[3] << "\n";
  }
  return os.str();
}

void RunConfig::validate() const {
  network().validate();
  sim().validate();
  eval_scene();
  if (n_ep < 1) throw ConfigError("RunConfig: n_ep must be positive");
  if (max_step < 1) throw ConfigError("RunConfig: max_step must be positive");
  if (checkpoint_every < 1) throw ConfigError("RunConfig: checkpoint_every must be positive");
  if (n_objects < 1 || eval_objects < 1) throw ConfigError("RunConfig: object counts must be positive");
  if (frame_w < patch_size || frame_h < patch_size)
    throw ConfigError("RunConfig: frame must be at least one patch in each extent");
  if (!(camera_height > 0)) throw ConfigError("RunConfig: camera_height must be positive");
  if (!(camera_fill > 0) || camera_fill > 1) throw ConfigError("RunConfig: camera_fill in (0,1]");
  if (repeats < 1) throw ConfigError("RunConfig: repeats must be positive");
  if (pretrain_scenes < 1 || pretrain_epochs < 0 || pretrain_stride < 1 || pretrain_batch < 1)
    throw ConfigError("RunConfig: bad pretraining parameters");
  if (pretrain_holdout < 0 || pretrain_holdout >= pretrain_scenes)
    throw ConfigError("RunConfig: pretrain_holdout must leave at least one training scene");
  if (policy != "learned" && policy != "random")
    throw ConfigError("RunConfig: policy must be 'learned' or 'random', got '" + policy + "'");
}

NetworkConfig RunConfig::network() const {
  NetworkConfig n = make_network_config(patch_size, widths);
  n.freeze_encoder = freeze_encoder;
  n.depth_as_rgb = depth_as_rgb;
  n.depth_min = depth_min;
  n.depth_max = depth_max;
  n.validate();
  return n;
}

SimParams RunConfig::sim() const {
  SimParams p;
  p.cyl_radius = cyl_radius;
  p.cyl_height = cyl_height;
  p.bin.inner_x = bin_x;
  p.bin.inner_y = bin_y;
  p.bin.wall_height = wall_height;
  p.bin.wall_thickness = wall_thickness;
  p.delta_z = delta_z;
  p.theta_max_deg = theta_max_deg;
  p.cup_radius = cup_radius;
  p.seal_spread = seal_spread;
  p.depth_noise_sd = depth_noise_sd;
  p.validate();
  return p;
}

CameraModel RunConfig::camera() const {
  return make_topdown_camera(sim().bin, camera_height, frame_w, frame_h, camera_fill);
}

}  // namespace safl
