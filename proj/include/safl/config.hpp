#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "safl/network.hpp"
#include "safl/optim.hpp"
#include "safl/sim.hpp"

namespace safl {

// Every tunable in one flat struct. parse_config/dump_config round-trip it
// through "key = value" text; unknown keys are rejected.
struct RunConfig {
  // network
  int patch_size = 168;
  std::array<int, 4> widths{16, 32, 64, 128};
  bool freeze_encoder = false;
  bool depth_as_rgb = false;
  double depth_min = 0.5;
  double depth_max = 1.1;

  // optimizer
  double learning_rate = 5e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  // exploration schedule + online loop
  int n_ep = 1000;
  int max_step = 2000;
  bool augment = true;
  int checkpoint_every = 500;
  uint64_t seed = 0;
  std::string policy = "learned";  // or "random": pick without predicting or training

  // scene + camera
  int n_objects = 20;
  int frame_w = 640;
  int frame_h = 480;
  double camera_height = 1.0;
  double camera_fill = 0.9;

  // simulator
  double cyl_radius = 0.02;
  double cyl_height = 0.06;
  double bin_x = 0.4;
  double bin_y = 0.4;
  double wall_height = 0.15;
  double wall_thickness = 0.01;
  double delta_z = 0.005;
  double theta_max_deg = 30.0;
  double cup_radius = 0.008;
  double seal_spread = 0.002;
  double depth_noise_sd = 0.0;

  // evaluation
  std::string eval_scenario = "test-1";
  int eval_objects = 20;
  int repeats = 10;

  // pretraining
  int pretrain_scenes = 30;
  int pretrain_holdout = 5;
  int pretrain_epochs = 3;
  int pretrain_stride = 4;
  int pretrain_batch = 4;

  // io
  std::string out_dir = "runs";
  std::string init_checkpoint;

  void validate() const;

  NetworkConfig network() const;
  SimParams sim() const;
  CameraModel camera() const;
  Scenario eval_scene() const { return parse_scenario(eval_scenario); }

  template <typename T>
  OptimizerConfig<T> optimizer() const {
    OptimizerConfig<T> o;
    o.learning_rate = static_cast<T>(learning_rate);
    o.momentum = static_cast<T>(momentum);
    o.weight_decay = static_cast<T>(weight_decay);
    return o;
  }
};

// "key = value" per line, '#' starts a comment, blank lines ignored.
// ConfigError messages carry the 1-based line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Single-key assignment with the same value syntax; used for --key overrides.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Stable order, full precision: parse(dump(c)) == c and dump is idempotent.
std::string dump_config(const RunConfig& cfg);

}  // namespace safl
