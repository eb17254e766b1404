#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "safl/camera.hpp"
#include "safl/errors.hpp"
#include "safl/rng.hpp"

namespace safl {

// Stacking layouts: four training mixes plus the three held-out test scenes.
enum class Scenario { kTrainA, kTrainB, kTrainC, kTrainD, kTest1, kTest2, kTest3 };

const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& name);  // ConfigError on unknown

struct Cylinder {
  int id = -1;
  double radius = 0.0;
  double height = 0.0;             // axial length
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();  // local z = axis
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  bool alive = true;

  Eigen::Vector3d axis() const { return pose.linear().col(2); }
  Eigen::Vector3d center() const { return pose.translation(); }
  bool upright() const { return axis().z() > 0.99; }
};

struct BinGeometry {
  double inner_x = 0.4;  // meters
  double inner_y = 0.4;
  double wall_height = 0.15;
  double wall_thickness = 0.01;

  void validate() const {
    if (!(inner_x > 0) || !(inner_y > 0) || !(wall_height > 0) || !(wall_thickness > 0))
      throw ConfigError("BinGeometry: extents, wall height and thickness must be positive");
  }
};

// Geometry defaults and the suction-oracle thresholds, all config-exposed.
struct SimParams {
  double cyl_radius = 0.02;
  double cyl_height = 0.06;
  BinGeometry bin;
  double delta_z = 0.005;       // max |surface z - requested z|
  double theta_max_deg = 30.0;  // max normal tilt from vertical
  double cup_radius = 0.008;    // seal ring radius
  double seal_spread = 0.002;   // max depth spread across the seal ring
  double depth_noise_sd = 0.0;  // additive depth noise hook, meters

  void validate() const {
    bin.validate();
    if (!(cyl_radius > 0) || !(cyl_height > 0))
      throw ConfigError("SimParams: cylinder dimensions must be positive");
    if (!(delta_z > 0) || !(cup_radius > 0) || !(seal_spread > 0))
      throw ConfigError("SimParams: suction thresholds must be positive");
    if (!(theta_max_deg > 0) || theta_max_deg >= 90)
      throw ConfigError("SimParams: normal tolerance must be in (0, 90) degrees");
    if (depth_noise_sd < 0) throw ConfigError("SimParams: depth noise must be non-negative");
  }
};

struct SceneState {
  std::vector<Cylinder> cylinders;
  BinGeometry bin;
  SimParams params;
  Scenario scenario = Scenario::kTrainA;
  Rng rng{0};  // consumed by generation; carried so snapshots resume identically
};

enum class SuctionFailure { kNone, kNoSurface, kHitBin, kBadNormal, kSealBroken, kInvalidPoint };

const char* failure_name(SuctionFailure f);

struct SuctionResult {
  bool success = false;
  SuctionFailure reason = SuctionFailure::kNone;
  std::optional<int> removed_id;
};

// Sequential-drop scene generation; same (scenario, n, seed, params) is
// bitwise reproducible. Throws CapacityError when the bin provably cannot
// hold n_objects.
SceneState generate_scene(Scenario scenario, int n_objects, uint64_t seed,
                          const SimParams& params = {});

// Pinhole ray-cast of the scene. Depth is meters along the optical axis with
// 0 for rays that escape; RGB is the surface color under a fixed overhead
// light. Pure function of its arguments; noise_seed only matters when
// params.depth_noise_sd > 0.
Frame render(const SceneState& scene, const CameraModel& cam, int width, int height,
             uint64_t noise_seed = 0);

// Vertical suction at a world point: removes the hit cylinder on success.
SuctionResult attempt_suction(SceneState& scene, const Eigen::Vector3d& world_point);

// Same oracle without the removal side effect.
SuctionResult probe_suction(const SceneState& scene, const Eigen::Vector3d& world_point);

int count_alive(const SceneState& scene);
bool is_empty(const SceneState& scene);

// Top-down camera over the bin center at `height` meters, focal length set
// so the bin's y extent fills `fill` of the image height.
CameraModel make_topdown_camera(const BinGeometry& bin, double height, int width, int height_px,
                                double fill = 0.9);

// Human-readable snapshot: header, one cylinder per line, trailing RNG state.
std::string dump_scene(const SceneState& scene);
SceneState restore_scene(const std::string& text);  // FormatError carries the line number

const std::array<Eigen::Vector3d, 4>& color_palette();

}  // namespace safl
