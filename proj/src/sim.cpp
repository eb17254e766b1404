#include "safl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace safl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

// hit ids for non-cylinder geometry
constexpr int kMiss = -3;
constexpr int kFloor = -1;
constexpr int kWall = -2;

struct ScenarioSpec {
  double upright_prob;  // vs lying with random yaw
  double spread;        // fraction of the bin interior used for drops
  bool all_blue;
};

ScenarioSpec scenario_spec(Scenario s) {
  switch (s) {
    case Scenario::kTrainA: return {0.85, 1.00, false};  // scattered, mostly standing
    case Scenario::kTrainB: return {0.15, 1.00, false};  // mostly lying
    case Scenario::kTrainC: return {0.50, 1.00, false};  // even mix
    case Scenario::kTrainD: return {0.50, 0.45, false};  // central dense pile
    case Scenario::kTest1:  return {0.50, 0.85, false};
    case Scenario::kTest2:  return {0.50, 0.90, false};
    case Scenario::kTest3:  return {0.50, 0.90, true};
  }
  throw ConfigError("unknown scenario");
}

struct Hit {
  double t = kInf;
  int id = kMiss;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

const Eigen::Vector3d kFloorColor(0.42, 0.42, 0.42);
const Eigen::Vector3d kWallColor(0.58, 0.52, 0.45);

// Body + caps; direction need not be normalized (t keeps its parameterization,
// which render() exploits so t is depth along the optical axis directly).
bool intersect_cylinder(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                        const Cylinder& cyl, double t_min, double& t_out,
                        Eigen::Vector3d& n_out) {
  const Eigen::Vector3d a = cyl.axis();
  const Eigen::Vector3d oc = origin - cyl.center();
  const double hh = cyl.height / 2.0;
  double best = kInf;
  Eigen::Vector3d best_n = Eigen::Vector3d::UnitZ();

  // flank: |(oc + t d) - ((oc + t d)·a) a|² = r²
  const Eigen::Vector3d m = oc - oc.dot(a) * a;
  const Eigen::Vector3d n = dir - dir.dot(a) * a;
  const double A = n.squaredNorm();
  const double B = 2.0 * m.dot(n);
  const double C = m.squaredNorm() - cyl.radius * cyl.radius;
  if (A > 0) {
    const double disc = B * B - 4 * A * C;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (const double t : {(-B - sq) / (2 * A), (-B + sq) / (2 * A)}) {
        if (t <= t_min || t >= best) continue;
        const Eigen::Vector3d p = oc + t * dir;
        if (std::abs(p.dot(a)) <= hh) {
          best = t;
          best_n = (p - p.dot(a) * a) / cyl.radius;
        }
      }
    }
  }
  // caps
  const double da = dir.dot(a);
  if (std::abs(da) > 1e-300) {
    for (const double sign : {1.0, -1.0}) {
      const double t = (sign * hh - oc.dot(a)) / da;
      if (t <= t_min || t >= best) continue;
      const Eigen::Vector3d p = oc + t * dir;
      if ((p - p.dot(a) * a).squaredNorm() <= cyl.radius * cyl.radius) {
        best = t;
        best_n = sign * a;
      }
    }
  }
  if (best == kInf) return false;
  t_out = best;
  n_out = best_n;
  return true;
}

// Axis-aligned box via the slab method, entry face normal included.
bool intersect_aabb(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                    const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double t_min,
                    double& t_out, Eigen::Vector3d& n_out) {
  double t_enter = -kInf, t_exit = kInf;
  int enter_axis = -1;
  double enter_sign = 0;
  for (int i = 0; i < 3; ++i) {
    if (dir[i] == 0.0) {
      if (origin[i] < lo[i] || origin[i] > hi[i]) return false;
      continue;
    }
    double t0 = (lo[i] - origin[i]) / dir[i];
    double t1 = (hi[i] - origin[i]) / dir[i];
    double sign = -1;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1;
    }
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = i;
      enter_sign = sign;
    }
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return false;
  }
  if (t_enter <= t_min || enter_axis < 0) return false;
  t_out = t_enter;
  n_out = Eigen::Vector3d::Zero();
  n_out[enter_axis] = enter_sign;
  return true;
}

std::array<std::pair<Eigen::Vector3d, Eigen::Vector3d>, 4> wall_boxes(const BinGeometry& bin) {
  const double hx = bin.inner_x / 2, hy = bin.inner_y / 2;
  const double w = bin.wall_thickness, hz = bin.wall_height;
  return {{
      {{-hx - w, -hy - w, 0}, {-hx, hy + w, hz}},   // left
      {{hx, -hy - w, 0}, {hx + w, hy + w, hz}},     // right
      {{-hx, -hy - w, 0}, {hx, -hy, hz}},           // near
      {{-hx, hy, 0}, {hx, hy + w, hz}},             // far
  }};
}

// Nearest surface along the ray: alive cylinders, bin walls, floor plane z=0.
Hit trace(const SceneState& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
          double t_min = 1e-9) {
  Hit hit;
  for (const Cylinder& c : scene.cylinders) {
    if (!c.alive) continue;
    double t;
    Eigen::Vector3d n;
    if (intersect_cylinder(origin, dir, c, t_min, t, n) && t < hit.t) {
      hit = {t, c.id, n, c.color};
    }
  }
  for (const auto& [lo, hi] : wall_boxes(scene.bin)) {
    double t;
    Eigen::Vector3d n;
    if (intersect_aabb(origin, dir, lo, hi, t_min, t, n) && t < hit.t) {
      hit = {t, kWall, n, kWallColor};
    }
  }
  if (dir.z() != 0.0) {
    const double t = -origin.z() / dir.z();
    if (t > t_min && t < hit.t) hit = {t, kFloor, Eigen::Vector3d::UnitZ(), kFloorColor};
  }
  return hit;
}

double shade(const Eigen::Vector3d& normal) { return 0.25 + 0.75 * std::max(0.0, normal.z()); }

// ---- placement ------------------------------------------------------------

// Footprint of a resting cylinder in the xy plane: a disc when upright, an
// oriented rectangle (axis u, half extents hl x r) when lying.
struct Footprint {
  bool disc;
  Eigen::Vector2d center;
  double r;            // disc radius, or rect half width
  Eigen::Vector2d u;   // rect axis direction
  double hl;           // rect half length
};

Footprint upright_footprint(const Eigen::Vector2d& c, double radius) {
  return {true, c, radius, {1, 0}, 0};
}

Footprint lying_footprint(const Eigen::Vector2d& c, double yaw, double radius, double height) {
  return {false, c, radius, {std::cos(yaw), std::sin(yaw)}, height / 2};
}

bool footprint_in_bin(const Footprint& f, const BinGeometry& bin) {
  const double hx = bin.inner_x / 2, hy = bin.inner_y / 2;
  if (f.disc)
    return f.center.x() - f.r >= -hx && f.center.x() + f.r <= hx && f.center.y() - f.r >= -hy &&
           f.center.y() + f.r <= hy;
  const Eigen::Vector2d n(-f.u.y(), f.u.x());
  for (const double su : {-1.0, 1.0})
    for (const double sn : {-1.0, 1.0}) {
      const Eigen::Vector2d p = f.center + su * f.hl * f.u + sn * f.r * n;
      if (p.x() < -hx || p.x() > hx || p.y() < -hy || p.y() > hy) return false;
    }
  return true;
}

double point_to_rect_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& c,
                              const Eigen::Vector2d& u, double hl, double hw) {
  const Eigen::Vector2d d = p - c;
  const Eigen::Vector2d n(-u.y(), u.x());
  const double du = std::max(0.0, std::abs(d.dot(u)) - hl);
  const double dn = std::max(0.0, std::abs(d.dot(n)) - hw);
  return std::hypot(du, dn);
}

// Oriented-rectangle overlap via separating axes.
bool rects_overlap(const Footprint& a, const Footprint& b) {
  const Eigen::Vector2d axes[4] = {a.u, {-a.u.y(), a.u.x()}, b.u, {-b.u.y(), b.u.x()}};
  const double ea[2] = {a.hl, a.r}, eb[2] = {b.hl, b.r};
  const Eigen::Vector2d au[2] = {a.u, {-a.u.y(), a.u.x()}};
  const Eigen::Vector2d bu[2] = {b.u, {-b.u.y(), b.u.x()}};
  for (const auto& ax : axes) {
    const double dist = std::abs((b.center - a.center).dot(ax));
    double ra = 0, rb = 0;
    for (int i = 0; i < 2; ++i) {
      ra += ea[i] * std::abs(au[i].dot(ax));
      rb += eb[i] * std::abs(bu[i].dot(ax));
    }
    if (dist > ra + rb) return false;
  }
  return true;
}

// Highest existing surface under the candidate footprint (floor = 0). Where
// an exact maximum is fiddly (cap fringes, flank-over-flank), this errs high:
// the new object may rest a hair above its support, never inside it.
double support_height(const std::vector<Cylinder>& placed, const Footprint& f) {
  double h = 0.0;
  for (const Cylinder& c : placed) {
    const Eigen::Vector2d cc = c.center().head<2>();
    if (c.upright()) {
      const double top = c.center().z() + c.height / 2;
      if (f.disc) {
        if ((f.center - cc).norm() < f.r + c.radius) h = std::max(h, top);
      } else {
        if (point_to_rect_distance(cc, f.center, f.u, f.hl, f.r) < c.radius) h = std::max(h, top);
      }
    } else {
      const Eigen::Vector2d cu = c.axis().head<2>().normalized();
      const double chl = c.height / 2;
      if (f.disc) {
        const Eigen::Vector2d d = f.center - cc;
        const Eigen::Vector2d cn(-cu.y(), cu.x());
        if (std::abs(d.dot(cu)) > chl + f.r) continue;
        const double smin = std::max(0.0, std::abs(d.dot(cn)) - f.r);
        if (smin < c.radius)
          h = std::max(h, c.center().z() + std::sqrt(c.radius * c.radius - smin * smin));
      } else {
        const Footprint cf = {false, cc, c.radius, cu, chl};
        if (rects_overlap(f, cf)) h = std::max(h, c.center().z() + c.radius);
      }
    }
  }
  return h;
}

Eigen::Isometry3d upright_pose(const Eigen::Vector2d& c, double z_center) {
  Eigen::Isometry3d p = Eigen::Isometry3d::Identity();
  p.translation() = Eigen::Vector3d(c.x(), c.y(), z_center);
  return p;
}

Eigen::Isometry3d lying_pose(const Eigen::Vector2d& c, double yaw, double z_center) {
  const Eigen::Vector3d a(std::cos(yaw), std::sin(yaw), 0);
  Eigen::Matrix3d r;
  r.col(2) = a;
  r.col(0) = Eigen::Vector3d::UnitZ().cross(a);  // horizontal, ⟂ axis
  r.col(1) = a.cross(r.col(0));                  // = UnitZ
  Eigen::Isometry3d p = Eigen::Isometry3d::Identity();
  p.linear() = r;
  p.translation() = Eigen::Vector3d(c.x(), c.y(), z_center);
  return p;
}

}  // namespace

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kTrainA: return "train-A";
    case Scenario::kTrainB: return "train-B";
    case Scenario::kTrainC: return "train-C";
    case Scenario::kTrainD: return "train-D";
    case Scenario::kTest1: return "test-1";
    case Scenario::kTest2: return "test-2";
    case Scenario::kTest3: return "test-3";
  }
  return "?";
}

Scenario parse_scenario(const std::string& name) {
  for (const Scenario s : {Scenario::kTrainA, Scenario::kTrainB, Scenario::kTrainC,
                           Scenario::kTrainD, Scenario::kTest1, Scenario::kTest2,
                           Scenario::kTest3})
    if (name == scenario_name(s)) return s;
  throw ConfigError("unknown scenario: " + name);
}

const char* failure_name(SuctionFailure f) {
  switch (f) {
    case SuctionFailure::kNone: return "none";
    case SuctionFailure::kNoSurface: return "no-surface";
    case SuctionFailure::kHitBin: return "hit-bin";
    case SuctionFailure::kBadNormal: return "bad-normal";
    case SuctionFailure::kSealBroken: return "seal-broken";
    case SuctionFailure::kInvalidPoint: return "invalid-point";
  }
  return "?";
}

const std::array<Eigen::Vector3d, 4>& color_palette() {
  static const std::array<Eigen::Vector3d, 4> palette = {
      Eigen::Vector3d(0.85, 0.15, 0.15),  // red
      Eigen::Vector3d(0.15, 0.72, 0.22),  // green
      Eigen::Vector3d(0.16, 0.28, 0.88),  // blue
      Eigen::Vector3d(0.92, 0.86, 0.16),  // yellow
  };
  return palette;
}

SceneState generate_scene(Scenario scenario, int n_objects, uint64_t seed,
                          const SimParams& params) {
  if (n_objects < 1) throw PreconditionError("generate_scene: need at least one object");
  params.validate();
  const double r = params.cyl_radius, h = params.cyl_height;
  const BinGeometry& bin = params.bin;

  // capacity prechecks: a single footprint must fit, and the total object
  // volume must fit under the walls (stacking cannot beat solid fill)
  const bool upright_fits = 2 * r <= std::min(bin.inner_x, bin.inner_y);
  const bool lying_fits = std::min(2 * r, h) <= std::min(bin.inner_x, bin.inner_y) &&
                          std::max(2 * r, h) <= std::max(bin.inner_x, bin.inner_y);
  if (!upright_fits && !lying_fits)
    throw CapacityError("generate_scene: one cylinder cannot fit the bin footprint");
  const double volume = n_objects * kPi * r * r * h;
  if (volume > bin.inner_x * bin.inner_y * bin.wall_height)
    throw CapacityError("generate_scene: " + std::to_string(n_objects) +
                        " cylinders exceed the bin volume");

  const ScenarioSpec spec = scenario_spec(scenario);
  SceneState scene;
  scene.bin = bin;
  scene.params = params;
  scene.scenario = scenario;
  scene.rng = Rng(seed);

  const double max_top = bin.wall_height;  // keep piles inside the open box
  for (int i = 0; i < n_objects; ++i) {
    Cylinder c;
    c.id = i;
    c.radius = r;
    c.height = h;
    const size_t color_idx = scene.rng.index(color_palette().size());
    c.color = spec.all_blue ? color_palette()[2] : color_palette()[color_idx];

    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const bool upright = scene.rng.uniform() < spec.upright_prob && upright_fits;
      const double yaw = scene.rng.uniform(0.0, 2 * kPi);
      const double sx = spec.spread * bin.inner_x / 2;
      const double sy = spec.spread * bin.inner_y / 2;
      const Eigen::Vector2d at(scene.rng.uniform(-sx, sx), scene.rng.uniform(-sy, sy));
      const Footprint f = upright ? upright_footprint(at, r) : lying_footprint(at, yaw, r, h);
      if (!footprint_in_bin(f, bin)) continue;
      const double base = support_height(scene.cylinders, f);
      const double half = upright ? h / 2 : r;
      if (base + 2 * half > max_top) continue;  // pile would poke out of the box
      c.pose = upright ? upright_pose(at, base + half) : lying_pose(at, yaw, base + half);
      placed = true;
    }
    if (!placed) {
      // fall back to the first free floor spot, scanning a fixed grid
      const int grid = 24;
      for (int gy = 0; gy < grid && !placed; ++gy)
        for (int gx = 0; gx < grid && !placed; ++gx) {
          const Eigen::Vector2d at(
              -bin.inner_x / 2 + (gx + 0.5) * bin.inner_x / grid,
              -bin.inner_y / 2 + (gy + 0.5) * bin.inner_y / grid);
          const Footprint f = upright_footprint(at, r);
          if (!footprint_in_bin(f, bin)) continue;
          if (support_height(scene.cylinders, f) > 0.0) continue;
          c.pose = upright_pose(at, h / 2);
          placed = true;
        }
    }
    if (!placed)
      throw CapacityError("generate_scene: no space left for object " + std::to_string(i));
    scene.cylinders.push_back(c);
  }
  return scene;
}

Frame render(const SceneState& scene, const CameraModel& cam, int width, int height,
             uint64_t noise_seed) {
  if (width < 1 || height < 1) throw DimError("render: image extents must be positive");
  Frame frame;
  frame.width = width;
  frame.height = height;
  frame.rgb.assign(static_cast<size_t>(width) * height * 3, 0.0f);
  frame.depth.assign(static_cast<size_t>(width) * height, 0.0);

  const Eigen::Matrix3d rot = cam.cam_to_world.rotation();
  const Eigen::Vector3d origin = cam.cam_to_world.translation();
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      // unnormalized direction with z_cam = 1: the hit parameter t is then
      // exactly the depth along the optical axis
      const Eigen::Vector3d dir_cam((u - cam.cx()) / cam.fx(), (v - cam.cy()) / cam.fy(), 1.0);
      const Hit hit = trace(scene, origin, rot * dir_cam);
      const size_t at = frame.pix(u, v);
      if (hit.id == kMiss) continue;  // depth stays 0
      frame.depth[at] = hit.t;
      const double s = shade(hit.normal);
      for (int ch = 0; ch < 3; ++ch)
        frame.rgb[at * 3 + ch] = static_cast<float>(std::clamp(hit.color[ch] * s, 0.0, 1.0));
    }
  }
  if (scene.params.depth_noise_sd > 0) {
    Rng noise(noise_seed);
    for (auto& d : frame.depth)
      if (d > 0) d = std::max(1e-6, d + scene.params.depth_noise_sd * noise.normal());
  }
  return frame;
}

namespace {

SuctionResult suction_impl(const SceneState& scene, const Eigen::Vector3d& p, int* removed_index) {
  SuctionResult res;
  if (!p.allFinite()) {
    res.reason = SuctionFailure::kInvalidPoint;
    return res;
  }
  const double z_start = scene.bin.wall_height + 10.0;
  const Eigen::Vector3d down(0, 0, -1);
  const auto drop = [&](double x, double y) {
    return trace(scene, Eigen::Vector3d(x, y, z_start), down);
  };

  const Hit hit = drop(p.x(), p.y());
  if (hit.id == kMiss || hit.id == kFloor || hit.id == kWall) {
    res.reason = SuctionFailure::kHitBin;
    return res;
  }
  const double z_hit = z_start - hit.t;
  if (std::abs(z_hit - p.z()) > scene.params.delta_z) {
    res.reason = SuctionFailure::kNoSurface;
    return res;
  }
  const double cos_max = std::cos(scene.params.theta_max_deg * kPi / 180.0);
  if (hit.normal.z() < cos_max) {
    res.reason = SuctionFailure::kBadNormal;
    return res;
  }
  // seal: ring of 8 cup-radius points, all on the same cylinder, depth spread
  // (including the center contact) within tolerance
  double z_lo = z_hit, z_hi = z_hit;
  for (int k = 0; k < 8; ++k) {
    const double ang = k * kPi / 4;
    const Hit ring = drop(p.x() + scene.params.cup_radius * std::cos(ang),
                          p.y() + scene.params.cup_radius * std::sin(ang));
    if (ring.id != hit.id) {
      res.reason = SuctionFailure::kSealBroken;
      return res;
    }
    const double z = z_start - ring.t;
    z_lo = std::min(z_lo, z);
    z_hi = std::max(z_hi, z);
  }
  if (z_hi - z_lo > scene.params.seal_spread) {
    res.reason = SuctionFailure::kSealBroken;
    return res;
  }
  res.success = true;
  res.removed_id = hit.id;
  if (removed_index) {
    for (size_t i = 0; i < scene.cylinders.size(); ++i)
      if (scene.cylinders[i].id == hit.id) *removed_index = static_cast<int>(i);
  }
  return res;
}

}  // namespace

SuctionResult attempt_suction(SceneState& scene, const Eigen::Vector3d& world_point) {
  int idx = -1;
  SuctionResult res = suction_impl(scene, world_point, &idx);
  if (res.success) scene.cylinders[idx].alive = false;
  return res;
}

SuctionResult probe_suction(const SceneState& scene, const Eigen::Vector3d& world_point) {
  return suction_impl(scene, world_point, nullptr);
}

int count_alive(const SceneState& scene) {
  int n = 0;
  for (const Cylinder& c : scene.cylinders) n += c.alive ? 1 : 0;
  return n;
}

bool is_empty(const SceneState& scene) { return count_alive(scene) == 0; }

CameraModel make_topdown_camera(const BinGeometry& bin, double height, int width, int height_px,
                                double fill) {
  bin.validate();
  if (!(height > 0)) throw ConfigError("make_topdown_camera: height must be positive");
  const double f = fill * height_px * height / bin.inner_y;
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, -1, 0, 0, 0, -1;  // +z_cam looks straight down
  pose.linear() = r;
  pose.translation() = Eigen::Vector3d(0, 0, height);
  return CameraModel(f, f, width / 2.0, height_px / 2.0, pose);
}

std::string dump_scene(const SceneState& scene) {
  std::ostringstream os;
  os.precision(17);
  os << "safl-scene 1\n";
  os << "scenario " << scenario_name(scene.scenario) << "\n";
  os << "bin " << scene.bin.inner_x << " " << scene.bin.inner_y << " " << scene.bin.wall_height
     << " " << scene.bin.wall_thickness << "\n";
  const SimParams& p = scene.params;
  os << "params " << p.cyl_radius << " " << p.cyl_height << " " << p.delta_z << " "
     << p.theta_max_deg << " " << p.cup_radius << " " << p.seal_spread << " " << p.depth_noise_sd
     << "\n";
  os << "count " << scene.cylinders.size() << "\n";
  for (const Cylinder& c : scene.cylinders) {
    os << "cyl " << c.id;
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 4; ++col) os << " " << c.pose.matrix()(row, col);
    os << " " << c.radius << " " << c.height << " " << c.color.x() << " " << c.color.y() << " "
       << c.color.z() << " " << (c.alive ? 1 : 0) << "\n";
  }
  os << "rng " << scene.rng << "\n";
  return os.str();
}

SceneState restore_scene(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  size_t line_no = 0;
  const auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) throw FormatError(std::string("scene missing ") + what, line_no);
    ++line_no;
    return std::istringstream(line);
  };

  SceneState scene;
  {
    auto ls = next_line("header");
    std::string tag;
    int version = 0;
    ls >> tag >> version;
    if (tag != "safl-scene" || version != 1) throw FormatError("bad scene header", line_no);
  }
  {
    auto ls = next_line("scenario");
    std::string tag, name;
    ls >> tag >> name;
    if (tag != "scenario" || !ls) throw FormatError("bad scenario line", line_no);
    scene.scenario = parse_scenario(name);
  }
  {
    auto ls = next_line("bin");
    std::string tag;
    ls >> tag >> scene.bin.inner_x >> scene.bin.inner_y >> scene.bin.wall_height >>
        scene.bin.wall_thickness;
    if (tag != "bin" || !ls) throw FormatError("bad bin line", line_no);
  }
  {
    auto ls = next_line("params");
    std::string tag;
    SimParams& p = scene.params;
    ls >> tag >> p.cyl_radius >> p.cyl_height >> p.delta_z >> p.theta_max_deg >> p.cup_radius >>
        p.seal_spread >> p.depth_noise_sd;
    if (tag != "params" || !ls) throw FormatError("bad params line", line_no);
    p.bin = scene.bin;
  }
  size_t count = 0;
  {
    auto ls = next_line("count");
    std::string tag;
    ls >> tag >> count;
    if (tag != "count" || !ls) throw FormatError("bad count line", line_no);
  }
  for (size_t i = 0; i < count; ++i) {
    auto ls = next_line("cylinder");
    std::string tag;
    Cylinder c;
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    int alive = 0;
    ls >> tag >> c.id;
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 4; ++col) ls >> m(row, col);
    ls >> c.radius >> c.height >> c.color.x() >> c.color.y() >> c.color.z() >> alive;
    if (tag != "cyl" || !ls) throw FormatError("bad cylinder line", line_no);
    if (!(c.radius > 0) || !(c.height > 0))
      throw FormatError("cylinder with non-positive extents", line_no);
    c.pose.matrix() = m;
    const Eigen::Matrix3d r = c.pose.rotation();
    if (((r.transpose() * r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
      throw FormatError("cylinder pose rotation is not orthonormal", line_no);
    c.alive = alive != 0;
    scene.cylinders.push_back(c);
  }
  {
    auto ls = next_line("rng");
    std::string tag;
    ls >> tag;
    if (tag != "rng") throw FormatError("bad rng line", line_no);
    ls >> scene.rng;
    if (!ls) throw FormatError("bad rng state", line_no);
  }
  return scene;
}

}  // namespace safl
