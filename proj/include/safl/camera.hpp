#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <string>
#include <vector>

#include "safl/errors.hpp"

namespace safl {

// Pinhole intrinsics + camera-to-world rigid transform.
struct CameraModel {
  Eigen::Matrix3d intrinsics;      // upper-triangular, [2][2] = 1
  Eigen::Isometry3d cam_to_world;  // rotation orthonormal det +1, translation meters

  CameraModel(double fx, double fy, double cx, double cy,
              const Eigen::Isometry3d& t_c2w = Eigen::Isometry3d::Identity())
      : cam_to_world(t_c2w) {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("CameraModel: focal lengths must be positive");
    intrinsics << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    const Eigen::Matrix3d r = t_c2w.rotation();
    if (((r.transpose() * r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
      throw ConfigError("CameraModel: extrinsic rotation is not orthonormal");
    if (r.determinant() < 0.0) throw ConfigError("CameraModel: extrinsic rotation is reflected");
  }

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }
};

// Registered color + depth image pair. Depth is meters along the optical
// axis; 0 is the invalid-depth sentinel.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;     // interleaved r,g,b in [0,1], row-major
  std::vector<double> depth;  // row-major

  Frame() = default;
  Frame(int w, int h) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw DimError("Frame: non-positive extent");
    rgb.assign(static_cast<size_t>(w) * h * 3, 0.0f);
    depth.assign(static_cast<size_t>(w) * h, 0.0);
  }

  size_t pix(int u, int v) const { return static_cast<size_t>(v) * width + u; }
  double depth_at(int u, int v) const { return depth[pix(u, v)]; }
  bool depth_valid(int u, int v) const { return depth[pix(u, v)] > 0.0; }
  const float* rgb_at(int u, int v) const { return rgb.data() + pix(u, v) * 3; }
};

// Inverse pinhole projection (camera frame). Closed form of z * K^-1 [u v 1]^T
// for an upper-triangular K.
inline Eigen::Vector3d backproject(const CameraModel& cam, double u, double v, double z) {
  if (!(z > 0.0)) throw InvalidDepthError("backproject: depth must be positive, got " +
                                          std::to_string(z));
  return {z * (u - cam.cx()) / cam.fx(), z * (v - cam.cy()) / cam.fy(), z};
}

// Forward pinhole projection, used as the test oracle for backproject.
inline Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  if (!(p_cam.z() > 0.0)) throw InvalidDepthError("project: point behind the image plane");
  return {cam.fx() * p_cam.x() / p_cam.z() + cam.cx(), cam.fy() * p_cam.y() / p_cam.z() + cam.cy()};
}

inline Eigen::Vector3d camera_to_world(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  return cam.cam_to_world * p_cam;
}

inline Eigen::Vector3d world_to_camera(const CameraModel& cam, const Eigen::Vector3d& p_world) {
  return cam.cam_to_world.inverse() * p_world;
}

// Tiling of a frame into overlapping P x P patches: the minimal per-axis
// count, with integer offsets spread evenly over [0, extent - P].
struct PatchGrid {
  int patch_size = 0;
  std::vector<int> row_offsets;
  std::vector<int> col_offsets;

  int patch_count() const {
    return static_cast<int>(row_offsets.size() * col_offsets.size());
  }
  // patches are indexed row-major over (row, col) grid cells
  std::pair<int, int> offset(int patch_index) const {
    const int cols = static_cast<int>(col_offsets.size());
    if (patch_index < 0 || patch_index >= patch_count())
      throw BoundsError("PatchGrid: patch index " + std::to_string(patch_index) + " out of range");
    return {row_offsets[patch_index / cols], col_offsets[patch_index % cols]};
  }
};

namespace detail {
inline std::vector<int> spread_offsets(int extent, int patch) {
  const int n = (extent + patch - 1) / patch;  // ceil
  std::vector<int> offs(n);
  for (int k = 0; k < n; ++k)
    offs[k] = n == 1 ? 0
                     : static_cast<int>(std::lround(static_cast<double>(k) * (extent - patch) /
                                                    (n - 1)));
  return offs;
}
}  // namespace detail

inline PatchGrid make_patch_grid(int width, int height, int patch_size) {
  if (patch_size < 1) throw DimError("make_patch_grid: patch size must be positive");
  if (patch_size > width || patch_size > height)
    throw DimError("make_patch_grid: patch size " + std::to_string(patch_size) +
                   " exceeds frame extent " + std::to_string(width) + "x" + std::to_string(height));
  PatchGrid g;
  g.patch_size = patch_size;
  g.row_offsets = detail::spread_offsets(height, patch_size);
  g.col_offsets = detail::spread_offsets(width, patch_size);
  return g;
}

struct Patch {
  int row_offset = 0;  // top-left corner in the frame, (row, col) = (v, u)
  int col_offset = 0;
  int size = 0;
  std::vector<float> rgb;     // P*P*3 interleaved
  std::vector<double> depth;  // P*P
};

inline std::vector<Patch> split_frame(const Frame& frame, int patch_size) {
  const PatchGrid grid = make_patch_grid(frame.width, frame.height, patch_size);
  std::vector<Patch> out;
  out.reserve(grid.patch_count());
  for (int r : grid.row_offsets)
    for (int c : grid.col_offsets) {
      Patch p;
      p.row_offset = r;
      p.col_offset = c;
      p.size = patch_size;
      p.rgb.resize(static_cast<size_t>(patch_size) * patch_size * 3);
      p.depth.resize(static_cast<size_t>(patch_size) * patch_size);
      for (int y = 0; y < patch_size; ++y) {
        const size_t src = frame.pix(c, r + y);
        std::copy(frame.rgb.begin() + static_cast<long>(src * 3),
                  frame.rgb.begin() + static_cast<long>((src + patch_size) * 3),
                  p.rgb.begin() + static_cast<long>(static_cast<size_t>(y) * patch_size * 3));
        std::copy(frame.depth.begin() + static_cast<long>(src),
                  frame.depth.begin() + static_cast<long>(src + patch_size),
                  p.depth.begin() + static_cast<long>(static_cast<size_t>(y) * patch_size));
      }
      out.push_back(std::move(p));
    }
  return out;
}

// Affordance-map pixel (i, j) -> patch pixel: center of its 3x3 block.
inline std::pair<int, int> map_to_patch_pixel(int i, int j, int map_size) {
  if (i < 0 || j < 0 || i >= map_size || j >= map_size)
    throw BoundsError("map_to_patch_pixel: (" + std::to_string(i) + "," + std::to_string(j) +
                      ") outside " + std::to_string(map_size) + "x" + std::to_string(map_size));
  return {3 * i + 1, 3 * j + 1};
}

// One chosen suction candidate, tracked through every coordinate system.
struct PixelSelection {
  int patch_index = 0;
  int map_i = 0, map_j = 0;      // affordance-map coordinates
  int patch_r = 0, patch_c = 0;  // patch pixel (row, col)
  int frame_u = 0, frame_v = 0;  // full-frame pixel (col, row)
};

inline PixelSelection make_selection(const PatchGrid& grid, int patch_index, int map_i, int map_j) {
  const int map_size = grid.patch_size / 3;
  const auto [r, c] = map_to_patch_pixel(map_i, map_j, map_size);
  const auto [row_off, col_off] = grid.offset(patch_index);
  PixelSelection s;
  s.patch_index = patch_index;
  s.map_i = map_i;
  s.map_j = map_j;
  s.patch_r = r;
  s.patch_c = c;
  s.frame_u = col_off + c;
  s.frame_v = row_off + r;
  return s;
}

// Eq. 1 then Eq. 2 at the selection's frame pixel.
inline Eigen::Vector3d selection_to_world(const PixelSelection& sel, const Frame& frame,
                                          const CameraModel& cam) {
  if (sel.frame_u < 0 || sel.frame_u >= frame.width || sel.frame_v < 0 ||
      sel.frame_v >= frame.height)
    throw BoundsError("selection_to_world: frame pixel out of bounds");
  const double z = frame.depth_at(sel.frame_u, sel.frame_v);
  if (!(z > 0.0))
    throw InvalidDepthError("selection_to_world: invalid depth at pixel (" +
                            std::to_string(sel.frame_u) + "," + std::to_string(sel.frame_v) + ")");
  return camera_to_world(cam, backproject(cam, sel.frame_u, sel.frame_v, z));
}

}  // namespace safl
