#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "frameseg/frameio.hpp"
#include "frameseg/transform.hpp"

namespace frameseg {

/// Per-point pixel correspondence. Invalid points carry -1 in every field.
struct PointProjection {
  bool valid = false;
  double u = -1.0;
  double v = -1.0;
  std::int32_t px = -1;
  std::int32_t py = -1;
  double depth = -1.0;
};

struct ProjectionMap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<PointProjection> points;

  std::size_t valid_count() const;
};

/// Round-half-up to the nearest integer: floor(x + 0.5).
std::int64_t round_half_up(double x);

/// Applies radial (k1, k2) and tangential (p1, p2) distortion to normalized coordinates.
std::array<double, 2> distort(const Distortion& d, double x, double y);
/// Inverse of distort by fixed-point iteration.
std::array<double, 2> undistort(const Distortion& d, double xd, double yd);

/// Continuous pixel coordinates of a camera-frame point (z > 0).
std::array<double, 2> project_camera_point(const Intrinsics& k, const Vec3& p_cam);

ProjectionMap project_points(const RigConfig& rig, const LidarFrame& frame);
ProjectionMap project_points(const RigConfig& rig, std::span<const Point> points);

using Rgb = std::array<std::uint8_t, 3>;

/// Draws each valid point as a single pixel in point-index order (last wins).
/// Single-channel images are expanded to RGB.
ImageFrame render_overlay(const ImageFrame& image, const ProjectionMap& proj, std::span<const Rgb> colors);

}  // namespace frameseg
