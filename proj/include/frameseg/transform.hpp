#pragma once

#include <array>
#include <span>
#include <vector>

namespace frameseg {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mat_identity();
Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& m);
Vec3 mat_apply(const Mat3& m, const Vec3& v);
double mat_det(const Mat3& m);

/// Largest absolute entry of R^T R - I.
double orthonormality_error(const Mat3& m);

/// Nearest rotation via Newton polar iteration; input must be close to a rotation.
Mat3 polar_orthonormalize(const Mat3& m);

/// Rotation about +z by `yaw` radians.
Mat3 rotation_z(double yaw);

/// Rigid transform x -> R x + t. Rotation is kept orthonormal (det +1) to 1e-9.
class RigidTransform {
 public:
  static constexpr double kTolerance = 1e-9;

  RigidTransform() = default;

  /// Throws Error(Consistency) when `rotation` is not a proper rotation within kTolerance.
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {mat_identity(), t}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const;

 private:
  Mat3 rotation_ = mat_identity();
  Vec3 translation_{0.0, 0.0, 0.0};
};

/// compose(a, b) applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);
std::vector<Vec3> transform_points(const RigidTransform& t, std::span<const Vec3> points);

}  // namespace frameseg
