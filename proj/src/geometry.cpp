#include "frameseg/geometry.hpp"

#include <cmath>

#include "frameseg/error.hpp"

namespace frameseg {

Mat3 mat_identity() { return {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
  return c;
}

Mat3 mat_transpose(const Mat3& m) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

double mat_det(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

double orthonormality_error(const Mat3& m) {
  const Mat3 rtr = mat_mul(mat_transpose(m), m);
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) err = std::max(err, std::abs(rtr[i][j] - (i == j ? 1.0 : 0.0)));
  return err;
}

Mat3 polar_orthonormalize(const Mat3& m) {
  // R <- (R + R^-T) / 2 converges quadratically to the orthogonal polar factor.
  Mat3 r = m;
  for (int iter = 0; iter < 30; ++iter) {
    const double det = mat_det(r);
    if (std::abs(det) < 1e-12) fail(ErrorKind::Consistency, "rotation matrix is singular");
    // inverse transpose = cofactor matrix / det
    Mat3 cof{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int i1 = (i + 1) % 3, i2 = (i + 2) % 3, j1 = (j + 1) % 3, j2 = (j + 2) % 3;
        cof[i][j] = r[i1][j1] * r[i2][j2] - r[i1][j2] * r[i2][j1];
      }
    Mat3 next{};
    double delta = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        next[i][j] = 0.5 * (r[i][j] + cof[i][j] / det);
        delta = std::max(delta, std::abs(next[i][j] - r[i][j]));
      }
    r = next;
    if (delta < 1e-16) break;
  }
  return r;
}

Mat3 rotation_z(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {{{c, -s, 0.0}, {s, c, 0.0}, {0.0, 0.0, 1.0}}};
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (orthonormality_error(rotation) > kTolerance)
    fail(ErrorKind::Consistency, "rigid transform rotation is not orthonormal");
  if (std::abs(mat_det(rotation) - 1.0) > kTolerance)
    fail(ErrorKind::Consistency, "rigid transform rotation must have determinant +1");
  for (double t : translation)
    if (!std::isfinite(t)) fail(ErrorKind::Consistency, "rigid transform translation is not finite");
}

Vec3 RigidTransform::apply(const Vec3& p) const {
  const Vec3 r = mat_apply(rotation_, p);
  return {r[0] + translation_[0], r[1] + translation_[1], r[2] + translation_[2]};
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  const Mat3 r = mat_mul(a.rotation(), b.rotation());
  return RigidTransform(polar_orthonormalize(r), a.apply(b.translation()));
}

RigidTransform invert(const RigidTransform& t) {
  const Mat3 rt = mat_transpose(t.rotation());
  const Vec3 ti = mat_apply(rt, t.translation());
  return RigidTransform(rt, {-ti[0], -ti[1], -ti[2]});
}

std::vector<Vec3> transform_points(const RigidTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

// ---------------------------------------------------------------------------

std::size_t ProjectionMap::valid_count() const {
  std::size_t n = 0;
  for (const auto& p : points) n += p.valid ? 1 : 0;
  return n;
}

std::int64_t round_half_up(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

std::array<double, 2> distort(const Distortion& d, double x, double y) {
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  const double xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
  return {xd, yd};
}

std::array<double, 2> undistort(const Distortion& d, double xd, double yd) {
  if (d.is_zero()) return {xd, yd};
  double x = xd, y = yd;
  for (int iter = 0; iter < 50; ++iter) {
    const double r2 = x * x + y * y;
    const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
    const double dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
    const double dy = d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
    const double nx = (xd - dx) / radial;
    const double ny = (yd - dy) / radial;
    const bool converged = std::abs(nx - x) < 1e-14 && std::abs(ny - y) < 1e-14;
    x = nx;
    y = ny;
    if (converged) break;
  }
  return {x, y};
}

std::array<double, 2> project_camera_point(const Intrinsics& k, const Vec3& p) {
  const double xn = p[0] / p[2];
  const double yn = p[1] / p[2];
  if (k.distortion.is_zero()) return {k.fx * xn + k.cx, k.fy * yn + k.cy};
  const auto [xd, yd] = distort(k.distortion, xn, yn);
  return {k.fx * xd + k.cx, k.fy * yd + k.cy};
}

ProjectionMap project_points(const RigConfig& rig, std::span<const Point> points) {
  const auto& k = rig.intrinsics;
  ProjectionMap map;
  map.width = k.width;
  map.height = k.height;
  map.points.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const Vec3 cam = rig.lidar_to_camera.apply({double{p.x}, double{p.y}, double{p.z}});
    if (!(cam[2] >= rig.min_depth)) continue;
    const auto [u, v] = project_camera_point(k, cam);
    const auto px = round_half_up(u);
    const auto py = round_half_up(v);
    if (px < 0 || py < 0 || px >= std::int64_t{k.width} || py >= std::int64_t{k.height}) continue;
    auto& out = map.points[i];
    out.valid = true;
    out.u = u;
    out.v = v;
    out.px = static_cast<std::int32_t>(px);
    out.py = static_cast<std::int32_t>(py);
    out.depth = cam[2];
  }
  return map;
}

ProjectionMap project_points(const RigConfig& rig, const LidarFrame& frame) {
  return project_points(rig, std::span<const Point>(frame.points));
}

ImageFrame render_overlay(const ImageFrame& image, const ProjectionMap& proj, std::span<const Rgb> colors) {
  if (image.width != proj.width || image.height != proj.height)
    fail(ErrorKind::Mismatch, "overlay image is " + std::to_string(image.width) + "x" +
                                  std::to_string(image.height) + " but projection targets " +
                                  std::to_string(proj.width) + "x" + std::to_string(proj.height));
  if (colors.size() != proj.points.size())
    fail(ErrorKind::Mismatch, "overlay needs one color per point");
  if (image.channels != 1 && image.channels != 3)
    fail(ErrorKind::InvalidArgument, "overlay image must have 1 or 3 channels");

  ImageFrame out;
  out.timestamp_ns = image.timestamp_ns;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  if (image.channels == 3) {
    out.pixels = image.pixels;
  } else {
    out.pixels.resize(image.pixels.size() * 3);
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
      out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = image.pixels[i];
  }
  for (std::size_t i = 0; i < proj.points.size(); ++i) {
    const auto& p = proj.points[i];
    if (!p.valid) continue;
    const std::size_t at = (std::size_t(p.py) * out.width + std::size_t(p.px)) * 3;
    out.pixels[at] = colors[i][0];
    out.pixels[at + 1] = colors[i][1];
    out.pixels[at + 2] = colors[i][2];
  }
  return out;
}

}  // namespace frameseg
