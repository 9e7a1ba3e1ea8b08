#include "frameseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "frameseg/error.hpp"
#include "frameseg/random.hpp"

namespace frameseg {

namespace {

constexpr std::uint64_t kSceneTag = 0x5CE2E;
constexpr std::uint64_t kPoseTag = 0x9052;
constexpr std::uint64_t kJitterTag = 0x717;
constexpr std::uint64_t kRangeNoiseTag = 0x2A6E;
constexpr std::uint64_t kPrototypeTag = 0x9207;
constexpr std::uint64_t kTeacherNoiseTag = 0x7EAC;

constexpr double kRayEps = 1e-12;
constexpr double kDegToRad = std::numbers::pi / 180.0;

bool strictly_inside(const Box& b, const Vec3& p) {
  for (int a = 0; a < 3; ++a)
    if (!(p[a] > b.min[a] && p[a] < b.max[a])) return false;
  return true;
}

std::optional<double> ray_box(const Box& b, const Vec3& o, const Vec3& d) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return std::nullopt;
      continue;
    }
    double t0 = (b.min[a] - o[a]) / d[a];
    double t1 = (b.max[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit || t_enter <= kRayEps) return std::nullopt;
  return t_enter;
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

bool inside_room(const SceneSpec& scene, const Vec3& p) {
  return p[0] > 0.0 && p[0] < scene.width && p[1] > 0.0 && p[1] < scene.depth && p[2] > 0.0 && p[2] < scene.height;
}

}  // namespace

void validate(const SceneSpec& scene) {
  if (!(scene.width > 0.0 && scene.depth > 0.0 && scene.height > 0.0))
    fail(ErrorKind::InvalidArgument, "scene extents must be positive");
  const Vec3 room{scene.width, scene.depth, scene.height};
  for (std::size_t i = 0; i < scene.obstacles.size(); ++i) {
    const auto& b = scene.obstacles[i];
    for (int a = 0; a < 3; ++a) {
      const bool lower_ok = a == 2 ? b.min[a] >= 0.0 : b.min[a] > 0.0;
      if (!lower_ok || !(b.max[a] < room[a]) || !(b.min[a] < b.max[a]))
        fail(ErrorKind::InvalidArgument, "obstacle " + std::to_string(i) + " is not inside the room");
    }
  }
}

SceneSpec generate_scene(std::uint64_t seed, const SceneOptions& options) {
  if (options.min_obstacles > options.max_obstacles)
    fail(ErrorKind::InvalidArgument, "min_obstacles must be <= max_obstacles");
  Rng rng(derive_seed(seed, kSceneTag));
  SceneSpec s;
  s.width = rng.uniform(4.0, 12.0);
  s.depth = rng.uniform(4.0, 12.0);
  s.height = rng.uniform(2.5, 3.5);
  const auto n = options.min_obstacles + rng.below(options.max_obstacles - options.min_obstacles + 1);
  constexpr double kMargin = 0.1;
  for (std::uint64_t i = 0; i < n; ++i) {
    const double sx = rng.uniform(0.4, 1.5);
    const double sy = rng.uniform(0.4, 1.5);
    const double sz = rng.uniform(0.4, 1.8);
    Box b;
    b.min = {rng.uniform(kMargin, s.width - kMargin - sx), rng.uniform(kMargin, s.depth - kMargin - sy), 0.0};
    b.max = {b.min[0] + sx, b.min[1] + sy, sz};
    s.obstacles.push_back(b);
  }
  validate(s);
  return s;
}

std::optional<RayHit> cast_ray(const SceneSpec& scene, const Vec3& origin, const Vec3& dir, double max_t) {
  std::optional<RayHit> best;
  // Room interior: the exit face is the nearest plane ahead along the ray.
  const double hi[3] = {scene.width, scene.depth, scene.height};
  double t_room = std::numeric_limits<double>::infinity();
  std::size_t face = 0;
  for (std::size_t a = 0; a < 3; ++a) {
    if (dir[a] > 0.0) {
      const double t = (hi[a] - origin[a]) / dir[a];
      if (t < t_room) t_room = t, face = 2 * a + 1;
    } else if (dir[a] < 0.0) {
      const double t = -origin[a] / dir[a];
      if (t < t_room) t_room = t, face = 2 * a;
    }
  }
  if (t_room > kRayEps && t_room <= max_t && scene.faces[face]) {
    const std::uint16_t label = face == kFaceFloor ? kFloor : (face == kFaceCeiling ? kCeiling : kWall);
    best = RayHit{t_room, label};
  }
  for (const auto& b : scene.obstacles) {
    const auto t = ray_box(b, origin, dir);
    if (t && *t <= max_t && (!best || *t < best->t)) best = RayHit{*t, kNonStructural};
  }
  return best;
}

double distance_to_surface(const SceneSpec& scene, const Vec3& p) {
  double best = std::min({std::abs(p[0]), std::abs(scene.width - p[0]), std::abs(p[1]), std::abs(scene.depth - p[1]),
                          std::abs(p[2]), std::abs(scene.height - p[2])});
  for (const auto& b : scene.obstacles) {
    double outside = 0.0, inside = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      const double below = b.min[a] - p[a], above = p[a] - b.max[a];
      const double gap = std::max({below, above, 0.0});
      outside += gap * gap;
      inside = std::min({inside, -below, -above});
    }
    best = std::min(best, outside > 0.0 ? std::sqrt(outside) : std::max(inside, 0.0));
  }
  return best;
}

std::vector<double> ring_elevations(const SensorSpec& sensor) {
  std::vector<double> out(sensor.rings);
  for (std::uint32_t r = 0; r < sensor.rings; ++r)
    out[r] = sensor.rings == 1 ? 0.5 * (sensor.elevation_min_deg + sensor.elevation_max_deg)
                               : sensor.elevation_min_deg + (sensor.elevation_max_deg - sensor.elevation_min_deg) *
                                                                double(r) / double(sensor.rings - 1);
  return out;
}

LidarFrame simulate_lidar(const SceneSpec& scene, const SensorSpec& sensor, std::uint64_t timestamp_ns,
                          std::uint64_t noise_seed) {
  if (sensor.rings < 1 || sensor.azimuths < 1) fail(ErrorKind::InvalidArgument, "sensor needs >= 1 ring and azimuth");
  if (!(sensor.elevation_min_deg > -90.0 && sensor.elevation_max_deg < 90.0))
    fail(ErrorKind::InvalidArgument, "sensor elevation span must lie within (-90, 90) degrees");
  const auto sensor_to_world = invert(sensor.world_to_sensor);
  const Vec3 origin = sensor_to_world.translation();
  if (!inside_room(scene, origin)) fail(ErrorKind::Precondition, "sensor pose is outside the room");
  for (const auto& b : scene.obstacles)
    if (strictly_inside(b, origin)) fail(ErrorKind::Precondition, "sensor pose is inside an obstacle");

  Rng noise(noise_seed);
  LidarFrame frame;
  frame.timestamp_ns = timestamp_ns;
  std::vector<std::uint16_t> labels;
  const auto& rot = sensor_to_world.rotation();
  for (double elev_deg : ring_elevations(sensor)) {
    const double el = elev_deg * kDegToRad;
    for (std::uint32_t a = 0; a < sensor.azimuths; ++a) {
      const double az = 2.0 * std::numbers::pi * double(a) / double(sensor.azimuths);
      const Vec3 ds{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const auto hit = cast_ray(scene, origin, mat_apply(rot, ds), sensor.max_range_m);
      if (!hit) continue;
      double range = hit->t;
      if (sensor.range_noise_m > 0.0) range = std::max(1e-3, range + sensor.range_noise_m * noise.normal());
      frame.points.push_back({static_cast<float>(ds[0] * range), static_cast<float>(ds[1] * range),
                              static_cast<float>(ds[2] * range), static_cast<float>(1.0 / (1.0 + range))});
      labels.push_back(hit->label);
    }
  }
  frame.labels = std::move(labels);
  return frame;
}

RigidTransform camera_to_world(const RigConfig& rig, const RigidTransform& world_to_sensor) {
  return compose(invert(world_to_sensor), invert(rig.lidar_to_camera));
}

SemanticMask render_mask(const SceneSpec& scene, const RigConfig& rig, const RigidTransform& world_to_sensor) {
  const auto& k = rig.intrinsics;
  const auto c2w = camera_to_world(rig, world_to_sensor);
  const Vec3 origin = c2w.translation();
  SemanticMask mask{k.width, k.height, std::vector<std::uint16_t>(std::size_t{k.width} * k.height, kIgnoreLabel)};
  const bool distorted = !k.distortion.is_zero();
  for (std::uint32_t y = 0; y < k.height; ++y) {
    for (std::uint32_t x = 0; x < k.width; ++x) {
      double xn = (double(x) - k.cx) / k.fx;
      double yn = (double(y) - k.cy) / k.fy;
      if (distorted) {
        const auto u = undistort(k.distortion, xn, yn);
        xn = u[0];
        yn = u[1];
      }
      const auto dir = mat_apply(c2w.rotation(), normalized({xn, yn, 1.0}));
      const auto hit = cast_ray(scene, origin, dir, std::numeric_limits<double>::infinity());
      if (hit) mask.ids[std::size_t{y} * k.width + x] = hit->label;
    }
  }
  return mask;
}

Rgb label_color(std::uint16_t label) {
  switch (label) {
    case kWall: return {200, 180, 140};
    case kFloor: return {90, 140, 90};
    case kCeiling: return {150, 170, 220};
    case kNonStructural: return {200, 70, 60};
    default: return {0, 0, 0};
  }
}

ImageFrame render_image(const SemanticMask& mask, std::uint64_t timestamp_ns) {
  ImageFrame img;
  img.timestamp_ns = timestamp_ns;
  img.width = mask.width;
  img.height = mask.height;
  img.channels = 3;
  img.pixels.reserve(mask.ids.size() * 3);
  for (auto id : mask.ids) {
    const auto c = label_color(id);
    img.pixels.insert(img.pixels.end(), c.begin(), c.end());
  }
  return img;
}

Intrinsics scale_intrinsics(const Intrinsics& k, std::uint32_t width, std::uint32_t height) {
  if (width == 0 || height == 0) fail(ErrorKind::InvalidArgument, "scaled resolution must be >= 1");
  const double sx = double(width) / double(k.width);
  const double sy = double(height) / double(k.height);
  Intrinsics out = k;
  out.width = width;
  out.height = height;
  out.fx = k.fx * sx;
  out.fy = k.fy * sy;
  out.cx = (k.cx + 0.5) * sx - 0.5;
  out.cy = (k.cy + 0.5) * sy - 0.5;
  return out;
}

tg::Tensor<double> teacher_prototypes(std::uint32_t n_classes, std::uint32_t dim, std::uint64_t seed) {
  if (dim < n_classes)
    fail(ErrorKind::InvalidArgument, "teacher_dim " + std::to_string(dim) + " is smaller than the " +
                                         std::to_string(n_classes) + " classes");
  Rng rng(seed);
  tg::Tensor<double> q(dim, dim);
  for (auto& v : q.values()) v = rng.normal();
  // Modified Gram-Schmidt, two passes for numerical orthogonality.
  for (std::uint32_t r = 0; r < dim; ++r) {
    auto row = q.row(r);
    for (int pass = 0; pass < 2; ++pass)
      for (std::uint32_t p = 0; p < r; ++p) {
        const auto prev = q.row(p);
        double dot = 0.0;
        for (std::uint32_t c = 0; c < dim; ++c) dot += row[c] * prev[c];
        for (std::uint32_t c = 0; c < dim; ++c) row[c] -= dot * prev[c];
      }
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    for (auto& v : row) v /= n;
  }
  tg::Tensor<double> out(n_classes, dim);
  std::copy_n(q.data(), out.size(), out.data());
  return out;
}

FeatureMap render_teacher_features(const SemanticMask& mask, const tg::Tensor<double>& prototypes, double sigma,
                                   std::uint64_t noise_seed) {
  const auto k = prototypes.rows();
  const auto c = static_cast<std::uint32_t>(prototypes.cols());
  FeatureMap fm(mask.height, mask.width, c);
  Rng rng(noise_seed);
  std::vector<double> v(c);
  for (std::uint32_t y = 0; y < mask.height; ++y) {
    for (std::uint32_t x = 0; x < mask.width; ++x) {
      const auto id = mask.at(x, y);
      if (id == kIgnoreLabel) continue;
      if (id >= k)
        fail(ErrorKind::InvalidArgument, "mask id " + std::to_string(id) + " has no teacher prototype");
      const auto proto = prototypes.row(id);
      double ss = 0.0;
      for (std::uint32_t i = 0; i < c; ++i) {
        v[i] = proto[i] + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
        ss += v[i] * v[i];
      }
      const double n = std::sqrt(ss);
      float* out = fm.pixel(y, x);
      for (std::uint32_t i = 0; i < c; ++i) out[i] = static_cast<float>(v[i] / n);
    }
  }
  return fm;
}

RigConfig synthetic_rig(const SynthSettings& s) {
  RigConfig rig;
  rig.intrinsics.fx = s.camera_fx;
  rig.intrinsics.fy = s.camera_fy;
  rig.intrinsics.cx = 0.5 * s.camera_width;
  rig.intrinsics.cy = 0.5 * s.camera_height;
  rig.intrinsics.width = s.camera_width;
  rig.intrinsics.height = s.camera_height;
  // camera x = -lidar y, camera y = -lidar z, camera z = lidar x
  const Mat3 r{{{0.0, -1.0, 0.0}, {0.0, 0.0, -1.0}, {1.0, 0.0, 0.0}}};
  rig.lidar_to_camera = RigidTransform(r, {0.0, 0.0, 0.0});
  rig.min_depth = 0.1;
  return rig;
}

SyntheticFrame synthesize_frame(const RunConfig& cfg, std::uint32_t index) {
  const auto& s = cfg.synth;
  SyntheticFrame f;
  f.scene = generate_scene(derive_seed(cfg.seed, kSceneTag, index), {s.min_obstacles, s.max_obstacles});

  Rng pose(derive_seed(cfg.seed, kPoseTag, index));
  const double yaw = pose.uniform(0.0, 2.0 * std::numbers::pi);
  const double height = pose.uniform(1.0, 1.4);
  constexpr double kWallClearance = 0.5, kObstacleClearance = 0.3;
  Vec3 position{};
  bool placed = false;
  for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
    position = {pose.uniform(kWallClearance, f.scene.width - kWallClearance),
                pose.uniform(kWallClearance, f.scene.depth - kWallClearance), height};
    placed = std::none_of(f.scene.obstacles.begin(), f.scene.obstacles.end(), [&](const Box& b) {
      return position[0] > b.min[0] - kObstacleClearance && position[0] < b.max[0] + kObstacleClearance &&
             position[1] > b.min[1] - kObstacleClearance && position[1] < b.max[1] + kObstacleClearance;
    });
  }
  if (!placed) fail(ErrorKind::Internal, "could not place the sensor in scene " + std::to_string(index));
  f.world_to_sensor = invert(RigidTransform(rotation_z(yaw), position));

  SensorSpec sensor;
  sensor.rings = s.rings;
  sensor.azimuths = s.azimuths;
  sensor.elevation_min_deg = s.elevation_min_deg;
  sensor.elevation_max_deg = s.elevation_max_deg;
  sensor.max_range_m = s.max_range_m;
  sensor.range_noise_m = s.range_noise_m;
  sensor.world_to_sensor = f.world_to_sensor;

  const std::uint64_t lidar_ts = 1'000'000'000ull + std::uint64_t{index} * 100'000'000ull;
  std::int64_t jitter = 0;
  if (s.jitter_ns > 0) {
    Rng jr(derive_seed(cfg.seed, kJitterTag, index));
    jitter = static_cast<std::int64_t>(jr.below(2 * static_cast<std::uint64_t>(s.jitter_ns) + 1)) - s.jitter_ns;
  }
  f.image_timestamp_ns = static_cast<std::uint64_t>(static_cast<std::int64_t>(lidar_ts) + jitter);
  f.lidar = simulate_lidar(f.scene, sensor, lidar_ts, derive_seed(cfg.seed, kRangeNoiseTag, index));
  return f;
}

PairManifest emit_dataset(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  validate(cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"lidar", "images", "masks", "features", "labels"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) fail(ErrorKind::Io, (out_dir / sub).string() + ": cannot create directory: " + ec.message());
  }
  const auto rig = synthetic_rig(cfg.synth);
  save_rig_config(rig, out_dir / "rig.json");
  RigConfig teacher_rig = rig;
  teacher_rig.intrinsics = scale_intrinsics(rig.intrinsics, cfg.teacher_size.w, cfg.teacher_size.h);
  const auto prototypes =
      teacher_prototypes(kStructuralClassCount, cfg.teacher_dim, derive_seed(cfg.seed, kPrototypeTag));

  PairManifest manifest;
  manifest.base_dir = out_dir;
  for (std::uint32_t i = 0; i < cfg.synth.frames; ++i) {
    const auto f = synthesize_frame(cfg, i);
    const auto lts = std::to_string(f.lidar.timestamp_ns);
    const auto its = std::to_string(f.image_timestamp_ns);
    ManifestRecord rec;
    rec.lidar = "lidar/" + lts + ".lfrm";
    rec.image = "images/" + its + ".ppm";
    rec.mask = "masks/" + its + ".pgm";
    rec.featmap = "features/" + its + ".fmap";
    rec.dt_ns = static_cast<std::int64_t>(f.image_timestamp_ns) - static_cast<std::int64_t>(f.lidar.timestamp_ns);

    write_lidar_frame(f.lidar, out_dir / rec.lidar);
    const auto mask = render_mask(f.scene, rig, f.world_to_sensor);
    write_mask(mask, out_dir / *rec.mask);
    write_image(render_image(mask, f.image_timestamp_ns), out_dir / *rec.image);
    const auto teacher_mask = render_mask(f.scene, teacher_rig, f.world_to_sensor);
    write_feature_map(render_teacher_features(teacher_mask, prototypes, cfg.synth.teacher_noise,
                                              derive_seed(cfg.seed, kTeacherNoiseTag, i)),
                      out_dir / *rec.featmap);
    manifest.records.push_back(std::move(rec));
  }
  write_manifest(manifest.records, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace frameseg
