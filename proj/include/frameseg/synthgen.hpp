#pragma once

// Synthetic indoor oracle: box rooms with box obstacles, a ray-cast ring lidar,
// ray-cast camera masks and class-prototype teacher features.
//
// World frame: the room spans [0, width] x [0, depth] x [0, height] with z up.
// Lidar frame: x forward, y left, z up.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "frameseg/config.hpp"
#include "frameseg/frameio.hpp"
#include "frameseg/geometry.hpp"
#include "frameseg/sync.hpp"
#include "frameseg/tensorgrad.hpp"
#include "frameseg/transform.hpp"

namespace frameseg {

struct Box {
  Vec3 min{0.0, 0.0, 0.0};
  Vec3 max{0.0, 0.0, 0.0};
};

enum RoomFace : std::size_t { kFaceXMin, kFaceXMax, kFaceYMin, kFaceYMax, kFaceFloor, kFaceCeiling };

struct SceneSpec {
  double width = 0.0;
  double depth = 0.0;
  double height = 0.0;
  std::vector<Box> obstacles;  // non-structural
  /// A missing face is an opening: rays through it leave the scene.
  std::array<bool, 6> faces{true, true, true, true, true, true};
};

/// Throws Error(InvalidArgument) on non-positive extents or an obstacle that
/// leaves the room (obstacles may rest on the floor).
void validate(const SceneSpec& scene);

struct SceneOptions {
  std::uint32_t min_obstacles = 1;
  std::uint32_t max_obstacles = 5;
};

/// Room dims uniform in [4,12] x [4,12] x [2.5,3.5] m; obstacles stand on the floor.
SceneSpec generate_scene(std::uint64_t seed, const SceneOptions& options = {});

struct RayHit {
  double t = 0.0;
  std::uint16_t label = kIgnoreLabel;
};

/// Nearest surface along origin + t * dir (|dir| = 1) with t in (0, max_t].
std::optional<RayHit> cast_ray(const SceneSpec& scene, const Vec3& origin, const Vec3& dir, double max_t);

/// Distance from `p` to the nearest scene surface (room faces and obstacle boxes).
double distance_to_surface(const SceneSpec& scene, const Vec3& p);

struct SensorSpec {
  std::uint32_t rings = 16;
  std::uint32_t azimuths = 360;
  double elevation_min_deg = -30.0;
  double elevation_max_deg = 30.0;
  double max_range_m = 30.0;
  double range_noise_m = 0.0;
  RigidTransform world_to_sensor;
};

/// Elevation of each ring in degrees, evenly spaced over the span.
std::vector<double> ring_elevations(const SensorSpec& sensor);

/// One ray per (ring, azimuth); misses are omitted. Points are in the sensor
/// frame with ground-truth labels and intensity 1 / (1 + range).
/// Throws Error(Precondition) when the sensor is outside the room or inside an obstacle.
LidarFrame simulate_lidar(const SceneSpec& scene, const SensorSpec& sensor, std::uint64_t timestamp_ns,
                          std::uint64_t noise_seed = 0);

/// Camera pose in the world for a lidar pose and rig.
RigidTransform camera_to_world(const RigConfig& rig, const RigidTransform& world_to_sensor);

/// One ray per pixel through its center (pixel centers sit at integer
/// coordinates, matching round-half-up projection). Misses are kIgnoreLabel.
SemanticMask render_mask(const SceneSpec& scene, const RigConfig& rig, const RigidTransform& world_to_sensor);

/// Flat shading per label (diagnostic only).
ImageFrame render_image(const SemanticMask& mask, std::uint64_t timestamp_ns);
Rgb label_color(std::uint16_t label);

/// Intrinsics for rendering at another resolution so that a bilinear resize
/// back to the original resolution lines up pixel centers.
Intrinsics scale_intrinsics(const Intrinsics& k, std::uint32_t width, std::uint32_t height);

/// K orthonormal prototypes in R^C, rows of a seeded random rotation.
/// Throws Error(InvalidArgument) when C < K.
tg::Tensor<double> teacher_prototypes(std::uint32_t n_classes, std::uint32_t dim, std::uint64_t seed);

/// Per-pixel normalize(prototype + sigma * noise); kIgnoreLabel pixels are zero.
FeatureMap render_teacher_features(const SemanticMask& mask, const tg::Tensor<double>& prototypes, double sigma,
                                   std::uint64_t noise_seed);

/// The rig used for synthetic datasets: coincident lidar and camera, camera
/// looking along lidar +x.
RigConfig synthetic_rig(const SynthSettings& s);

struct SyntheticFrame {
  SceneSpec scene;
  RigidTransform world_to_sensor;
  LidarFrame lidar;
  std::uint64_t image_timestamp_ns = 0;
};

/// Scene, pose and lidar scan of frame `index`; deterministic per (seed, index).
SyntheticFrame synthesize_frame(const RunConfig& cfg, std::uint32_t index);

/// Writes `<out>/{lidar,images,masks,features,labels}/<ts>.*`, rig.json and
/// manifest.jsonl for cfg.synth.frames frames.
PairManifest emit_dataset(const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace frameseg
