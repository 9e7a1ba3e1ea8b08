#pragma once

// Readers and writers for every on-disk artifact of the pipeline.
//
//   *.lfrm  lidar frame   "LFRM" u16 version=1, u16 flags (bit0 has-labels),
//                         u16 reserved=0, u64 timestamp_ns, u32 count,
//                         count x (f32 x, y, z, intensity), [count x u16 label]
//   *.fmap  feature map   "FMAP" u16 version=1, u32 H, u32 W, u32 C,
//                         H*W*C f32 in [h][w][c] order
//   *.lbl   point labels  "LBLS" u16 version=1, u16 reserved=0, u32 count,
//                         count x u16
//   *.ppm / *.pgm         binary P6 / P5, 8-bit images; 16-bit P5 masks
//
// All multi-byte fields are little-endian except PGM 16-bit samples, which are
// big-endian as the PGM format requires.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frameseg/transform.hpp"
#include "frameseg/types.hpp"

namespace frameseg {

struct LidarFrame {
  std::uint64_t timestamp_ns = 0;
  std::vector<Point> points;
  std::optional<std::vector<std::uint16_t>> labels;

  std::size_t size() const { return points.size(); }
  friend bool operator==(const LidarFrame&, const LidarFrame&) = default;
};

/// Throws Error(Consistency) on a zero timestamp, non-finite value or label count mismatch.
void validate(const LidarFrame& frame);

struct ImageFrame {
  std::uint64_t timestamp_ns = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 3;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const ImageFrame&, const ImageFrame&) = default;
};

struct SemanticMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint16_t> ids;

  std::uint16_t at(std::uint32_t x, std::uint32_t y) const { return ids[std::size_t{y} * width + x]; }
  friend bool operator==(const SemanticMask&, const SemanticMask&) = default;
};

struct FeatureMap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> data;  // [h][w][c]

  FeatureMap() = default;
  FeatureMap(std::uint32_t h, std::uint32_t w, std::uint32_t c)
      : height(h), width(w), channels(c), data(std::size_t{h} * w * c, 0.0f) {}

  float* pixel(std::uint32_t y, std::uint32_t x) {
    return data.data() + (std::size_t{y} * width + x) * channels;
  }
  const float* pixel(std::uint32_t y, std::uint32_t x) const {
    return data.data() + (std::size_t{y} * width + x) * channels;
  }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct Distortion {
  double k1 = 0.0, k2 = 0.0, p1 = 0.0, p2 = 0.0;

  bool is_zero() const { return k1 == 0.0 && k2 == 0.0 && p1 == 0.0 && p2 == 0.0; }
};

struct Intrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Distortion distortion;
};

struct RigConfig {
  Intrinsics intrinsics;
  RigidTransform lidar_to_camera;
  double min_depth = 0.1;
};

// Lidar frames.
LidarFrame read_lidar_frame(const std::filesystem::path& path);
void write_lidar_frame(const LidarFrame& frame, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_lidar_frame(const LidarFrame& frame);
LidarFrame decode_lidar_frame(std::span<const std::uint8_t> bytes);
/// Reads only the header timestamp.
std::uint64_t read_lidar_timestamp(const std::filesystem::path& path);

// Images and masks.
ImageFrame read_image(const std::filesystem::path& path);
void write_image(const ImageFrame& image, const std::filesystem::path& path);
SemanticMask read_mask(const std::filesystem::path& path);
void write_mask(const SemanticMask& mask, const std::filesystem::path& path);
/// Parses "<digits>.<ext>" stems; nullopt otherwise.
std::optional<std::uint64_t> timestamp_from_filename(const std::filesystem::path& path);

// Teacher feature maps.
FeatureMap read_feature_map(const std::filesystem::path& path);
void write_feature_map(const FeatureMap& fm, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_feature_map(const FeatureMap& fm);
FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes);

// Per-point label files.
std::vector<std::uint16_t> read_point_labels(const std::filesystem::path& path);
void write_point_labels(std::span<const std::uint16_t> labels, const std::filesystem::path& path);

// Rig configuration (JSON).
RigConfig load_rig_config(const std::filesystem::path& path);
RigConfig parse_rig_config(const std::string& json_text);
std::string rig_config_to_json(const RigConfig& rig);
void save_rig_config(const RigConfig& rig, const std::filesystem::path& path);

// Raw file helpers shared by the binary formats.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace frameseg
