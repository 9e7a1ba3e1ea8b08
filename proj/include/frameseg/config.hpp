#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "frameseg/types.hpp"

namespace frameseg {

struct StudentSettings {
  std::uint32_t embed_dim = 32;
  std::uint32_t depth = 8;
  std::uint32_t grid_cells = 64;
  double cell_size_m = 0.15;
};

enum class LossPooling { PerBatch, PerFrame };

struct DistillSettings {
  std::uint32_t epochs = 25;
  double lr = 0.002;
  double weight_decay = 0.03;
  std::uint32_t batch = 8;
  LossPooling pooling = LossPooling::PerBatch;
  bool augment_yaw = true;
};

struct ProbeSettings {
  std::uint32_t epochs = 20;
  double lr = 0.001;
  double weight_decay = 0.003;
  std::uint32_t batch = 8;
};

struct FinetuneSettings {
  std::uint32_t epochs = 10;
  double lr = 0.002;
  double layer_decay = 0.99;
  double weight_decay = 0.03;
  std::uint32_t batch = 8;
  bool augment_yaw = true;
};

struct SyncSettings {
  std::int64_t max_dt_ns = 20'000'000;
};

struct TeacherSize {
  std::uint32_t w = 448;
  std::uint32_t h = 224;
};

/// Synthetic dataset generation parameters.
struct SynthSettings {
  std::uint32_t frames = 200;
  std::uint32_t rings = 16;
  std::uint32_t azimuths = 360;
  double elevation_min_deg = -30.0;
  double elevation_max_deg = 30.0;
  double max_range_m = 30.0;
  double range_noise_m = 0.0;
  double teacher_noise = 0.1;
  std::int64_t jitter_ns = 5'000'000;
  std::uint32_t min_obstacles = 1;
  std::uint32_t max_obstacles = 5;
  std::uint32_t camera_width = 320;
  std::uint32_t camera_height = 160;
  double camera_fx = 100.0;
  double camera_fy = 100.0;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::uint32_t classes = kStructuralClassCount;
  std::uint16_t ignore_id = kIgnoreLabel;
  std::uint32_t teacher_dim = 16;
  StudentSettings student;
  DistillSettings distill;
  ProbeSettings probe;
  FinetuneSettings finetune;
  SyncSettings sync;
  TeacherSize teacher_size;
  SynthSettings synth;
  /// Source taxonomy names (mask ids index into this list).
  std::vector<std::string> class_names{"wall", "floor", "ceiling", "non-structural"};
  /// Source classes dropped by the pseudo-label structural map.
  std::vector<std::string> pseudo_ignore_classes{"chair", "desk", "furniture"};
};

/// Throws Error(InvalidArgument) naming the offending key.
void validate(const RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text);
/// Applies a JSON object patch (RFC 7386 merge) on top of `cfg`.
RunConfig merge_run_config(const RunConfig& cfg, const std::string& json_patch);
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace frameseg
