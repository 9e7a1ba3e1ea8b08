#pragma once

// File-level pipeline stages. Each stage reads and writes the on-disk formats
// and returns a summary; the C API and the command line are thin wrappers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "frameseg/config.hpp"
#include "frameseg/metrics.hpp"
#include "frameseg/sync.hpp"
#include "frameseg/trainer.hpp"

namespace frameseg::pipeline {

namespace fs = std::filesystem;

enum class LabelSource { Pseudo, Real };
LabelSource parse_label_source(const std::string& text);

struct SynthSummary {
  std::size_t frames = 0;
  std::size_t points = 0;
  fs::path manifest;
};
SynthSummary synth(const RunConfig& cfg, const fs::path& out_dir);

struct PairSummary {
  std::size_t lidar_frames = 0;
  std::size_t images = 0;
  std::size_t paired = 0;
  std::int64_t max_abs_dt_ns = 0;
  fs::path manifest;
};
/// Pairs `<data>/lidar/*.lfrm` with `<data>/images/*.ppm` by timestamp and
/// attaches same-stem masks and feature maps when present.
PairSummary pair(const fs::path& data_dir, std::int64_t max_dt_ns, const fs::path& out_manifest);

struct SplitSummary {
  std::array<std::size_t, 3> counts{};
  std::array<fs::path, 3> manifests;
};
/// Writes train.jsonl, val.jsonl and test.jsonl into `out_dir`.
SplitSummary split(const fs::path& manifest, const fs::path& out_dir, std::array<double, 3> ratios);

struct ProjectSummary {
  std::size_t overlays = 0;
  std::size_t points = 0;
  std::size_t valid_points = 0;
};
/// Draws projected points over each paired image, colored by ground-truth
/// label when the frame has one and by depth otherwise.
ProjectSummary project(const fs::path& manifest, const fs::path& rig, const fs::path& out_dir,
                       std::size_t limit = 0);

struct PseudolabelOptions {
  std::optional<fs::path> label_map;  // src<TAB>target table; builtin structural map otherwise
  bool depth_filter = false;
  double depth_tolerance_m = 0.2;
  std::optional<fs::path> out_manifest;  // defaults to updating `manifest` in place
};
struct PseudolabelSummary {
  std::size_t frames = 0;
  std::size_t points = 0;
  std::size_t labeled_points = 0;
  /// Agreement with ground truth over labeled points of frames that carry it.
  std::optional<double> gt_agreement;
  std::size_t gt_compared = 0;
  fs::path manifest;
};
PseudolabelSummary pseudolabel(const RunConfig& cfg, const fs::path& manifest, const fs::path& rig,
                               const PseudolabelOptions& options = {});

std::vector<DistillSample> load_distill_samples(const PairManifest& manifest, const RigConfig& rig);
std::vector<LabeledSample> load_labeled_samples(const PairManifest& manifest, LabelSource source,
                                                const RunConfig& cfg);

struct TrainOutputs {
  TrainReport report;
  fs::path checkpoint;
  fs::path report_path;
  fs::path timing_path;
};
/// Report paths sit next to the checkpoint: <stem>.report.json and <stem>.timing.json.
TrainOutputs distill(const RunConfig& cfg, const fs::path& manifest, const fs::path& rig, const fs::path& out_ckpt);
TrainOutputs probe(const RunConfig& cfg, const fs::path& ckpt, const fs::path& manifest, LabelSource source,
                   const fs::path& out_ckpt);
TrainOutputs finetune(const RunConfig& cfg, const fs::path& ckpt, const fs::path& manifest, LabelSource source,
                      const fs::path& out_ckpt);

struct EvalOutputs {
  Scores scores;
  std::string text;
  std::string csv;
  std::string json;
};
/// Scores predictions against pseudo or real labels; writes <prefix>.txt,
/// .csv and .json when `out_prefix` is given.
EvalOutputs eval(const RunConfig& cfg, const fs::path& ckpt, const fs::path& manifest, LabelSource source,
                 const std::optional<fs::path>& out_prefix = std::nullopt);

struct BenchRow {
  std::uint32_t depth = 0;
  double hz = 0.0;
  double ms_per_frame = 0.0;
  std::uint64_t points_per_frame = 0;
  std::uint64_t memory_bytes = 0;
};
struct BenchOutputs {
  std::vector<BenchRow> rows;
  std::string text;
  std::string csv;
  std::string json;
};
/// Inference throughput per depth on synthetic frames built from cfg.synth.
BenchOutputs bench(const RunConfig& cfg, const std::vector<std::uint32_t>& depths, std::uint32_t frames = 8,
                   std::uint32_t repeats = 3, const std::optional<fs::path>& out_prefix = std::nullopt);

std::string to_json(const SynthSummary& s);
std::string to_json(const PairSummary& s);
std::string to_json(const SplitSummary& s);
std::string to_json(const ProjectSummary& s);
std::string to_json(const PseudolabelSummary& s);
std::string to_json(const TrainOutputs& s);

}  // namespace frameseg::pipeline
