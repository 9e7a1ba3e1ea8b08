#pragma once

// Distillation, linear probing, fine-tuning and inference for the student.
//
// All three regimes share one loop: a seeded shuffle per epoch, mini-batches
// whose gradients are summed in sample order, then one AdamW step. Frozen
// tensors get a zero learning-rate multiplier, which leaves them bitwise
// unchanged.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frameseg/config.hpp"
#include "frameseg/frameio.hpp"
#include "frameseg/metrics.hpp"
#include "frameseg/student.hpp"

namespace frameseg {

/// One frame prepared for distillation: all points go through the backbone,
/// the loss only sees the rows that project onto a non-empty teacher pixel.
struct DistillSample {
  std::vector<Point> points;
  std::vector<std::uint32_t> target_rows;
  tg::Tensor<float> targets;  // target_rows.size() x C, unit rows
};

/// Projects the frame, samples the teacher map (bilinearly resized to the
/// camera resolution) at each valid rounded pixel and normalizes the result.
/// Pixels whose teacher vector is zero carry no target.
DistillSample make_distill_sample(const LidarFrame& frame, const RigConfig& rig, const FeatureMap& teacher);

struct LabeledSample {
  std::vector<Point> points;
  std::vector<std::uint16_t> labels;  // kIgnoreLabel allowed
};

struct TrainReport {
  std::string stage;
  std::vector<double> epoch_loss;
  std::uint64_t skipped_batches = 0;
  std::uint64_t frames = 0;
  std::uint64_t supervised_points = 0;  // per epoch
  std::uint64_t seed = 0;
  std::uint64_t fingerprint = 0;
  std::string checkpoint;
  double wall_seconds = 0.0;
};

/// Deterministic report: everything except wall-clock time.
std::string report_to_json(const TrainReport& report);
/// Wall-clock sidecar kept apart so reports stay byte-identical across runs.
std::string timing_to_json(const TrainReport& report);

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Trains backbone and distill head from a fresh initialization.
TrainResult distill(std::span<const DistillSample> samples, const RunConfig& cfg);

/// Trains only the classifier head on frozen backbone features.
/// Throws Error(Precondition) when every label is ignored.
TrainResult linear_probe(const Checkpoint& ckpt, std::span<const LabeledSample> samples, const RunConfig& cfg);

/// Trains backbone and classifier with layer-decayed learning rates; the
/// distill head stays frozen.
TrainResult finetune(const Checkpoint& ckpt, std::span<const LabeledSample> samples, const RunConfig& cfg);

/// Learning-rate multiplier per stack index (0 = embedding, D+1 = classifier):
/// decay^(L-1-l) with L = D+2.
std::vector<double> layer_lr_multipliers(std::uint32_t depth, double decay);

/// Argmax of the classifier logits, ties to the smallest class id. Throws
/// Error(Mismatch) when `expected_fingerprint` differs from the checkpoint's.
std::vector<std::uint16_t> predict(const Checkpoint& ckpt, std::span<const Point> points,
                                   std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

ConfusionMatrix evaluate(const Checkpoint& ckpt, std::span<const LabeledSample> samples);

}  // namespace frameseg
