#include "frameseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "frameseg/error.hpp"
#include "frameseg/geometry.hpp"
#include "frameseg/random.hpp"

namespace frameseg {

using tg::Tensor;

namespace {

constexpr std::uint64_t kDistillTag = 0xD157;
constexpr std::uint64_t kProbeTag = 0x9B0E;
constexpr std::uint64_t kFinetuneTag = 0xF17E;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kYawStream = 2;

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<Point> rotate_yaw(std::span<const Point> points, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<Point> out(points.begin(), points.end());
  for (auto& p : out) {
    const double x = p.x, y = p.y;
    p.x = static_cast<float>(c * x - s * y);
    p.y = static_cast<float>(s * x + c * y);
  }
  return out;
}

double yaw_angle(std::uint64_t seed, std::uint64_t tag, std::uint32_t epoch, std::size_t sample) {
  Rng rng(derive_seed(seed, tag, kYawStream, (std::uint64_t{epoch} << 32) ^ sample));
  return rng.uniform(0.0, 2.0 * std::numbers::pi);
}

Tensor<float> gather_rows(const Tensor<float>& x, std::span<const std::uint32_t> rows) {
  Tensor<float> out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(x.data() + std::size_t{rows[r]} * x.cols(), x.cols(), out.data() + r * x.cols());
  return out;
}

Tensor<float> scatter_rows(const Tensor<float>& src, std::span<const std::uint32_t> rows, std::size_t n) {
  Tensor<float> out(n, src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(src.data() + r * src.cols(), src.cols(), out.data() + std::size_t{rows[r]} * src.cols());
  return out;
}

struct LoopSpec {
  const char* stage;
  std::uint64_t tag;
  std::uint32_t epochs;
  std::uint32_t batch;
  tg::AdamWHyper hyper;
  std::vector<double> lr_scale;
};

/// Runs epochs of seeded shuffled mini-batches. `batch_fn` accumulates
/// gradients for one batch and returns its loss, or nullopt to skip it.
template <typename BatchFn>
TrainReport run_loop(StudentParams<float>& params, tg::AdamWState<float>& opt, const StudentConfig& scfg,
                     std::size_t n_samples, const LoopSpec& spec, std::uint64_t seed, BatchFn&& batch_fn) {
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.stage = spec.stage;
  report.seed = seed;
  report.fingerprint = scfg.fingerprint();
  report.frames = n_samples;

  auto param_ptrs = params.tensors();
  StudentParams<float> grads = StudentParams<float>::zeros(scfg);
  const auto grad_ptrs = std::as_const(grads).tensors();

  std::vector<std::size_t> order(n_samples);
  for (std::uint32_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, spec.tag, kShuffleStream, epoch));
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n_samples; b += spec.batch) {
      const std::size_t e = std::min(n_samples, b + spec.batch);
      for (auto* g : grads.tensors()) g->fill(0.0f);
      const std::optional<double> loss = batch_fn(std::span<const std::size_t>(order.data() + b, e - b), epoch, grads);
      if (!loss) {
        ++report.skipped_batches;
        continue;
      }
      if (!std::isfinite(*loss)) fail(ErrorKind::Internal, std::string(spec.stage) + ": non-finite loss");
      tg::adamw_step<float>(param_ptrs, grad_ptrs, opt, spec.hyper, spec.lr_scale);
      loss_sum += *loss;
      ++batches;
    }
    report.epoch_loss.push_back(batches ? loss_sum / double(batches) : 0.0);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<double> group_scale(const StudentConfig& scfg, ParamGroup trained) {
  std::vector<double> out;
  for (const auto& info : param_layout(scfg)) out.push_back(info.group == trained ? 1.0 : 0.0);
  return out;
}

void check_samples(std::span<const LabeledSample> samples, std::uint32_t classes, const char* stage) {
  std::uint64_t used = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.labels.size() != s.points.size())
      fail(ErrorKind::Mismatch, std::string(stage) + ": sample " + std::to_string(i) + " has " +
                                    std::to_string(s.labels.size()) + " labels for " +
                                    std::to_string(s.points.size()) + " points");
    for (auto l : s.labels) {
      if (l == kIgnoreLabel) continue;
      if (l >= classes)
        fail(ErrorKind::InvalidArgument, std::string(stage) + ": sample " + std::to_string(i) + " has label " +
                                             std::to_string(l) + " >= " + std::to_string(classes) + " classes");
      ++used;
    }
  }
  if (used == 0) fail(ErrorKind::Precondition, std::string(stage) + ": every label is ignored, nothing to train on");
}

std::uint64_t count_used(const LabeledSample& s) {
  return static_cast<std::uint64_t>(std::count_if(s.labels.begin(), s.labels.end(),
                                                  [](std::uint16_t l) { return l != kIgnoreLabel; }));
}

}  // namespace

DistillSample make_distill_sample(const LidarFrame& frame, const RigConfig& rig, const FeatureMap& teacher) {
  if (teacher.channels == 0 || teacher.width == 0 || teacher.height == 0)
    fail(ErrorKind::Mismatch, "teacher feature map is empty");
  const auto proj = project_points(rig, frame);
  const std::uint32_t w = rig.intrinsics.width, h = rig.intrinsics.height;
  DistillSample s;
  s.points = frame.points;
  std::vector<float> rows;
  std::vector<float> v(teacher.channels);
  for (std::size_t i = 0; i < proj.points.size(); ++i) {
    const auto& p = proj.points[i];
    if (!p.valid) continue;
    tg::bilinear_sample(teacher, h, w, static_cast<std::uint32_t>(p.py), static_cast<std::uint32_t>(p.px), v);
    double ss = 0.0;
    for (float x : v) ss += double(x) * double(x);
    const double n = std::sqrt(ss);
    if (n < tg::kNormFloor) continue;
    s.target_rows.push_back(static_cast<std::uint32_t>(i));
    for (float x : v) rows.push_back(static_cast<float>(double(x) / n));
  }
  s.targets = Tensor<float>::from({s.target_rows.size(), teacher.channels}, std::move(rows));
  return s;
}

std::string report_to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["seed"] = r.seed;
  j["config_fingerprint"] = hex64(r.fingerprint);
  j["frames"] = r.frames;
  j["supervised_points"] = r.supervised_points;
  j["epochs"] = r.epoch_loss.size();
  j["epoch_loss"] = r.epoch_loss;
  j["skipped_batches"] = r.skipped_batches;
  j["checkpoint"] = r.checkpoint;
  return j.dump(2) + "\n";
}

std::string timing_to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["stage"] = r.stage;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2) + "\n";
}

std::vector<double> layer_lr_multipliers(std::uint32_t depth, double decay) {
  const std::uint32_t layers = depth + 2;
  std::vector<double> out(layers);
  for (std::uint32_t l = 0; l < layers; ++l) out[l] = std::pow(decay, double(layers - 1 - l));
  return out;
}

TrainResult distill(std::span<const DistillSample> samples, const RunConfig& cfg) {
  const auto scfg = StudentConfig::from(cfg);
  std::uint64_t targets = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.targets.rows() != s.target_rows.size() || (s.targets.rows() > 0 && s.targets.cols() != scfg.teacher_dim))
      fail(ErrorKind::Mismatch, "distill: sample " + std::to_string(i) + " teacher targets do not match teacher_dim " +
                                    std::to_string(scfg.teacher_dim));
    if (!s.target_rows.empty() && s.target_rows.back() >= s.points.size())
      fail(ErrorKind::Consistency, "distill: sample " + std::to_string(i) + " target row out of range");
    targets += s.target_rows.size();
  }
  if (cfg.distill.epochs > 0 && targets == 0)
    fail(ErrorKind::Precondition, "distill: no point of any frame projects onto a teacher pixel");

  TrainResult result;
  result.checkpoint.config = scfg;
  result.checkpoint.params = init_params<float>(scfg, cfg.seed);
  auto& params = result.checkpoint.params;
  auto opt = tg::adamw_init<float>(params.tensors());

  LoopSpec spec{"distill", kDistillTag, cfg.distill.epochs, cfg.distill.batch, {}, {}};
  spec.hyper.lr = cfg.distill.lr;
  spec.hyper.weight_decay = cfg.distill.weight_decay;
  spec.lr_scale = group_scale(scfg, ParamGroup::Classifier);
  for (auto& v : spec.lr_scale) v = 1.0 - v;

  const bool per_batch = cfg.distill.pooling == LossPooling::PerBatch;
  auto batch_fn = [&](std::span<const std::size_t> batch, std::uint32_t epoch,
                      StudentParams<float>& grads) -> std::optional<double> {
    std::size_t total = 0, frames_with = 0;
    for (auto i : batch) {
      total += samples[i].target_rows.size();
      frames_with += samples[i].target_rows.empty() ? 0 : 1;
    }
    if (total == 0) return std::nullopt;
    double loss = 0.0;
    for (auto i : batch) {
      const auto& s = samples[i];
      if (s.target_rows.empty()) continue;
      const auto points = cfg.distill.augment_yaw ? rotate_yaw(s.points, yaw_angle(cfg.seed, kDistillTag, epoch, i))
                                                  : s.points;
      ForwardCache<float> cache;
      const auto feats = forward(params, scfg, points, &cache);
      const auto sel = gather_rows(feats, s.target_rows);
      HeadCache<float> head;
      const auto out = distill_head(params, sel, &head);
      const double denom = per_batch ? double(total) : double(s.target_rows.size()) * double(frames_with);
      const auto l = tg::distill_loss(out, s.targets, denom);
      loss += l.loss;
      const auto dsel = distill_head_backward(params, sel, head, l.grad, grads);
      backward(params, scfg, cache, scatter_rows(dsel, s.target_rows, s.points.size()), grads);
    }
    return loss;
  };
  result.report = run_loop(params, opt, scfg, samples.size(), spec, cfg.seed, batch_fn);
  result.report.supervised_points = targets;
  result.checkpoint.optimizer = std::move(opt);
  return result;
}

TrainResult linear_probe(const Checkpoint& ckpt, std::span<const LabeledSample> samples, const RunConfig& cfg) {
  const auto& scfg = ckpt.config;
  check_samples(samples, scfg.n_classes, "probe");

  // The backbone is frozen, so its features are computed once.
  struct Frozen {
    Tensor<float> feats;
    std::vector<std::uint16_t> labels;
  };
  std::vector<Frozen> frozen(samples.size());
  std::uint64_t used = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::vector<std::uint32_t> rows;
    for (std::size_t k = 0; k < s.labels.size(); ++k)
      if (s.labels[k] != kIgnoreLabel) {
        rows.push_back(static_cast<std::uint32_t>(k));
        frozen[i].labels.push_back(s.labels[k]);
      }
    used += rows.size();
    if (!rows.empty()) frozen[i].feats = gather_rows(forward(ckpt.params, scfg, s.points), rows);
  }

  TrainResult result;
  result.checkpoint.config = scfg;
  result.checkpoint.params = ckpt.params;
  auto& params = result.checkpoint.params;
  auto opt = tg::adamw_init<float>(params.tensors());

  LoopSpec spec{"probe", kProbeTag, cfg.probe.epochs, cfg.probe.batch, {}, group_scale(scfg, ParamGroup::Classifier)};
  spec.hyper.lr = cfg.probe.lr;
  spec.hyper.weight_decay = cfg.probe.weight_decay;

  auto batch_fn = [&](std::span<const std::size_t> batch, std::uint32_t,
                      StudentParams<float>& grads) -> std::optional<double> {
    std::size_t total = 0;
    for (auto i : batch) total += frozen[i].labels.size();
    if (total == 0) return std::nullopt;
    double loss = 0.0;
    for (auto i : batch) {
      const auto& f = frozen[i];
      if (f.labels.empty()) continue;
      const auto logits = classify_head(params, f.feats);
      const auto l = tg::cross_entropy(logits, f.labels, kIgnoreLabel, double(total));
      loss += l.loss;
      classify_head_backward(params, f.feats, l.grad, grads, false);
    }
    return loss;
  };
  result.report = run_loop(params, opt, scfg, samples.size(), spec, cfg.seed, batch_fn);
  result.report.supervised_points = used;
  result.checkpoint.optimizer = std::move(opt);
  return result;
}

TrainResult finetune(const Checkpoint& ckpt, std::span<const LabeledSample> samples, const RunConfig& cfg) {
  const auto& scfg = ckpt.config;
  check_samples(samples, scfg.n_classes, "finetune");
  std::uint64_t used = 0;
  for (const auto& s : samples) used += count_used(s);

  TrainResult result;
  result.checkpoint.config = scfg;
  result.checkpoint.params = ckpt.params;
  auto& params = result.checkpoint.params;
  auto opt = tg::adamw_init<float>(params.tensors());

  LoopSpec spec{"finetune", kFinetuneTag, cfg.finetune.epochs, cfg.finetune.batch, {}, {}};
  spec.hyper.lr = cfg.finetune.lr;
  spec.hyper.weight_decay = cfg.finetune.weight_decay;
  const auto mult = layer_lr_multipliers(scfg.depth, cfg.finetune.layer_decay);
  for (const auto& info : param_layout(scfg))
    spec.lr_scale.push_back(info.group == ParamGroup::DistillHead ? 0.0 : mult[info.stack_index]);

  auto batch_fn = [&](std::span<const std::size_t> batch, std::uint32_t epoch,
                      StudentParams<float>& grads) -> std::optional<double> {
    std::uint64_t total = 0;
    for (auto i : batch) total += count_used(samples[i]);
    if (total == 0) return std::nullopt;
    double loss = 0.0;
    for (auto i : batch) {
      const auto& s = samples[i];
      if (count_used(s) == 0) continue;
      const auto points = cfg.finetune.augment_yaw
                              ? rotate_yaw(s.points, yaw_angle(cfg.seed, kFinetuneTag, epoch, i))
                              : s.points;
      ForwardCache<float> cache;
      const auto feats = forward(params, scfg, points, &cache);
      const auto logits = classify_head(params, feats);
      const auto l = tg::cross_entropy(logits, s.labels, kIgnoreLabel, double(total));
      loss += l.loss;
      const auto dfeats = classify_head_backward(params, feats, l.grad, grads, true);
      backward(params, scfg, cache, *dfeats, grads);
    }
    return loss;
  };
  result.report = run_loop(params, opt, scfg, samples.size(), spec, cfg.seed, batch_fn);
  result.report.supervised_points = used;
  result.checkpoint.optimizer = std::move(opt);
  return result;
}

std::vector<std::uint16_t> predict(const Checkpoint& ckpt, std::span<const Point> points,
                                   std::optional<std::uint64_t> expected_fingerprint) {
  if (expected_fingerprint && *expected_fingerprint != ckpt.config.fingerprint())
    fail(ErrorKind::Mismatch, "checkpoint config fingerprint " + hex64(ckpt.config.fingerprint()) +
                                  " does not match expected " + hex64(*expected_fingerprint));
  if (points.empty()) return {};
  const auto logits = classify_head(ckpt.params, forward(ckpt.params, ckpt.config, points));
  std::vector<std::uint16_t> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    out[i] = static_cast<std::uint16_t>(tg::argmax(logits.row(i)));
  return out;
}

ConfusionMatrix evaluate(const Checkpoint& ckpt, std::span<const LabeledSample> samples) {
  ConfusionMatrix cm(static_cast<std::uint16_t>(ckpt.config.n_classes));
  for (const auto& s : samples) cm.accumulate(s.labels, predict(ckpt, s.points));
  return cm;
}

}  // namespace frameseg
