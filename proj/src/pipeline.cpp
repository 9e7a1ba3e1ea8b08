#include "frameseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "frameseg/error.hpp"
#include "frameseg/geometry.hpp"
#include "frameseg/labelspace.hpp"
#include "frameseg/synthgen.hpp"

namespace frameseg::pipeline {

using nlohmann::ordered_json;

namespace {

/// Runs `fn`, prefixing any Error message with the record or file it concerns.
template <typename Fn>
auto with_context(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), what + ": " + e.what());
  }
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  const auto b = fs::weakly_canonical(base.empty() ? fs::path(".") : base);
  return fs::weakly_canonical(p).lexically_relative(b).generic_string();
}

fs::path manifest_dir(const fs::path& manifest) {
  return manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, dir.string() + ": cannot create directory: " + ec.message());
}

std::vector<std::string> target_names(const RunConfig& cfg) {
  if (cfg.classes == kStructuralClassCount) return structural_class_names();
  if (cfg.class_names.size() == cfg.classes) return cfg.class_names;
  std::vector<std::string> out;
  for (std::uint32_t c = 0; c < cfg.classes; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

LabelMap real_label_map(const RunConfig& cfg) {
  if (cfg.classes == kStructuralClassCount)
    return builtin_structural_map(cfg.class_names, StructuralVariant::Real);
  return LabelMap::identity(static_cast<std::uint16_t>(cfg.classes));
}

LabelMap pseudo_label_map(const RunConfig& cfg) {
  if (cfg.classes == kStructuralClassCount)
    return builtin_structural_map(cfg.class_names, StructuralVariant::Pseudo, cfg.pseudo_ignore_classes);
  return LabelMap::identity(static_cast<std::uint16_t>(cfg.classes));
}

fs::path sibling(const fs::path& ckpt, const char* suffix) {
  return ckpt.parent_path() / (ckpt.stem().string() + suffix);
}

TrainOutputs save_training(TrainResult result, const fs::path& out_ckpt) {
  ensure_dir(out_ckpt.parent_path());
  result.report.checkpoint = out_ckpt.filename().string();
  save_checkpoint(result.checkpoint, out_ckpt);
  TrainOutputs out;
  out.report = std::move(result.report);
  out.checkpoint = out_ckpt;
  out.report_path = sibling(out_ckpt, ".report.json");
  out.timing_path = sibling(out_ckpt, ".timing.json");
  write_text_file(out.report_path, report_to_json(out.report));
  write_text_file(out.timing_path, timing_to_json(out.report));
  return out;
}

Checkpoint load_matching_checkpoint(const RunConfig& cfg, const fs::path& ckpt) {
  auto c = load_checkpoint(ckpt);
  const auto expected = StudentConfig::from(cfg);
  if (!(c.config == expected))
    fail(ErrorKind::Mismatch, ckpt.string() + ": checkpoint student config " + c.config.to_json() +
                                  " does not match the run config " + expected.to_json());
  return c;
}

std::vector<std::uint64_t> sorted_stems(const fs::path& dir, const char* ext, bool lidar) {
  std::vector<std::uint64_t> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ext) continue;
    if (lidar) {
      out.push_back(read_lidar_timestamp(entry.path()));
    } else {
      const auto ts = timestamp_from_filename(entry.path());
      if (!ts) fail(ErrorKind::Format, entry.path().string() + ": file name is not a timestamp");
      out.push_back(*ts);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

LabelSource parse_label_source(const std::string& text) {
  if (text == "pseudo") return LabelSource::Pseudo;
  if (text == "real") return LabelSource::Real;
  fail(ErrorKind::InvalidArgument, "labels must be \"pseudo\" or \"real\", got \"" + text + "\"");
}

// ---------------------------------------------------------------------------

SynthSummary synth(const RunConfig& cfg, const fs::path& out_dir) {
  const auto manifest = emit_dataset(cfg, out_dir);
  SynthSummary s;
  s.frames = manifest.records.size();
  for (const auto& r : manifest.records) {
    const auto path = manifest.resolve(r.lidar);
    s.points += with_context(path.string(), [&] { return read_lidar_frame(path).size(); });
  }
  s.manifest = out_dir / "manifest.jsonl";
  return s;
}

PairSummary pair(const fs::path& data_dir, std::int64_t max_dt_ns, const fs::path& out_manifest) {
  if (!fs::is_directory(data_dir / "lidar"))
    fail(ErrorKind::Io, (data_dir / "lidar").string() + ": no lidar directory");
  const auto lidar_ts = sorted_stems(data_dir / "lidar", ".lfrm", true);
  const auto image_ts = sorted_stems(data_dir / "images", ".ppm", false);
  for (std::size_t i = 1; i < lidar_ts.size(); ++i)
    if (lidar_ts[i] == lidar_ts[i - 1])
      fail(ErrorKind::Consistency, data_dir.string() + ": two lidar frames share timestamp " +
                                       std::to_string(lidar_ts[i]));
  const auto pairs = pair_frames(lidar_ts, image_ts, max_dt_ns);

  // Lidar files are named by their header timestamp.
  std::vector<fs::path> lidar_files;
  for (const auto& entry : fs::directory_iterator(data_dir / "lidar"))
    if (entry.is_regular_file() && entry.path().extension() == ".lfrm") lidar_files.push_back(entry.path());
  std::sort(lidar_files.begin(), lidar_files.end(),
            [](const fs::path& a, const fs::path& b) { return read_lidar_timestamp(a) < read_lidar_timestamp(b); });

  const auto base = manifest_dir(out_manifest);
  PairSummary s;
  s.lidar_frames = lidar_ts.size();
  s.images = image_ts.size();
  std::vector<ManifestRecord> records;
  for (const auto& p : pairs) {
    ManifestRecord rec;
    rec.lidar = relative_to(lidar_files[p.lidar_index], base);
    if (p.image_index) {
      const auto stem = std::to_string(image_ts[*p.image_index]);
      rec.image = relative_to(data_dir / "images" / (stem + ".ppm"), base);
      const auto mask = data_dir / "masks" / (stem + ".pgm");
      const auto feat = data_dir / "features" / (stem + ".fmap");
      if (fs::exists(mask)) rec.mask = relative_to(mask, base);
      if (fs::exists(feat)) rec.featmap = relative_to(feat, base);
      rec.dt_ns = p.dt_ns;
      ++s.paired;
      s.max_abs_dt_ns = std::max(s.max_abs_dt_ns, std::abs(p.dt_ns));
    }
    records.push_back(std::move(rec));
  }
  ensure_dir(out_manifest.parent_path());
  write_manifest(records, out_manifest);
  s.manifest = out_manifest;
  return s;
}

SplitSummary split(const fs::path& manifest, const fs::path& out_dir, std::array<double, 3> ratios) {
  const auto m = read_manifest(manifest);
  const auto parts = split_manifest(m.records, ratios);
  ensure_dir(out_dir);
  SplitSummary s;
  const char* names[3] = {"train.jsonl", "val.jsonl", "test.jsonl"};
  const std::vector<ManifestRecord>* sets[3] = {&parts.train, &parts.val, &parts.test};
  for (int i = 0; i < 3; ++i) {
    s.counts[i] = sets[i]->size();
    s.manifests[i] = out_dir / names[i];
    write_manifest(rebase_manifest(*sets[i], m.base_dir, out_dir), s.manifests[i]);
  }
  return s;
}

ProjectSummary project(const fs::path& manifest, const fs::path& rig_path, const fs::path& out_dir,
                       std::size_t limit) {
  const auto m = read_manifest(manifest);
  const auto rig = load_rig_config(rig_path);
  ensure_dir(out_dir);
  ProjectSummary s;
  for (const auto& rec : m.records) {
    if (!rec.image) continue;
    if (limit && s.overlays >= limit) break;
    with_context(rec.lidar, [&] {
      const auto frame = read_lidar_frame(m.resolve(rec.lidar));
      const auto image = read_image(m.resolve(*rec.image));
      const auto proj = project_points(rig, frame);
      std::vector<Rgb> colors(frame.size());
      for (std::size_t i = 0; i < frame.size(); ++i) {
        if (frame.labels) {
          colors[i] = label_color((*frame.labels)[i]);
        } else {
          const double d = proj.points[i].valid ? proj.points[i].depth : 0.0;
          const auto g = static_cast<std::uint8_t>(255.0 * std::clamp(1.0 - d / 15.0, 0.0, 1.0));
          colors[i] = {255, g, 0};
        }
      }
      write_image(render_overlay(image, proj, colors),
                  out_dir / (fs::path(rec.lidar).stem().string() + ".overlay.ppm"));
      s.points += frame.size();
      s.valid_points += proj.valid_count();
    });
    ++s.overlays;
  }
  return s;
}

PseudolabelSummary pseudolabel(const RunConfig& cfg, const fs::path& manifest, const fs::path& rig_path,
                               const PseudolabelOptions& options) {
  auto m = read_manifest(manifest);
  const auto rig = load_rig_config(rig_path);
  const auto map = options.label_map ? load_label_map(*options.label_map, static_cast<std::uint16_t>(cfg.classes))
                                     : pseudo_label_map(cfg);
  const auto gt_map = real_label_map(cfg);
  const fs::path out_manifest = options.out_manifest.value_or(manifest);
  const auto out_base = manifest_dir(out_manifest);
  TransferOptions transfer;
  transfer.depth_filter = options.depth_filter;
  transfer.depth_tolerance_m = options.depth_tolerance_m;

  PseudolabelSummary s;
  std::size_t agree = 0;
  // Records keep their other fields; label files live under <out manifest dir>/labels.
  auto records = rebase_manifest(m.records, m.base_dir, out_base);
  for (std::size_t r = 0; r < m.records.size(); ++r) {
    const auto& rec = m.records[r];
    if (!rec.image || !rec.mask) continue;
    with_context(rec.lidar, [&] {
      const auto frame = read_lidar_frame(m.resolve(rec.lidar));
      const auto mask = remap_mask(read_mask(m.resolve(*rec.mask)), map);
      const auto labels = transfer_labels(project_points(rig, frame), mask, transfer);
      const auto rel = fs::path("labels") / (fs::path(rec.lidar).stem().string() + ".lbl");
      ensure_dir(out_base / "labels");
      write_point_labels(labels, out_base / rel);
      records[r].labels = rel.generic_string();
      ++s.frames;
      s.points += labels.size();
      std::optional<std::vector<std::uint16_t>> gt;
      if (frame.labels) gt = remap_labels(*frame.labels, gt_map);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kIgnoreLabel) continue;
        ++s.labeled_points;
        if (gt && (*gt)[i] != kIgnoreLabel) {
          ++s.gt_compared;
          if ((*gt)[i] == labels[i]) ++agree;
        }
      }
    });
  }
  if (s.frames == 0) fail(ErrorKind::Precondition, manifest.string() + ": no record has both an image and a mask");
  if (s.gt_compared) s.gt_agreement = double(agree) / double(s.gt_compared);
  write_manifest(records, out_manifest);
  s.manifest = out_manifest;
  return s;
}

// ---------------------------------------------------------------------------

std::vector<DistillSample> load_distill_samples(const PairManifest& m, const RigConfig& rig) {
  std::vector<DistillSample> out;
  for (const auto& rec : m.records) {
    if (!rec.image) continue;
    if (!rec.featmap)
      fail(ErrorKind::Precondition, rec.lidar + ": paired record has no teacher feature map");
    out.push_back(with_context(rec.lidar, [&] {
      return make_distill_sample(read_lidar_frame(m.resolve(rec.lidar)), rig, read_feature_map(m.resolve(*rec.featmap)));
    }));
  }
  if (out.empty()) fail(ErrorKind::Precondition, "manifest has no paired record to distill from");
  return out;
}

std::vector<LabeledSample> load_labeled_samples(const PairManifest& m, LabelSource source, const RunConfig& cfg) {
  const auto gt_map = real_label_map(cfg);
  std::vector<LabeledSample> out;
  for (const auto& rec : m.records) {
    if (source == LabelSource::Pseudo && !rec.labels) {
      if (!rec.image) continue;  // unpaired frames never get pseudo-labels
      fail(ErrorKind::Precondition, rec.lidar + ": record has no pseudo-labels (run pseudolabel first)");
    }
    out.push_back(with_context(rec.lidar, [&] {
      auto frame = read_lidar_frame(m.resolve(rec.lidar));
      LabeledSample s;
      if (source == LabelSource::Pseudo) {
        s.labels = with_context(*rec.labels, [&] { return read_point_labels(m.resolve(*rec.labels)); });
        if (s.labels.size() != frame.size())
          fail(ErrorKind::Mismatch, "pseudo-label count " + std::to_string(s.labels.size()) +
                                        " does not match point count " + std::to_string(frame.size()));
      } else {
        if (!frame.labels) fail(ErrorKind::Precondition, "lidar frame has no ground-truth label block");
        s.labels = remap_labels(*frame.labels, gt_map);
      }
      s.points = std::move(frame.points);
      return s;
    }));
  }
  if (out.empty()) fail(ErrorKind::Precondition, "manifest has no labeled record");
  return out;
}

TrainOutputs distill(const RunConfig& cfg, const fs::path& manifest, const fs::path& rig, const fs::path& out_ckpt) {
  const auto m = read_manifest(manifest);
  const auto samples = load_distill_samples(m, load_rig_config(rig));
  return save_training(frameseg::distill(samples, cfg), out_ckpt);
}

TrainOutputs probe(const RunConfig& cfg, const fs::path& ckpt, const fs::path& manifest, LabelSource source,
                   const fs::path& out_ckpt) {
  const auto c = load_matching_checkpoint(cfg, ckpt);
  const auto samples = load_labeled_samples(read_manifest(manifest), source, cfg);
  return save_training(linear_probe(c, samples, cfg), out_ckpt);
}

TrainOutputs finetune(const RunConfig& cfg, const fs::path& ckpt, const fs::path& manifest, LabelSource source,
                      const fs::path& out_ckpt) {
  const auto c = load_matching_checkpoint(cfg, ckpt);
  const auto samples = load_labeled_samples(read_manifest(manifest), source, cfg);
  return save_training(frameseg::finetune(c, samples, cfg), out_ckpt);
}

EvalOutputs eval(const RunConfig& cfg, const fs::path& ckpt, const fs::path& manifest, LabelSource source,
                 const std::optional<fs::path>& out_prefix) {
  const auto c = load_matching_checkpoint(cfg, ckpt);
  const auto samples = load_labeled_samples(read_manifest(manifest), source, cfg);
  const auto cm = evaluate(c, samples);
  if (cm.total() == 0)
    fail(ErrorKind::Precondition, manifest.string() + ": every reference label is ignored, nothing to score");
  EvalOutputs out;
  out.scores = scores(cm);
  const auto names = target_names(cfg);
  out.text = format_scores_table(out.scores, names);
  out.csv = format_scores_csv(out.scores, names);
  out.json = format_scores_json(out.scores, names);
  if (out_prefix) {
    ensure_dir(out_prefix->parent_path());
    write_text_file(out_prefix->string() + ".txt", out.text);
    write_text_file(out_prefix->string() + ".csv", out.csv);
    write_text_file(out_prefix->string() + ".json", out.json);
  }
  return out;
}

BenchOutputs bench(const RunConfig& cfg, const std::vector<std::uint32_t>& depths, std::uint32_t frames,
                   std::uint32_t repeats, const std::optional<fs::path>& out_prefix) {
  if (depths.empty()) fail(ErrorKind::InvalidArgument, "bench needs at least one depth");
  if (frames == 0 || repeats == 0) fail(ErrorKind::InvalidArgument, "bench frames and repeats must be >= 1");
  std::vector<LidarFrame> scans;
  std::uint64_t points = 0;
  for (std::uint32_t i = 0; i < frames; ++i) {
    scans.push_back(synthesize_frame(cfg, i).lidar);
    points += scans.back().size();
  }
  BenchOutputs out;
  for (auto depth : depths) {
    RunConfig c = cfg;
    c.student.depth = depth;
    Checkpoint ckpt;
    ckpt.config = StudentConfig::from(c);
    ckpt.params = init_params<float>(ckpt.config, cfg.seed);
    std::size_t sink = predict(ckpt, scans.front().points).size();  // warm-up
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& s : scans) sink += predict(ckpt, s.points).size();
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    if (sink == 0) fail(ErrorKind::Internal, "bench produced no predictions");
    BenchRow row;
    row.depth = depth;
    row.hz = double(frames) / best;
    row.ms_per_frame = 1000.0 * best / double(frames);
    row.points_per_frame = points / frames;
    row.memory_bytes = inference_memory_bytes(ckpt.config, row.points_per_frame);
    out.rows.push_back(row);
  }

  char line[160];
  out.text = "depth        Hz  ms/frame  points/frame  memory(MiB)\n";
  out.csv = "depth,hz,ms_per_frame,points_per_frame,memory_bytes\n";
  ordered_json rows = ordered_json::array();
  for (const auto& r : out.rows) {
    std::snprintf(line, sizeof line, "%5u  %8.2f  %8.3f  %12llu  %11.2f\n", r.depth, r.hz, r.ms_per_frame,
                  static_cast<unsigned long long>(r.points_per_frame), double(r.memory_bytes) / (1024.0 * 1024.0));
    out.text += line;
    std::snprintf(line, sizeof line, "%u,%.4f,%.4f,%llu,%llu\n", r.depth, r.hz, r.ms_per_frame,
                  static_cast<unsigned long long>(r.points_per_frame),
                  static_cast<unsigned long long>(r.memory_bytes));
    out.csv += line;
    rows.push_back({{"depth", r.depth},
                    {"hz", r.hz},
                    {"ms_per_frame", r.ms_per_frame},
                    {"points_per_frame", r.points_per_frame},
                    {"memory_bytes", r.memory_bytes}});
  }
  out.json = ordered_json{{"rows", rows}}.dump(2) + "\n";
  if (out_prefix) {
    ensure_dir(out_prefix->parent_path());
    write_text_file(out_prefix->string() + ".txt", out.text);
    write_text_file(out_prefix->string() + ".csv", out.csv);
    write_text_file(out_prefix->string() + ".json", out.json);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_json(const SynthSummary& s) {
  return ordered_json{{"frames", s.frames}, {"points", s.points}, {"manifest", s.manifest.generic_string()}}.dump(2) +
         "\n";
}

std::string to_json(const PairSummary& s) {
  return ordered_json{{"lidar_frames", s.lidar_frames},
                      {"images", s.images},
                      {"paired", s.paired},
                      {"max_abs_dt_ns", s.max_abs_dt_ns},
                      {"manifest", s.manifest.generic_string()}}
             .dump(2) +
         "\n";
}

std::string to_json(const SplitSummary& s) {
  ordered_json j;
  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i)
    j[names[i]] = {{"records", s.counts[i]}, {"manifest", s.manifests[i].generic_string()}};
  return j.dump(2) + "\n";
}

std::string to_json(const ProjectSummary& s) {
  return ordered_json{{"overlays", s.overlays}, {"points", s.points}, {"valid_points", s.valid_points}}.dump(2) + "\n";
}

std::string to_json(const PseudolabelSummary& s) {
  ordered_json j{{"frames", s.frames}, {"points", s.points}, {"labeled_points", s.labeled_points}};
  j["gt_agreement"] = s.gt_agreement ? ordered_json(*s.gt_agreement) : ordered_json(nullptr);
  j["gt_compared"] = s.gt_compared;
  j["manifest"] = s.manifest.generic_string();
  return j.dump(2) + "\n";
}

std::string to_json(const TrainOutputs& s) {
  ordered_json j{{"stage", s.report.stage},
                 {"checkpoint", s.checkpoint.generic_string()},
                 {"report", s.report_path.generic_string()},
                 {"timing", s.timing_path.generic_string()},
                 {"epochs", s.report.epoch_loss.size()},
                 {"final_loss", s.report.epoch_loss.empty() ? ordered_json(nullptr)
                                                            : ordered_json(s.report.epoch_loss.back())},
                 {"wall_seconds", s.report.wall_seconds}};
  return j.dump(2) + "\n";
}

}  // namespace frameseg::pipeline
