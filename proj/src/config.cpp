#include "frameseg/config.hpp"

#include <json.hpp>

#include "frameseg/error.hpp"
#include "frameseg/frameio.hpp"

namespace frameseg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
void read_opt(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::InvalidArgument, "config key '" + where + key + "' has the wrong type");
  }
}

const json& section(const json& root, const char* key) {
  static const json empty = json::object();
  if (!root.contains(key)) return empty;
  const auto& s = root.at(key);
  if (!s.is_object()) fail(ErrorKind::InvalidArgument, std::string("config key '") + key + "' must be an object");
  return s;
}

RunConfig from_json(const json& root) {
  if (!root.is_object()) fail(ErrorKind::InvalidArgument, "run config must be a JSON object");
  RunConfig cfg;
  read_opt(root, "seed", cfg.seed, "");
  read_opt(root, "classes", cfg.classes, "");
  read_opt(root, "ignore_id", cfg.ignore_id, "");
  read_opt(root, "teacher_dim", cfg.teacher_dim, "");
  read_opt(root, "class_names", cfg.class_names, "");
  read_opt(root, "pseudo_ignore_classes", cfg.pseudo_ignore_classes, "");

  const auto& st = section(root, "student");
  read_opt(st, "embed_dim", cfg.student.embed_dim, "student.");
  read_opt(st, "depth", cfg.student.depth, "student.");
  read_opt(st, "grid_cells", cfg.student.grid_cells, "student.");
  read_opt(st, "cell_size_m", cfg.student.cell_size_m, "student.");

  const auto& di = section(root, "distill");
  read_opt(di, "epochs", cfg.distill.epochs, "distill.");
  read_opt(di, "lr", cfg.distill.lr, "distill.");
  read_opt(di, "weight_decay", cfg.distill.weight_decay, "distill.");
  read_opt(di, "batch", cfg.distill.batch, "distill.");
  read_opt(di, "augment_yaw", cfg.distill.augment_yaw, "distill.");
  if (di.contains("pooling")) {
    std::string pooling;
    read_opt(di, "pooling", pooling, "distill.");
    if (pooling == "per_batch") cfg.distill.pooling = LossPooling::PerBatch;
    else if (pooling == "per_frame") cfg.distill.pooling = LossPooling::PerFrame;
    else fail(ErrorKind::InvalidArgument, "distill.pooling must be \"per_batch\" or \"per_frame\"");
  }

  const auto& pr = section(root, "probe");
  read_opt(pr, "epochs", cfg.probe.epochs, "probe.");
  read_opt(pr, "lr", cfg.probe.lr, "probe.");
  read_opt(pr, "weight_decay", cfg.probe.weight_decay, "probe.");
  read_opt(pr, "batch", cfg.probe.batch, "probe.");

  const auto& ft = section(root, "finetune");
  read_opt(ft, "epochs", cfg.finetune.epochs, "finetune.");
  read_opt(ft, "lr", cfg.finetune.lr, "finetune.");
  read_opt(ft, "layer_decay", cfg.finetune.layer_decay, "finetune.");
  read_opt(ft, "weight_decay", cfg.finetune.weight_decay, "finetune.");
  read_opt(ft, "batch", cfg.finetune.batch, "finetune.");
  read_opt(ft, "augment_yaw", cfg.finetune.augment_yaw, "finetune.");

  read_opt(section(root, "sync"), "max_dt_ns", cfg.sync.max_dt_ns, "sync.");

  const auto& ts = section(root, "teacher_size");
  read_opt(ts, "w", cfg.teacher_size.w, "teacher_size.");
  read_opt(ts, "h", cfg.teacher_size.h, "teacher_size.");

  const auto& sy = section(root, "synth");
  auto& s = cfg.synth;
  read_opt(sy, "frames", s.frames, "synth.");
  read_opt(sy, "rings", s.rings, "synth.");
  read_opt(sy, "azimuths", s.azimuths, "synth.");
  read_opt(sy, "elevation_min_deg", s.elevation_min_deg, "synth.");
  read_opt(sy, "elevation_max_deg", s.elevation_max_deg, "synth.");
  read_opt(sy, "max_range_m", s.max_range_m, "synth.");
  read_opt(sy, "range_noise_m", s.range_noise_m, "synth.");
  read_opt(sy, "teacher_noise", s.teacher_noise, "synth.");
  read_opt(sy, "jitter_ns", s.jitter_ns, "synth.");
  read_opt(sy, "min_obstacles", s.min_obstacles, "synth.");
  read_opt(sy, "max_obstacles", s.max_obstacles, "synth.");
  read_opt(sy, "camera_width", s.camera_width, "synth.");
  read_opt(sy, "camera_height", s.camera_height, "synth.");
  read_opt(sy, "camera_fx", s.camera_fx, "synth.");
  read_opt(sy, "camera_fy", s.camera_fy, "synth.");

  validate(cfg);
  return cfg;
}

ordered_json to_json(const RunConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["classes"] = cfg.classes;
  j["ignore_id"] = cfg.ignore_id;
  j["teacher_dim"] = cfg.teacher_dim;
  j["class_names"] = cfg.class_names;
  j["pseudo_ignore_classes"] = cfg.pseudo_ignore_classes;
  j["student"] = {{"embed_dim", cfg.student.embed_dim},
                  {"depth", cfg.student.depth},
                  {"grid_cells", cfg.student.grid_cells},
                  {"cell_size_m", cfg.student.cell_size_m}};
  j["distill"] = {{"epochs", cfg.distill.epochs},
                  {"lr", cfg.distill.lr},
                  {"weight_decay", cfg.distill.weight_decay},
                  {"batch", cfg.distill.batch},
                  {"pooling", cfg.distill.pooling == LossPooling::PerBatch ? "per_batch" : "per_frame"},
                  {"augment_yaw", cfg.distill.augment_yaw}};
  j["probe"] = {{"epochs", cfg.probe.epochs},
                {"lr", cfg.probe.lr},
                {"weight_decay", cfg.probe.weight_decay},
                {"batch", cfg.probe.batch}};
  j["finetune"] = {{"epochs", cfg.finetune.epochs},
                   {"lr", cfg.finetune.lr},
                   {"layer_decay", cfg.finetune.layer_decay},
                   {"weight_decay", cfg.finetune.weight_decay},
                   {"batch", cfg.finetune.batch},
                   {"augment_yaw", cfg.finetune.augment_yaw}};
  j["sync"] = {{"max_dt_ns", cfg.sync.max_dt_ns}};
  j["teacher_size"] = {{"w", cfg.teacher_size.w}, {"h", cfg.teacher_size.h}};
  const auto& s = cfg.synth;
  j["synth"] = {{"frames", s.frames},
                {"rings", s.rings},
                {"azimuths", s.azimuths},
                {"elevation_min_deg", s.elevation_min_deg},
                {"elevation_max_deg", s.elevation_max_deg},
                {"max_range_m", s.max_range_m},
                {"range_noise_m", s.range_noise_m},
                {"teacher_noise", s.teacher_noise},
                {"jitter_ns", s.jitter_ns},
                {"min_obstacles", s.min_obstacles},
                {"max_obstacles", s.max_obstacles},
                {"camera_width", s.camera_width},
                {"camera_height", s.camera_height},
                {"camera_fx", s.camera_fx},
                {"camera_fy", s.camera_fy}};
  return j;
}

json parse_or_throw(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::InvalidArgument, std::string(what) + " is not valid JSON: " + e.what());
  }
}

}  // namespace

void validate(const RunConfig& cfg) {
  auto check = [](bool ok, const char* msg) {
    if (!ok) fail(ErrorKind::InvalidArgument, msg);
  };
  check(cfg.classes >= 1 && cfg.classes < kIgnoreLabel, "classes must be in [1, 65535)");
  check(cfg.ignore_id == kIgnoreLabel, "ignore_id is fixed at 65535");
  check(cfg.teacher_dim >= 1, "teacher_dim must be >= 1");
  check(cfg.student.embed_dim >= 1, "student.embed_dim must be >= 1");
  check(cfg.student.depth >= 1, "student.depth must be >= 1");
  check(cfg.student.grid_cells >= 2 && cfg.student.grid_cells <= 4096, "student.grid_cells must be in [2, 4096]");
  check(cfg.student.cell_size_m > 0.0, "student.cell_size_m must be > 0");
  check(cfg.distill.batch >= 1 && cfg.probe.batch >= 1 && cfg.finetune.batch >= 1, "batch sizes must be >= 1");
  check(cfg.distill.lr > 0.0 && cfg.distill.weight_decay >= 0.0, "distill.lr must be > 0 and weight_decay >= 0");
  check(cfg.probe.lr > 0.0 && cfg.probe.weight_decay >= 0.0, "probe.lr must be > 0 and weight_decay >= 0");
  check(cfg.finetune.lr > 0.0 && cfg.finetune.weight_decay >= 0.0, "finetune.lr must be > 0 and weight_decay >= 0");
  check(cfg.finetune.layer_decay > 0.0 && cfg.finetune.layer_decay <= 1.0, "finetune.layer_decay must be in (0, 1]");
  check(cfg.sync.max_dt_ns > 0, "sync.max_dt_ns must be > 0");
  check(cfg.teacher_size.w >= 1 && cfg.teacher_size.h >= 1, "teacher_size must be >= 1");
  const auto& s = cfg.synth;
  check(s.frames >= 1, "synth.frames must be >= 1");
  check(s.rings >= 1 && s.azimuths >= 1, "synth.rings and synth.azimuths must be >= 1");
  check(s.elevation_min_deg > -90.0 && s.elevation_max_deg < 90.0 && s.elevation_min_deg <= s.elevation_max_deg,
        "synth elevation span must lie within (-90, 90) degrees");
  check(s.max_range_m > 0.0, "synth.max_range_m must be > 0");
  check(s.range_noise_m >= 0.0 && s.teacher_noise >= 0.0, "synth noise levels must be >= 0");
  check(s.jitter_ns >= 0, "synth.jitter_ns must be >= 0");
  check(s.min_obstacles <= s.max_obstacles, "synth.min_obstacles must be <= synth.max_obstacles");
  check(s.camera_width >= 1 && s.camera_height >= 1 && s.camera_fx > 0.0 && s.camera_fy > 0.0,
        "synth camera parameters must be positive");
}

RunConfig parse_run_config(const std::string& json_text) {
  return from_json(parse_or_throw(json_text, "run config"));
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return parse_run_config(read_text_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

RunConfig merge_run_config(const RunConfig& cfg, const std::string& json_patch) {
  json base = json::parse(to_json(cfg).dump());
  base.merge_patch(parse_or_throw(json_patch, "config override"));
  return from_json(base);
}

std::string run_config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace frameseg
