#include "frameseg/frameseg.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include <json.hpp>

#include "frameseg/config.hpp"
#include "frameseg/error.hpp"
#include "frameseg/pipeline.hpp"
#include "frameseg/student.hpp"
#include "frameseg/trainer.hpp"

struct fseg_config {
  frameseg::RunConfig cfg;
};

struct fseg_checkpoint {
  frameseg::Checkpoint ckpt;
};

namespace {

using frameseg::ErrorKind;
namespace pl = frameseg::pipeline;

thread_local std::string g_last_error;

fseg_status to_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return FSEG_ERR_FORMAT;
    case ErrorKind::Truncation: return FSEG_ERR_TRUNCATION;
    case ErrorKind::Consistency: return FSEG_ERR_CONSISTENCY;
    case ErrorKind::Io: return FSEG_ERR_IO;
    case ErrorKind::InvalidArgument: return FSEG_ERR_INVALID_ARGUMENT;
    case ErrorKind::Precondition: return FSEG_ERR_PRECONDITION;
    case ErrorKind::Mismatch: return FSEG_ERR_MISMATCH;
    case ErrorKind::Internal: return FSEG_ERR_INTERNAL;
  }
  return FSEG_ERR_INTERNAL;
}

template <typename Fn>
fseg_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return FSEG_OK;
  } catch (const frameseg::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FSEG_ERR_INTERNAL;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return FSEG_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return FSEG_ERR_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (!p) frameseg::fail(ErrorKind::InvalidArgument, std::string(name) + " must not be NULL");
}

char* dup(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

pl::LabelSource source(fseg_labels labels) {
  switch (labels) {
    case FSEG_LABELS_PSEUDO: return pl::LabelSource::Pseudo;
    case FSEG_LABELS_REAL: return pl::LabelSource::Real;
  }
  frameseg::fail(ErrorKind::InvalidArgument, "unknown label source");
}

}  // namespace

extern "C" {

const char* fseg_version(void) { return "0.1.0"; }

const char* fseg_last_error(void) { return g_last_error.c_str(); }

const char* fseg_status_name(fseg_status status) {
  switch (status) {
    case FSEG_OK: return "ok";
    case FSEG_ERR_FORMAT: return "format";
    case FSEG_ERR_TRUNCATION: return "truncation";
    case FSEG_ERR_CONSISTENCY: return "consistency";
    case FSEG_ERR_IO: return "io";
    case FSEG_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case FSEG_ERR_PRECONDITION: return "precondition";
    case FSEG_ERR_MISMATCH: return "mismatch";
    case FSEG_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int fseg_exit_code(fseg_status status) {
  switch (status) {
    case FSEG_OK: return 0;
    case FSEG_ERR_CONSISTENCY:
    case FSEG_ERR_PRECONDITION:
    case FSEG_ERR_MISMATCH: return 1;
    case FSEG_ERR_FORMAT:
    case FSEG_ERR_TRUNCATION:
    case FSEG_ERR_IO:
    case FSEG_ERR_INVALID_ARGUMENT: return 2;
    case FSEG_ERR_INTERNAL: return 3;
  }
  return 3;
}

void fseg_string_free(char* s) { std::free(s); }

fseg_status fseg_config_default(fseg_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new fseg_config{};
  });
}

fseg_status fseg_config_load(const char* path, fseg_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fseg_config{frameseg::load_run_config(path)};
  });
}

fseg_status fseg_config_merge(fseg_config* cfg, const char* json_patch) {
  return guarded([&] {
    require(cfg, "cfg");
    require(json_patch, "json_patch");
    cfg->cfg = frameseg::merge_run_config(cfg->cfg, json_patch);
  });
}

fseg_status fseg_config_to_json(const fseg_config* cfg, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_json, "out_json");
    *out_json = dup(frameseg::run_config_to_json(cfg->cfg));
  });
}

void fseg_config_free(fseg_config* cfg) { delete cfg; }

fseg_status fseg_synth(const fseg_config* cfg, const char* out_dir, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    emit(out_json, pl::to_json(pl::synth(cfg->cfg, out_dir)));
  });
}

fseg_status fseg_pair(const fseg_config* cfg, const char* data_dir, const char* out_manifest, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(data_dir, "data_dir");
    require(out_manifest, "out_manifest");
    emit(out_json, pl::to_json(pl::pair(data_dir, cfg->cfg.sync.max_dt_ns, out_manifest)));
  });
}

fseg_status fseg_split(const char* manifest, const char* out_dir, double train, double val, double test,
                       char** out_json) {
  return guarded([&] {
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    emit(out_json, pl::to_json(pl::split(manifest, out_dir, {train, val, test})));
  });
}

fseg_status fseg_project(const char* manifest, const char* rig, const char* out_dir, size_t limit, char** out_json) {
  return guarded([&] {
    require(manifest, "manifest");
    require(rig, "rig");
    require(out_dir, "out_dir");
    emit(out_json, pl::to_json(pl::project(manifest, rig, out_dir, limit)));
  });
}

fseg_status fseg_pseudolabel(const fseg_config* cfg, const char* manifest, const char* rig, const char* label_map,
                             int depth_filter, const char* out_manifest, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(manifest, "manifest");
    require(rig, "rig");
    pl::PseudolabelOptions opts;
    if (label_map) opts.label_map = label_map;
    if (out_manifest) opts.out_manifest = out_manifest;
    opts.depth_filter = depth_filter != 0;
    emit(out_json, pl::to_json(pl::pseudolabel(cfg->cfg, manifest, rig, opts)));
  });
}

fseg_status fseg_distill(const fseg_config* cfg, const char* manifest, const char* rig, const char* out_ckpt,
                         char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(manifest, "manifest");
    require(rig, "rig");
    require(out_ckpt, "out_ckpt");
    emit(out_json, pl::to_json(pl::distill(cfg->cfg, manifest, rig, out_ckpt)));
  });
}

fseg_status fseg_probe(const fseg_config* cfg, const char* ckpt, const char* manifest, fseg_labels labels,
                       const char* out_ckpt, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(ckpt, "ckpt");
    require(manifest, "manifest");
    require(out_ckpt, "out_ckpt");
    emit(out_json, pl::to_json(pl::probe(cfg->cfg, ckpt, manifest, source(labels), out_ckpt)));
  });
}

fseg_status fseg_finetune(const fseg_config* cfg, const char* ckpt, const char* manifest, fseg_labels labels,
                          const char* out_ckpt, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(ckpt, "ckpt");
    require(manifest, "manifest");
    require(out_ckpt, "out_ckpt");
    emit(out_json, pl::to_json(pl::finetune(cfg->cfg, ckpt, manifest, source(labels), out_ckpt)));
  });
}

fseg_status fseg_eval(const fseg_config* cfg, const char* ckpt, const char* manifest, fseg_labels labels,
                      const char* out_prefix, char** out_text, char** out_csv, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(ckpt, "ckpt");
    require(manifest, "manifest");
    std::optional<std::filesystem::path> prefix;
    if (out_prefix) prefix = out_prefix;
    const auto r = pl::eval(cfg->cfg, ckpt, manifest, source(labels), prefix);
    emit(out_text, r.text);
    emit(out_csv, r.csv);
    emit(out_json, r.json);
  });
}

fseg_status fseg_bench(const fseg_config* cfg, const uint32_t* depths, size_t n_depths, uint32_t frames,
                       uint32_t repeats, const char* out_prefix, char** out_text, char** out_csv, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    if (n_depths) require(depths, "depths");
    std::optional<std::filesystem::path> prefix;
    if (out_prefix) prefix = out_prefix;
    const auto r = pl::bench(cfg->cfg, std::vector<std::uint32_t>(depths, depths + n_depths), frames, repeats, prefix);
    emit(out_text, r.text);
    emit(out_csv, r.csv);
    emit(out_json, r.json);
  });
}

fseg_status fseg_checkpoint_load(const char* path, fseg_checkpoint** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fseg_checkpoint{frameseg::load_checkpoint(path)};
  });
}

fseg_status fseg_checkpoint_info(const fseg_checkpoint* ckpt, char** out_json) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(out_json, "out_json");
    auto j = nlohmann::ordered_json::parse(ckpt->ckpt.config.to_json());
    j["fingerprint"] = ckpt->ckpt.config.fingerprint();
    j["has_optimizer_state"] = ckpt->ckpt.optimizer.has_value();
    *out_json = dup(j.dump(2) + "\n");
  });
}

void fseg_checkpoint_free(fseg_checkpoint* ckpt) { delete ckpt; }

fseg_status fseg_predict(const fseg_checkpoint* ckpt, const float* points, size_t n_points, uint16_t* labels) {
  return guarded([&] {
    require(ckpt, "ckpt");
    if (n_points == 0) return;
    require(points, "points");
    require(labels, "labels");
    std::vector<frameseg::Point> pts(n_points);
    for (size_t i = 0; i < n_points; ++i)
      pts[i] = {points[4 * i], points[4 * i + 1], points[4 * i + 2], points[4 * i + 3]};
    const auto out = frameseg::predict(ckpt->ckpt, pts);
    std::copy(out.begin(), out.end(), labels);
  });
}

}  // extern "C"
