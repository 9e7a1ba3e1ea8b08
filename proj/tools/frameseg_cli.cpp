// Command-line driver. Every stage goes through the C API.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "frameseg/frameseg.h"

namespace {

/// Owns a string handed out by the library.
struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { fseg_string_free(ptr); }
  char** out() { return &ptr; }
  void print() const {
    if (ptr) std::fputs(ptr, stdout);
  }
};

struct ConfigHandle {
  fseg_config* ptr = nullptr;
  ~ConfigHandle() { fseg_config_free(ptr); }
};

int report_failure(const char* stage, fseg_status status) {
  std::fprintf(stderr, "frameseg %s: %s error: %s\n", stage, fseg_status_name(status), fseg_last_error());
  return fseg_exit_code(status);
}

fseg_labels label_source(const std::string& s) { return s == "real" ? FSEG_LABELS_REAL : FSEG_LABELS_PSEUDO; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frame-wise lidar segmentation by distillation from an image teacher"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(fseg_version()));

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "JSON merge patch applied on top of the configuration")->take_all();

  std::string out, data, manifest, rig, ckpt, label_map, labels = "pseudo", format = "text";
  std::vector<double> ratios{0.70, 0.15, 0.15};
  std::vector<std::uint32_t> depths{8, 16, 24};
  std::size_t limit = 0;
  std::uint32_t frames = 8, repeats = 3;
  bool depth_filter = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", out, "Dataset directory")->required();

  auto* pair = app.add_subcommand("pair", "Pair lidar frames with images by timestamp");
  pair->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  pair->add_option("--out", out, "Output manifest")->required();

  auto* split = app.add_subcommand("split", "Split a manifest into train/val/test");
  split->add_option("--manifest", manifest, "Input manifest")->required()->check(CLI::ExistingFile);
  split->add_option("--out", out, "Output directory")->required();
  split->add_option("--ratios", ratios, "train,val,test ratios")->delimiter(',')->expected(3);

  auto* project = app.add_subcommand("project", "Write projection overlays");
  project->add_option("--manifest", manifest, "Manifest")->required()->check(CLI::ExistingFile);
  project->add_option("--rig", rig, "Rig configuration")->required()->check(CLI::ExistingFile);
  project->add_option("--out", out, "Output directory")->required();
  project->add_option("--limit", limit, "Maximum number of overlays (0 = all)");

  auto* pseudo = app.add_subcommand("pseudolabel", "Transfer mask labels to lidar points");
  pseudo->add_option("--manifest", manifest, "Manifest")->required()->check(CLI::ExistingFile);
  pseudo->add_option("--rig", rig, "Rig configuration")->required()->check(CLI::ExistingFile);
  pseudo->add_option("--label-map", label_map, "Source-to-target label table")->check(CLI::ExistingFile);
  pseudo->add_flag("--depth-filter", depth_filter, "Drop points occluded on their pixel");
  pseudo->add_option("--out", out, "Output manifest (default: update in place)");

  auto* distill = app.add_subcommand("distill", "Distill teacher features into the lidar student");
  distill->add_option("--manifest", manifest, "Training manifest")->required()->check(CLI::ExistingFile);
  distill->add_option("--rig", rig, "Rig configuration")->required()->check(CLI::ExistingFile);
  distill->add_option("--out", out, "Output checkpoint")->required();

  auto add_train = [&](CLI::App* sub) {
    sub->add_option("--ckpt", ckpt, "Input checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", manifest, "Training manifest")->required()->check(CLI::ExistingFile);
    sub->add_option("--labels", labels, "Label source")->check(CLI::IsMember({"pseudo", "real"}));
    sub->add_option("--out", out, "Output checkpoint")->required();
  };
  auto* probe = app.add_subcommand("probe", "Train a linear classifier on frozen features");
  add_train(probe);
  auto* finetune = app.add_subcommand("finetune", "Fine-tune backbone and classifier with layer decay");
  add_train(finetune);

  auto* eval = app.add_subcommand("eval", "Score predictions against pseudo or real labels");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest, "Evaluation manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--labels", labels, "Reference labels")->check(CLI::IsMember({"pseudo", "real"}));
  eval->add_option("--out", out, "Report prefix (.txt, .csv, .json)");
  eval->add_option("--format", format, "Output on stdout")->check(CLI::IsMember({"text", "csv", "json"}));

  auto* bench = app.add_subcommand("bench", "Inference throughput per depth");
  bench->add_option("--depth", depths, "Depths to time")->delimiter(',');
  bench->add_option("--frames", frames, "Synthetic frames per repetition")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Repetitions (best is kept)")->check(CLI::PositiveNumber);
  bench->add_option("--out", out, "Report prefix (.txt, .csv, .json)");
  bench->add_option("--format", format, "Output on stdout")->check(CLI::IsMember({"text", "csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  ConfigHandle cfg;
  fseg_status st = config_path.empty() ? fseg_config_default(&cfg.ptr) : fseg_config_load(config_path.c_str(), &cfg.ptr);
  if (st != FSEG_OK) return report_failure(stage.c_str(), st);
  for (const auto& patch : overrides) {
    st = fseg_config_merge(cfg.ptr, patch.c_str());
    if (st != FSEG_OK) return report_failure(stage.c_str(), st);
  }

  OwnedString text, csv, json;
  const char* opt_out = out.empty() ? nullptr : out.c_str();
  if (*synth) {
    st = fseg_synth(cfg.ptr, out.c_str(), json.out());
  } else if (*pair) {
    st = fseg_pair(cfg.ptr, data.c_str(), out.c_str(), json.out());
  } else if (*split) {
    st = fseg_split(manifest.c_str(), out.c_str(), ratios[0], ratios[1], ratios[2], json.out());
  } else if (*project) {
    st = fseg_project(manifest.c_str(), rig.c_str(), out.c_str(), limit, json.out());
  } else if (*pseudo) {
    st = fseg_pseudolabel(cfg.ptr, manifest.c_str(), rig.c_str(), label_map.empty() ? nullptr : label_map.c_str(),
                          depth_filter ? 1 : 0, opt_out, json.out());
  } else if (*distill) {
    st = fseg_distill(cfg.ptr, manifest.c_str(), rig.c_str(), out.c_str(), json.out());
  } else if (*probe) {
    st = fseg_probe(cfg.ptr, ckpt.c_str(), manifest.c_str(), label_source(labels), out.c_str(), json.out());
  } else if (*finetune) {
    st = fseg_finetune(cfg.ptr, ckpt.c_str(), manifest.c_str(), label_source(labels), out.c_str(), json.out());
  } else if (*eval) {
    st = fseg_eval(cfg.ptr, ckpt.c_str(), manifest.c_str(), label_source(labels), opt_out, text.out(), csv.out(),
                   json.out());
  } else if (*bench) {
    st = fseg_bench(cfg.ptr, depths.data(), depths.size(), frames, repeats, opt_out, text.out(), csv.out(),
                    json.out());
  }
  if (st != FSEG_OK) return report_failure(stage.c_str(), st);

  if (*eval || *bench) {
    if (format == "csv") csv.print();
    else if (format == "json") json.print();
    else text.print();
  } else {
    json.print();
  }
  return 0;
}
