// Exercises the shared library through its C header only.
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include <gtest/gtest.h>

#include "frameseg/frameseg.h"

namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "teacher_dim": 4,
  "teacher_size": {"w": 40, "h": 20},
  "student": {"embed_dim": 8, "depth": 2, "grid_cells": 16, "cell_size_m": 0.5},
  "synth": {"frames": 6, "rings": 8, "azimuths": 90, "camera_width": 80, "camera_height": 40,
            "camera_fx": 25, "camera_fy": 25},
  "distill": {"epochs": 2, "batch": 2},
  "probe": {"epochs": 2, "batch": 2},
  "finetune": {"epochs": 1, "batch": 2}
})";

std::string take(char* s) {
  std::string out = s ? s : "";
  fseg_string_free(s);
  return out;
}

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("frameseg_capi_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(fseg_config_default(&cfg_), FSEG_OK);
    ASSERT_EQ(fseg_config_merge(cfg_, kSmall), FSEG_OK) << fseg_last_error();
  }
  void TearDown() override {
    fseg_config_free(cfg_);
    fs::remove_all(dir_);
  }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
  fseg_config* cfg_ = nullptr;
};

}  // namespace

TEST(CApiBasics, StatusTable) {
  EXPECT_STREQ(fseg_status_name(FSEG_OK), "ok");
  EXPECT_STREQ(fseg_status_name(FSEG_ERR_TRUNCATION), "truncation");
  EXPECT_EQ(fseg_exit_code(FSEG_OK), 0);
  EXPECT_EQ(fseg_exit_code(FSEG_ERR_MISMATCH), 1);
  EXPECT_EQ(fseg_exit_code(FSEG_ERR_PRECONDITION), 1);
  EXPECT_EQ(fseg_exit_code(FSEG_ERR_FORMAT), 2);
  EXPECT_EQ(fseg_exit_code(FSEG_ERR_IO), 2);
  EXPECT_EQ(fseg_exit_code(FSEG_ERR_INTERNAL), 3);
  EXPECT_NE(std::string(fseg_version()), "");
}

TEST(CApiBasics, ErrorsAreReported) {
  fseg_config* cfg = nullptr;
  EXPECT_EQ(fseg_config_load("/nonexistent/cfg.json", &cfg), FSEG_ERR_IO);
  EXPECT_NE(std::string(fseg_last_error()).find("/nonexistent/cfg.json"), std::string::npos);
  EXPECT_EQ(cfg, nullptr);

  ASSERT_EQ(fseg_config_default(&cfg), FSEG_OK);
  EXPECT_STREQ(fseg_last_error(), "");
  EXPECT_EQ(fseg_config_merge(cfg, "{\"distill\": {\"batch\": 0}}"), FSEG_ERR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(fseg_last_error()).find("batch"), std::string::npos);
  EXPECT_EQ(fseg_config_merge(cfg, "{not json"), FSEG_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(fseg_config_merge(cfg, nullptr), FSEG_ERR_INVALID_ARGUMENT);

  char* json = nullptr;
  ASSERT_EQ(fseg_config_to_json(cfg, &json), FSEG_OK);
  EXPECT_NE(take(json).find("\"batch\": 8"), std::string::npos);
  fseg_config_free(cfg);

  fseg_checkpoint* ck = nullptr;
  EXPECT_EQ(fseg_checkpoint_load("/nonexistent.ckpt", &ck), FSEG_ERR_IO);
}

TEST_F(CApi, PipelineAndPredict) {
  char* json = nullptr;
  ASSERT_EQ(fseg_synth(cfg_, path("data").c_str(), &json), FSEG_OK) << fseg_last_error();
  EXPECT_NE(take(json).find("\"frames\": 6"), std::string::npos);
  ASSERT_EQ(fseg_pair(cfg_, path("data").c_str(), path("data/paired.jsonl").c_str(), &json), FSEG_OK)
      << fseg_last_error();
  EXPECT_NE(take(json).find("\"paired\": 6"), std::string::npos);
  ASSERT_EQ(fseg_split(path("data/paired.jsonl").c_str(), path("splits").c_str(), 0.5, 0.25, 0.25, &json), FSEG_OK);
  take(json);
  ASSERT_EQ(fseg_pseudolabel(cfg_, path("splits/train.jsonl").c_str(), path("data/rig.json").c_str(), nullptr, 0,
                             nullptr, &json),
            FSEG_OK)
      << fseg_last_error();
  take(json);
  ASSERT_EQ(fseg_project(path("splits/train.jsonl").c_str(), path("data/rig.json").c_str(), path("overlays").c_str(),
                         1, &json),
            FSEG_OK)
      << fseg_last_error();
  EXPECT_NE(take(json).find("\"overlays\": 1"), std::string::npos);

  ASSERT_EQ(fseg_distill(cfg_, path("splits/train.jsonl").c_str(), path("data/rig.json").c_str(),
                         path("ck/distill.ckpt").c_str(), &json),
            FSEG_OK)
      << fseg_last_error();
  take(json);
  EXPECT_TRUE(fs::exists(path("ck/distill.report.json")));
  EXPECT_TRUE(fs::exists(path("ck/distill.timing.json")));
  ASSERT_EQ(fseg_probe(cfg_, path("ck/distill.ckpt").c_str(), path("splits/train.jsonl").c_str(),
                       FSEG_LABELS_PSEUDO, path("ck/probe.ckpt").c_str(), &json),
            FSEG_OK)
      << fseg_last_error();
  take(json);
  ASSERT_EQ(fseg_finetune(cfg_, path("ck/probe.ckpt").c_str(), path("splits/train.jsonl").c_str(), FSEG_LABELS_REAL,
                          path("ck/ft.ckpt").c_str(), &json),
            FSEG_OK)
      << fseg_last_error();
  take(json);

  char *text = nullptr, *csv = nullptr;
  ASSERT_EQ(fseg_eval(cfg_, path("ck/ft.ckpt").c_str(), path("splits/test.jsonl").c_str(), FSEG_LABELS_REAL,
                      path("eval/real").c_str(), &text, &csv, &json),
            FSEG_OK)
      << fseg_last_error();
  EXPECT_NE(take(text).find("mIoU"), std::string::npos);
  EXPECT_NE(take(csv).find("overall,,"), std::string::npos);
  EXPECT_NE(take(json).find("\"miou\""), std::string::npos);
  EXPECT_TRUE(fs::exists(path("eval/real.csv")));
  // Pseudo labels exist only for the train split.
  EXPECT_EQ(fseg_eval(cfg_, path("ck/ft.ckpt").c_str(), path("splits/test.jsonl").c_str(), FSEG_LABELS_PSEUDO,
                      nullptr, nullptr, nullptr, nullptr),
            FSEG_ERR_PRECONDITION)
      << fseg_last_error();

  fseg_checkpoint* ck = nullptr;
  ASSERT_EQ(fseg_checkpoint_load(path("ck/ft.ckpt").c_str(), &ck), FSEG_OK);
  ASSERT_EQ(fseg_checkpoint_info(ck, &json), FSEG_OK);
  EXPECT_NE(take(json).find("\"depth\": 2"), std::string::npos);
  const std::vector<float> pts{1, 0, 0, 0.5f, 0, 1, 0, 0.5f, 0, 0, -1, 0.5f};
  std::vector<uint16_t> labels(3, 999);
  ASSERT_EQ(fseg_predict(ck, pts.data(), 3, labels.data()), FSEG_OK);
  for (auto l : labels) EXPECT_LT(l, 4);
  EXPECT_EQ(fseg_predict(ck, nullptr, 3, labels.data()), FSEG_ERR_INVALID_ARGUMENT);
  fseg_checkpoint_free(ck);

  // A checkpoint trained with another config is refused.
  fseg_config* other = nullptr;
  ASSERT_EQ(fseg_config_default(&other), FSEG_OK);
  EXPECT_EQ(fseg_eval(other, path("ck/ft.ckpt").c_str(), path("splits/test.jsonl").c_str(), FSEG_LABELS_REAL,
                      nullptr, nullptr, nullptr, nullptr),
            FSEG_ERR_MISMATCH);
  fseg_config_free(other);

  const uint32_t depths[] = {1, 2};
  ASSERT_EQ(fseg_bench(cfg_, depths, 2, 2, 1, nullptr, &text, &csv, &json), FSEG_OK) << fseg_last_error();
  take(text);
  const auto rows = take(csv);
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 3);
  take(json);
}
