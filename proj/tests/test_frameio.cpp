#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "frameseg/frameio.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace frameseg;
using frameseg::test::error_kind_of;
using frameseg::test::TempDir;

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xFF);
  b.push_back(v >> 8);
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xFF);
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back((v >> (8 * i)) & 0xFF);
}
void put_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(b, v);
}

std::vector<std::uint8_t> lfrm_header(std::uint16_t flags, std::uint64_t ts, std::uint32_t count) {
  std::vector<std::uint8_t> b{'L', 'F', 'R', 'M'};
  put_u16(b, 1);
  put_u16(b, flags);
  put_u16(b, 0);
  put_u64(b, ts);
  put_u32(b, count);
  return b;
}

void write_raw(const fs::path& p, const std::string& s) {
  write_file_bytes(p, std::vector<std::uint8_t>(s.begin(), s.end()));
}

LidarFrame random_frame(Rng& rng, std::size_t n, bool labels) {
  LidarFrame f;
  f.timestamp_ns = 1 + rng.below(1ull << 62);
  for (std::size_t i = 0; i < n; ++i)
    f.points.push_back({float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)), float(rng.uniform(-5, 5)),
                        float(rng.uniform())});
  if (labels) {
    f.labels.emplace();
    for (std::size_t i = 0; i < n; ++i) f.labels->push_back(static_cast<std::uint16_t>(rng.below(65536)));
  }
  return f;
}

}  // namespace

TEST(LidarFrameFormat, EmptyFrameIsHeaderOnly) {
  LidarFrame f;
  f.timestamp_ns = 1;
  const auto bytes = encode_lidar_frame(f);
  EXPECT_EQ(bytes.size(), 22u);
  const auto back = decode_lidar_frame(bytes);
  EXPECT_EQ(back.timestamp_ns, 1u);
  EXPECT_TRUE(back.points.empty());
  EXPECT_FALSE(back.labels.has_value());
}

TEST(LidarFrameFormat, HandEncodedLabelledFrame) {
  auto b = lfrm_header(1, 42, 2);
  for (float v : {1.0f, 2.0f, 3.0f, 0.5f, -1.0f, -2.0f, -3.0f, 0.25f}) put_f32(b, v);
  put_u16(b, 0);
  put_u16(b, 65535);
  const auto f = decode_lidar_frame(b);
  ASSERT_EQ(f.points.size(), 2u);
  EXPECT_EQ(f.points[1], (Point{-1.0f, -2.0f, -3.0f, 0.25f}));
  ASSERT_TRUE(f.labels);
  EXPECT_EQ(*f.labels, (std::vector<std::uint16_t>{0, kIgnoreLabel}));
  EXPECT_EQ(encode_lidar_frame(f), b);
}

TEST(LidarFrameFormat, Errors) {
  auto b = lfrm_header(0, 5, 1);
  b[0] = 'X';
  EXPECT_EQ(error_kind_of([&] { decode_lidar_frame(b); }), ErrorKind::Format);

  auto trunc = lfrm_header(0, 5, 2);
  put_f32(trunc, 1.0f);
  EXPECT_EQ(error_kind_of([&] { decode_lidar_frame(trunc); }), ErrorKind::Truncation);

  auto missing_labels = lfrm_header(1, 5, 1);
  for (int i = 0; i < 4; ++i) put_f32(missing_labels, 1.0f);
  EXPECT_EQ(error_kind_of([&] { decode_lidar_frame(missing_labels); }), ErrorKind::Consistency);

  auto nan = lfrm_header(0, 5, 1);
  put_f32(nan, std::numeric_limits<float>::quiet_NaN());
  for (int i = 0; i < 3; ++i) put_f32(nan, 1.0f);
  EXPECT_EQ(error_kind_of([&] { decode_lidar_frame(nan); }), ErrorKind::Consistency);

  LidarFrame bad;
  bad.timestamp_ns = 3;
  bad.points.push_back({std::numeric_limits<float>::quiet_NaN(), 0, 0, 0});
  EXPECT_EQ(error_kind_of([&] { encode_lidar_frame(bad); }), ErrorKind::Consistency);

  EXPECT_EQ(error_kind_of([] { read_lidar_frame("/nonexistent/dir/x.lfrm"); }), ErrorKind::Io);
  LidarFrame ok;
  ok.timestamp_ns = 1;
  EXPECT_EQ(error_kind_of([&] { write_lidar_frame(ok, "/nonexistent/dir/x.lfrm"); }), ErrorKind::Io);
}

TEST(LidarFrameFormat, RandomRoundTripIsByteExact) {
  TempDir dir;
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = random_frame(rng, rng.below(300), trial % 2 == 0);
    const auto path = dir / "f.lfrm";
    write_lidar_frame(f, path);
    const auto back = read_lidar_frame(path);
    EXPECT_EQ(back, f);
    EXPECT_EQ(encode_lidar_frame(back), read_file_bytes(path));
    EXPECT_EQ(read_lidar_timestamp(path), f.timestamp_ns);
  }
}

TEST(PnmFormat, MaskSamples) {
  TempDir dir;
  write_raw(dir / "a.pgm", std::string("P5\n1 1\n65535\n") + std::string("\x00\x00", 2));
  EXPECT_EQ(read_mask(dir / "a.pgm").ids, std::vector<std::uint16_t>{0});
  write_raw(dir / "b.pgm", std::string("P5\n# comment\n1 1\n65535\n") + std::string("\xFF\xFF", 2));
  EXPECT_EQ(read_mask(dir / "b.pgm").ids, std::vector<std::uint16_t>{kIgnoreLabel});
  write_raw(dir / "c.pgm", std::string("P5\n2 1\n65535\n") + std::string("\x01\x02\x00\x07", 4));
  EXPECT_EQ(read_mask(dir / "c.pgm").ids, (std::vector<std::uint16_t>{0x0102, 7}));
}

TEST(PnmFormat, ImageSamplesAndTimestamp) {
  TempDir dir;
  write_raw(dir / "1234.ppm", std::string("P6\n2 1\n255\n") + std::string("\xFF\x00\x00\x00\x00\xFF", 6));
  const auto img = read_image(dir / "1234.ppm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{255, 0, 0, 0, 0, 255}));
  EXPECT_EQ(img.timestamp_ns, 1234u);
  EXPECT_EQ(timestamp_from_filename("x/987.pgm"), 987u);
  EXPECT_FALSE(timestamp_from_filename("x/a12.pgm"));
}

TEST(PnmFormat, Errors) {
  TempDir dir;
  write_raw(dir / "a.pgm", "P2\n1 1\n65535\n0\n");
  EXPECT_EQ(error_kind_of([&] { read_mask(dir / "a.pgm"); }), ErrorKind::Format);
  write_raw(dir / "b.pgm", std::string("P5\n1 1\n255\n") + std::string("\x00", 1));
  EXPECT_EQ(error_kind_of([&] { read_mask(dir / "b.pgm"); }), ErrorKind::Format);
  write_raw(dir / "c.pgm", std::string("P5\n2 2\n65535\n") + std::string("\x00\x00", 2));
  EXPECT_EQ(error_kind_of([&] { read_mask(dir / "c.pgm"); }), ErrorKind::Truncation);
  write_raw(dir / "d.ppm", std::string("P6\n1 1\n65535\n") + std::string(6, '\0'));
  EXPECT_EQ(error_kind_of([&] { read_image(dir / "d.ppm"); }), ErrorKind::Format);
  write_raw(dir / "e.ppm", std::string("P6\n1 1\n255\n") + std::string(4, '\0'));
  EXPECT_EQ(error_kind_of([&] { read_image(dir / "e.ppm"); }), ErrorKind::Format);
}

TEST(PnmFormat, RandomRoundTrip) {
  TempDir dir;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    SemanticMask m{static_cast<std::uint32_t>(1 + rng.below(20)), static_cast<std::uint32_t>(1 + rng.below(20)), {}};
    for (std::size_t i = 0; i < std::size_t{m.width} * m.height; ++i)
      m.ids.push_back(static_cast<std::uint16_t>(rng.below(65536)));
    write_mask(m, dir / "m.pgm");
    EXPECT_EQ(read_mask(dir / "m.pgm"), m);

    ImageFrame img;
    img.width = m.width;
    img.height = m.height;
    img.channels = trial % 2 ? 3 : 1;
    img.timestamp_ns = 77;
    for (std::size_t i = 0; i < std::size_t{img.width} * img.height * img.channels; ++i)
      img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    write_image(img, dir / "77.ppm");
    EXPECT_EQ(read_image(dir / "77.ppm"), img);
  }
}

TEST(FeatureMapFormat, SingleValueLength) {
  FeatureMap fm(1, 1, 1);
  fm.data[0] = 1.0f;
  const auto bytes = encode_feature_map(fm);
  EXPECT_EQ(bytes.size(), 22u);  // 4 magic + 2 version + 3 x 4 dims + 4 payload
  EXPECT_EQ(decode_feature_map(bytes), fm);
}

TEST(FeatureMapFormat, Errors) {
  std::vector<std::uint8_t> b{'F', 'M', 'A', 'P'};
  put_u16(b, 1);
  put_u32(b, 2);
  put_u32(b, 2);
  put_u32(b, 1);
  for (int i = 0; i < 3; ++i) put_f32(b, 0.5f);
  EXPECT_EQ(error_kind_of([&] { decode_feature_map(b); }), ErrorKind::Truncation);
  put_f32(b, 0.5f);
  EXPECT_NO_THROW(decode_feature_map(b));
  put_f32(b, 0.5f);
  EXPECT_EQ(error_kind_of([&] { decode_feature_map(b); }), ErrorKind::Mismatch);

  FeatureMap fm(1, 1, 2);
  fm.data[1] = std::numeric_limits<float>::infinity();
  EXPECT_EQ(error_kind_of([&] { encode_feature_map(fm); }), ErrorKind::Consistency);
}

TEST(FeatureMapFormat, RandomRoundTrip) {
  TempDir dir;
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMap fm(1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(5));
    for (auto& v : fm.data) v = float(rng.uniform(-1, 1));
    write_feature_map(fm, dir / "f.fmap");
    EXPECT_EQ(read_feature_map(dir / "f.fmap"), fm);
  }
}

TEST(PointLabelFormat, RoundTrip) {
  TempDir dir;
  const std::vector<std::uint16_t> labels{0, 3, kIgnoreLabel, 1};
  write_point_labels(labels, dir / "a.lbl");
  EXPECT_EQ(read_point_labels(dir / "a.lbl"), labels);
  auto bytes = read_file_bytes(dir / "a.lbl");
  bytes.pop_back();
  write_file_bytes(dir / "b.lbl", bytes);
  EXPECT_EQ(error_kind_of([&] { read_point_labels(dir / "b.lbl"); }), ErrorKind::Truncation);
}

namespace {
const char* kRig = R"({
  "intrinsics": {"fx": 100, "fy": 100, "cx": 64, "cy": 48, "width": 128, "height": 96},
  "extrinsics": {"rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]}
})";
}

TEST(RigConfigFormat, ValidWithDefaults) {
  const auto rig = parse_rig_config(kRig);
  EXPECT_EQ(rig.intrinsics.fx, 100.0);
  EXPECT_EQ(rig.intrinsics.cx, 64.0);
  EXPECT_TRUE(rig.intrinsics.distortion.is_zero());
  EXPECT_EQ(rig.min_depth, 0.1);
  const auto again = parse_rig_config(rig_config_to_json(rig));
  EXPECT_EQ(rig_config_to_json(again), rig_config_to_json(rig));
}

TEST(RigConfigFormat, Rejections) {
  std::string flipped = kRig;
  flipped.replace(flipped.find("[[1,0,0]"), 8, "[[-1,0,0]");
  EXPECT_EQ(error_kind_of([&] { parse_rig_config(flipped); }), ErrorKind::InvalidArgument);
  std::string skew = kRig;
  skew.replace(skew.find("[0,1,0]"), 7, "[0.5,1,0]");
  EXPECT_EQ(error_kind_of([&] { parse_rig_config(skew); }), ErrorKind::InvalidArgument);
  std::string fx0 = kRig;
  fx0.replace(fx0.find("\"fx\": 100"), 9, "\"fx\": 0");
  EXPECT_EQ(error_kind_of([&] { parse_rig_config(fx0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { parse_rig_config(R"({"intrinsics": {}})"); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { parse_rig_config("{"); }), ErrorKind::InvalidArgument);
}

TEST(RigConfigFormat, ErrorsNameTheFile) {
  TempDir dir;
  write_text_file(dir / "rig.json", "{}");
  try {
    load_rig_config(dir / "rig.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rig.json"), std::string::npos);
  }
}
