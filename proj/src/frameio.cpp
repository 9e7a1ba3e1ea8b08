#include "frameseg/frameio.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "bytes.hpp"
#include "frameseg/error.hpp"

namespace frameseg {

using detail::ByteReader;
using detail::ByteWriter;

namespace {

constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint16_t kHasLabelsFlag = 0x1;

std::string describe(const std::filesystem::path& path) { return path.string(); }

template <typename Fn>
auto with_path(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), describe(path) + ": " + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + describe(path) + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read error on " + describe(path));
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + describe(path) + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write error on " + describe(path));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

// ---------------------------------------------------------------------------
// Lidar frames

void validate(const LidarFrame& frame) {
  if (frame.timestamp_ns == 0) fail(ErrorKind::Consistency, "lidar frame timestamp must be positive");
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& p = frame.points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.intensity))
      fail(ErrorKind::Consistency, "point " + std::to_string(i) + " has a non-finite value");
  }
  if (frame.labels && frame.labels->size() != frame.points.size())
    fail(ErrorKind::Consistency, "label count " + std::to_string(frame.labels->size()) +
                                     " does not match point count " + std::to_string(frame.points.size()));
}

std::vector<std::uint8_t> encode_lidar_frame(const LidarFrame& frame) {
  validate(frame);
  ByteWriter w;
  const bool labeled = frame.labels.has_value();
  w.reserve(22 + frame.points.size() * (labeled ? 18 : 16));
  w.put_magic("LFRM");
  w.put_u16(kFormatVersion);
  w.put_u16(labeled ? kHasLabelsFlag : 0);
  w.put_u16(0);
  w.put_u64(frame.timestamp_ns);
  w.put_u32(static_cast<std::uint32_t>(frame.points.size()));
  for (const auto& p : frame.points) {
    w.put_f32(p.x);
    w.put_f32(p.y);
    w.put_f32(p.z);
    w.put_f32(p.intensity);
  }
  if (labeled)
    for (auto l : *frame.labels) w.put_u16(l);
  return std::move(w.bytes());
}

LidarFrame decode_lidar_frame(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "lidar frame");
  if (!r.magic_is("LFRM")) fail(ErrorKind::Format, "bad magic (expected LFRM)");
  r.skip(4);
  const auto version = r.u16();
  if (version != kFormatVersion) fail(ErrorKind::Format, "unsupported LFRM version " + std::to_string(version));
  const auto flags = r.u16();
  if (flags & ~kHasLabelsFlag) fail(ErrorKind::Format, "unknown LFRM flags " + std::to_string(flags));
  const auto reserved = r.u16();
  if (reserved != 0) fail(ErrorKind::Format, "reserved LFRM field is not zero");

  LidarFrame frame;
  frame.timestamp_ns = r.u64();
  const std::uint32_t count = r.u32();
  r.need(std::size_t{count} * 16);
  frame.points.resize(count);
  for (auto& p : frame.points) {
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    p.intensity = r.f32();
  }
  if (flags & kHasLabelsFlag) {
    if (count > 0 && r.remaining() == 0)
      fail(ErrorKind::Consistency, "label flag set but label block is missing");
    r.need(std::size_t{count} * 2);
    std::vector<std::uint16_t> labels(count);
    for (auto& l : labels) l = r.u16();
    frame.labels = std::move(labels);
  }
  if (r.remaining() != 0)
    fail(ErrorKind::Format, std::to_string(r.remaining()) + " trailing bytes after LFRM payload");
  validate(frame);
  return frame;
}

LidarFrame read_lidar_frame(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_lidar_frame(read_file_bytes(path)); });
}

void write_lidar_frame(const LidarFrame& frame, const std::filesystem::path& path) {
  with_path(path, [&] { write_file_bytes(path, encode_lidar_frame(frame)); });
}

std::uint64_t read_lidar_timestamp(const std::filesystem::path& path) {
  return with_path(path, [&] {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open for reading");
    std::uint8_t header[22];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (in.gcount() != static_cast<std::streamsize>(sizeof header))
      fail(ErrorKind::Truncation, "LFRM header truncated");
    ByteReader r(header, "lidar frame");
    if (!r.magic_is("LFRM")) fail(ErrorKind::Format, "bad magic (expected LFRM)");
    r.skip(10);
    return r.u64();
  });
}

// ---------------------------------------------------------------------------
// PNM images and masks

namespace {

struct PnmHeader {
  std::string magic;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) -> std::uint32_t {
    skip_space_and_comments();
    std::uint64_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 0xFFFFFFFFull) fail(ErrorKind::Format, std::string("PNM ") + field + " out of range");
      ++pos;
      ++digits;
    }
    if (digits == 0) fail(ErrorKind::Format, std::string("PNM header: missing ") + field);
    return static_cast<std::uint32_t>(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P') fail(ErrorKind::Format, "unsupported magic (expected P5 or P6)");
  PnmHeader h;
  h.magic = std::string{static_cast<char>(bytes[0]), static_cast<char>(bytes[1])};
  if (h.magic != "P5" && h.magic != "P6") fail(ErrorKind::Format, "unsupported magic " + h.magic);
  pos = 2;
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    fail(ErrorKind::Format, "PNM header: expected whitespace after maxval");
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) fail(ErrorKind::Format, "PNM image has zero size");
  return h;
}

void check_sample_count(std::size_t have, std::size_t want) {
  if (have < want)
    fail(ErrorKind::Truncation, "sample count mismatch: expected " + std::to_string(want) +
                                    " bytes of raster, found " + std::to_string(have));
  if (have > want)
    fail(ErrorKind::Format, "sample count mismatch: " + std::to_string(have - want) + " trailing bytes");
}

}  // namespace

std::optional<std::uint64_t> timestamp_from_filename(const std::filesystem::path& path) {
  const auto stem = path.stem().string();
  if (stem.empty() || stem.size() > 20) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : stem) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    const std::uint64_t next = v * 10 + static_cast<std::uint64_t>(c - '0');
    if (next / 10 != v) return std::nullopt;
    v = next;
  }
  return v;
}

ImageFrame read_image(const std::filesystem::path& path) {
  return with_path(path, [&] {
    const auto bytes = read_file_bytes(path);
    const auto h = parse_pnm_header(bytes);
    if (h.maxval != 255) fail(ErrorKind::Format, "maxval mismatch: images must be 8-bit (maxval 255)");
    ImageFrame img;
    img.width = h.width;
    img.height = h.height;
    img.channels = h.magic == "P6" ? 3 : 1;
    const std::size_t want = std::size_t{img.width} * img.height * img.channels;
    check_sample_count(bytes.size() - h.data_offset, want);
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
    img.timestamp_ns = timestamp_from_filename(path).value_or(0);
    return img;
  });
}

void write_image(const ImageFrame& image, const std::filesystem::path& path) {
  with_path(path, [&] {
    if (image.channels != 1 && image.channels != 3)
      fail(ErrorKind::InvalidArgument, "image must have 1 or 3 channels");
    if (image.pixels.size() != std::size_t{image.width} * image.height * image.channels)
      fail(ErrorKind::Consistency, "pixel count does not match width*height*channels");
    const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" +
                               std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    write_file_bytes(path, out);
  });
}

SemanticMask read_mask(const std::filesystem::path& path) {
  return with_path(path, [&] {
    const auto bytes = read_file_bytes(path);
    const auto h = parse_pnm_header(bytes);
    if (h.magic != "P5") fail(ErrorKind::Format, "unsupported magic " + h.magic + " for mask (expected P5)");
    if (h.maxval != 65535) fail(ErrorKind::Format, "maxval mismatch: masks must be 16-bit (maxval 65535)");
    SemanticMask m;
    m.width = h.width;
    m.height = h.height;
    const std::size_t n = std::size_t{m.width} * m.height;
    check_sample_count(bytes.size() - h.data_offset, n * 2);
    m.ids.resize(n);
    const auto* p = bytes.data() + h.data_offset;
    for (std::size_t i = 0; i < n; ++i)
      m.ids[i] = static_cast<std::uint16_t>((std::uint16_t{p[2 * i]} << 8) | p[2 * i + 1]);
    return m;
  });
}

void write_mask(const SemanticMask& mask, const std::filesystem::path& path) {
  with_path(path, [&] {
    if (mask.ids.size() != std::size_t{mask.width} * mask.height)
      fail(ErrorKind::Consistency, "mask id count does not match width*height");
    const std::string header =
        "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n65535\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + mask.ids.size() * 2);
    for (auto id : mask.ids) {
      out.push_back(static_cast<std::uint8_t>(id >> 8));
      out.push_back(static_cast<std::uint8_t>(id & 0xFF));
    }
    write_file_bytes(path, out);
  });
}

// ---------------------------------------------------------------------------
// Feature maps

std::vector<std::uint8_t> encode_feature_map(const FeatureMap& fm) {
  if (fm.height == 0 || fm.width == 0 || fm.channels == 0)
    fail(ErrorKind::Consistency, "feature map dimensions must be >= 1");
  if (fm.data.size() != std::size_t{fm.height} * fm.width * fm.channels)
    fail(ErrorKind::Consistency, "feature map data size does not match H*W*C");
  ByteWriter w;
  w.reserve(18 + fm.data.size() * 4);
  w.put_magic("FMAP");
  w.put_u16(kFormatVersion);
  w.put_u32(fm.height);
  w.put_u32(fm.width);
  w.put_u32(fm.channels);
  for (float v : fm.data) {
    if (!std::isfinite(v)) fail(ErrorKind::Consistency, "feature map contains a non-finite value");
    w.put_f32(v);
  }
  return std::move(w.bytes());
}

FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "feature map");
  if (!r.magic_is("FMAP")) fail(ErrorKind::Format, "bad magic (expected FMAP)");
  r.skip(4);
  const auto version = r.u16();
  if (version != kFormatVersion) fail(ErrorKind::Format, "unsupported FMAP version " + std::to_string(version));
  const auto h = r.u32();
  const auto w = r.u32();
  const auto c = r.u32();
  if (h == 0 || w == 0 || c == 0) fail(ErrorKind::Consistency, "feature map dimensions must be >= 1");
  const std::uint64_t n = std::uint64_t{h} * w * c;
  FeatureMap fm;
  fm.height = h;
  fm.width = w;
  fm.channels = c;
  r.need(n * 4);
  fm.data.resize(n);
  for (auto& v : fm.data) {
    v = r.f32();
    if (!std::isfinite(v)) fail(ErrorKind::Consistency, "feature map contains a non-finite value");
  }
  if (r.remaining() != 0)
    fail(ErrorKind::Mismatch, "size mismatch vs header: " + std::to_string(r.remaining()) + " trailing bytes");
  return fm;
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_feature_map(read_file_bytes(path)); });
}

void write_feature_map(const FeatureMap& fm, const std::filesystem::path& path) {
  with_path(path, [&] { write_file_bytes(path, encode_feature_map(fm)); });
}

// ---------------------------------------------------------------------------
// Point labels

std::vector<std::uint16_t> read_point_labels(const std::filesystem::path& path) {
  return with_path(path, [&] {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes, "label file");
    if (!r.magic_is("LBLS")) fail(ErrorKind::Format, "bad magic (expected LBLS)");
    r.skip(4);
    const auto version = r.u16();
    if (version != kFormatVersion) fail(ErrorKind::Format, "unsupported LBLS version " + std::to_string(version));
    if (r.u16() != 0) fail(ErrorKind::Format, "reserved LBLS field is not zero");
    const auto count = r.u32();
    r.need(std::size_t{count} * 2);
    std::vector<std::uint16_t> labels(count);
    for (auto& l : labels) l = r.u16();
    if (r.remaining() != 0) fail(ErrorKind::Format, "trailing bytes after LBLS payload");
    return labels;
  });
}

void write_point_labels(std::span<const std::uint16_t> labels, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_magic("LBLS");
  w.put_u16(kFormatVersion);
  w.put_u16(0);
  w.put_u32(static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) w.put_u16(l);
  with_path(path, [&] { write_file_bytes(path, w.bytes()); });
}

// ---------------------------------------------------------------------------
// Rig configuration

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    fail(ErrorKind::InvalidArgument, "missing required key '" + where + key + "'");
  return obj.at(key);
}

double number_at(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number()) fail(ErrorKind::InvalidArgument, "key '" + where + key + "' must be a number");
  return v.get<double>();
}

}  // namespace

RigConfig parse_rig_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::InvalidArgument, std::string("rig config is not valid JSON: ") + e.what());
  }
  RigConfig rig;
  const auto& in = require(root, "intrinsics", "");
  auto& k = rig.intrinsics;
  k.fx = number_at(in, "fx", "intrinsics.");
  k.fy = number_at(in, "fy", "intrinsics.");
  k.cx = number_at(in, "cx", "intrinsics.");
  k.cy = number_at(in, "cy", "intrinsics.");
  const double width = number_at(in, "width", "intrinsics.");
  const double height = number_at(in, "height", "intrinsics.");
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) fail(ErrorKind::InvalidArgument, "intrinsics fx and fy must be > 0");
  if (!(width >= 1.0) || !(height >= 1.0) || width != std::floor(width) || height != std::floor(height) ||
      width > 1e6 || height > 1e6)
    fail(ErrorKind::InvalidArgument, "intrinsics width/height must be positive integers");
  k.width = static_cast<std::uint32_t>(width);
  k.height = static_cast<std::uint32_t>(height);
  if (in.contains("distortion")) {
    const auto& d = in.at("distortion");
    k.distortion.k1 = number_at(d, "k1", "intrinsics.distortion.");
    k.distortion.k2 = number_at(d, "k2", "intrinsics.distortion.");
    k.distortion.p1 = number_at(d, "p1", "intrinsics.distortion.");
    k.distortion.p2 = number_at(d, "p2", "intrinsics.distortion.");
  }

  const auto& ex = require(root, "extrinsics", "");
  const auto& rot = require(ex, "rotation", "extrinsics.");
  const auto& tr = require(ex, "translation", "extrinsics.");
  if (!rot.is_array() || rot.size() != 3) fail(ErrorKind::InvalidArgument, "extrinsics.rotation must be 3x3");
  if (!tr.is_array() || tr.size() != 3) fail(ErrorKind::InvalidArgument, "extrinsics.translation must have 3 entries");
  Mat3 r{};
  Vec3 t{};
  for (int i = 0; i < 3; ++i) {
    if (!rot[i].is_array() || rot[i].size() != 3)
      fail(ErrorKind::InvalidArgument, "extrinsics.rotation must be 3x3");
    for (int j = 0; j < 3; ++j) {
      if (!rot[i][j].is_number()) fail(ErrorKind::InvalidArgument, "extrinsics.rotation entries must be numbers");
      r[i][j] = rot[i][j].get<double>();
    }
    if (!tr[i].is_number()) fail(ErrorKind::InvalidArgument, "extrinsics.translation entries must be numbers");
    t[i] = tr[i].get<double>();
  }
  if (orthonormality_error(r) > 1e-6) fail(ErrorKind::InvalidArgument, "extrinsics.rotation is not orthonormal");
  if (std::abs(mat_det(r) - 1.0) > 1e-6)
    fail(ErrorKind::InvalidArgument, "extrinsics.rotation must have determinant +1");
  rig.lidar_to_camera = RigidTransform(polar_orthonormalize(r), t);

  if (root.contains("min_depth")) rig.min_depth = number_at(root, "min_depth", "");
  if (!(rig.min_depth > 0.0)) fail(ErrorKind::InvalidArgument, "min_depth must be > 0");
  return rig;
}

RigConfig load_rig_config(const std::filesystem::path& path) {
  return with_path(path, [&] { return parse_rig_config(read_text_file(path)); });
}

std::string rig_config_to_json(const RigConfig& rig) {
  nlohmann::ordered_json j;
  const auto& k = rig.intrinsics;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
                     {"width", k.width}, {"height", k.height},
                     {"distortion", {{"k1", k.distortion.k1}, {"k2", k.distortion.k2},
                                     {"p1", k.distortion.p1}, {"p2", k.distortion.p2}}}};
  const auto& r = rig.lidar_to_camera.rotation();
  const auto& t = rig.lidar_to_camera.translation();
  j["extrinsics"] = {{"rotation", {{r[0][0], r[0][1], r[0][2]}, {r[1][0], r[1][1], r[1][2]}, {r[2][0], r[2][1], r[2][2]}}},
                     {"translation", {t[0], t[1], t[2]}}};
  j["min_depth"] = rig.min_depth;
  return j.dump(2) + "\n";
}

void save_rig_config(const RigConfig& rig, const std::filesystem::path& path) {
  write_text_file(path, rig_config_to_json(rig));
}

}  // namespace frameseg
