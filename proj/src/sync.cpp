#include "frameseg/sync.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "frameseg/error.hpp"
#include "frameseg/frameio.hpp"

namespace frameseg {

namespace {

std::int64_t signed_diff(std::uint64_t a, std::uint64_t b) {
  return static_cast<std::int64_t>(a - b);  // two's complement wrap gives a - b
}

std::uint64_t abs_diff(std::uint64_t a, std::uint64_t b) { return a > b ? a - b : b - a; }

void require_sorted(std::span<const std::uint64_t> ts, const char* what) {
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (ts[i] < ts[i - 1])
      fail(ErrorKind::Precondition, std::string(what) + " timestamps are not sorted ascending (index " +
                                        std::to_string(i) + ")");
}

}  // namespace

std::vector<FramePairing> pair_frames(std::span<const std::uint64_t> lidar_ts,
                                      std::span<const std::uint64_t> image_ts, std::int64_t max_dt_ns) {
  if (max_dt_ns <= 0) fail(ErrorKind::Precondition, "max_dt_ns must be positive");
  require_sorted(lidar_ts, "lidar");
  require_sorted(image_ts, "image");

  std::vector<FramePairing> out;
  out.reserve(lidar_ts.size());
  std::size_t j = 0;  // first image with ts >= current lidar ts
  for (std::size_t i = 0; i < lidar_ts.size(); ++i) {
    const auto t = lidar_ts[i];
    while (j < image_ts.size() && image_ts[j] < t) ++j;
    FramePairing p;
    p.lidar_index = i;
    std::optional<std::size_t> best;
    if (j > 0) best = j - 1;
    if (j < image_ts.size() && (!best || abs_diff(image_ts[j], t) < abs_diff(image_ts[*best], t))) best = j;
    if (best && abs_diff(image_ts[*best], t) <= static_cast<std::uint64_t>(max_dt_ns)) {
      p.image_index = *best;
      p.dt_ns = signed_diff(image_ts[*best], t);
    }
    out.push_back(p);
  }
  return out;
}

std::array<std::size_t, 3> split_counts(std::size_t n, std::array<double, 3> ratios) {
  const double n_d = static_cast<double>(n);
  // The epsilon absorbs representation error in ratios such as 0.15.
  auto part = [&](double r) { return static_cast<std::size_t>(std::floor(n_d * r + 1e-9)); };
  const std::size_t val = part(ratios[1]);
  const std::size_t test = part(ratios[2]);
  return {n - val - test, val, test};
}

ManifestSplit split_manifest(std::span<const ManifestRecord> records, std::array<double, 3> ratios) {
  if (records.empty()) fail(ErrorKind::Precondition, "cannot split an empty manifest");
  for (double r : ratios)
    if (!(r >= 0.0)) fail(ErrorKind::Precondition, "split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    fail(ErrorKind::Precondition, "split ratios must sum to 1");

  // Sequences in order of first appearance, records in manifest order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ManifestRecord*>> groups;
  for (const auto& r : records) {
    const auto seq = std::filesystem::path(r.lidar).parent_path().generic_string();
    auto [it, inserted] = groups.try_emplace(seq);
    if (inserted) order.push_back(seq);
    it->second.push_back(&r);
  }

  ManifestSplit split;
  for (const auto& seq : order) {
    const auto& g = groups[seq];
    const auto [n_train, n_val, n_test] = split_counts(g.size(), ratios);
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
      dst.push_back(*g[i]);
    }
    (void)n_test;
  }
  return split;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json opt_string(const std::optional<std::string>& s) { return s ? ordered_json(*s) : ordered_json(nullptr); }

std::optional<std::string> read_opt_string(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string())
    fail(ErrorKind::Format, "manifest line " + std::to_string(line) + ": '" + key + "' must be a string or null");
  return j.at(key).get<std::string>();
}

}  // namespace

std::string manifest_to_jsonl(std::span<const ManifestRecord> records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["lidar"] = r.lidar;
    j["image"] = opt_string(r.image);
    j["mask"] = opt_string(r.mask);
    j["featmap"] = opt_string(r.featmap);
    j["labels"] = opt_string(r.labels);
    j["dt_ns"] = r.dt_ns ? ordered_json(*r.dt_ns) : ordered_json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<ManifestRecord> manifest_from_jsonl(const std::string& text) {
  std::vector<ManifestRecord> records;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": not an object");
    ManifestRecord r;
    auto lidar = read_opt_string(j, "lidar", line_no);
    if (!lidar) fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": missing 'lidar'");
    r.lidar = *lidar;
    r.image = read_opt_string(j, "image", line_no);
    r.mask = read_opt_string(j, "mask", line_no);
    r.featmap = read_opt_string(j, "featmap", line_no);
    r.labels = read_opt_string(j, "labels", line_no);
    if (j.contains("dt_ns") && !j.at("dt_ns").is_null()) {
      if (!j.at("dt_ns").is_number_integer())
        fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": 'dt_ns' must be an integer");
      r.dt_ns = j.at("dt_ns").get<std::int64_t>();
    }
    if (!seen.insert(r.lidar).second)
      fail(ErrorKind::Consistency, "manifest line " + std::to_string(line_no) + ": duplicate lidar path " + r.lidar);
    records.push_back(std::move(r));
  }
  return records;
}

PairManifest read_manifest(const std::filesystem::path& path) {
  PairManifest m;
  try {
    m.records = manifest_from_jsonl(read_text_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path) {
  write_text_file(path, manifest_to_jsonl(records));
}

std::vector<ManifestRecord> rebase_manifest(std::span<const ManifestRecord> records,
                                            const std::filesystem::path& from_dir,
                                            const std::filesystem::path& to_dir) {
  const auto from = std::filesystem::weakly_canonical(from_dir.empty() ? "." : from_dir);
  const auto to = std::filesystem::weakly_canonical(to_dir.empty() ? "." : to_dir);
  if (from == to) return {records.begin(), records.end()};
  auto move = [&](const std::string& p) {
    const auto abs = std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : from / p;
    return std::filesystem::path(abs).lexically_normal().lexically_relative(to).generic_string();
  };
  auto move_opt = [&](const std::optional<std::string>& p) -> std::optional<std::string> {
    return p ? std::optional(move(*p)) : std::nullopt;
  };
  std::vector<ManifestRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    ManifestRecord m = r;
    m.lidar = move(r.lidar);
    m.image = move_opt(r.image);
    m.mask = move_opt(r.mask);
    m.featmap = move_opt(r.featmap);
    m.labels = move_opt(r.labels);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace frameseg
