#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace frameseg {

/// One lidar frame and whatever camera-side artifacts were paired with it.
/// Paths are stored as written in the manifest (relative to its directory).
struct ManifestRecord {
  std::string lidar;
  std::optional<std::string> image;
  std::optional<std::string> mask;
  std::optional<std::string> featmap;
  std::optional<std::string> labels;
  std::optional<std::int64_t> dt_ns;  // image_ts - lidar_ts, paired records only

  bool paired() const { return image.has_value(); }
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct PairManifest {
  std::vector<ManifestRecord> records;
  /// Directory relative paths resolve against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

struct FramePairing {
  std::size_t lidar_index = 0;
  std::optional<std::size_t> image_index;
  std::int64_t dt_ns = 0;  // meaningful only when image_index is set
};

/// Nearest-image pairing by two-pointer scan; ties go to the earlier image and
/// lidar frames farther than max_dt_ns from every image stay unpaired.
/// Throws Error(Precondition) on unsorted input or max_dt_ns <= 0.
std::vector<FramePairing> pair_frames(std::span<const std::uint64_t> lidar_ts,
                                      std::span<const std::uint64_t> image_ts, std::int64_t max_dt_ns);

struct ManifestSplit {
  std::vector<ManifestRecord> train, val, test;
};

/// Contiguous temporal split per sequence (lidar parent directory). val and test
/// get floor(n * ratio) records, train takes the remainder.
ManifestSplit split_manifest(std::span<const ManifestRecord> records,
                             std::array<double, 3> ratios = {0.70, 0.15, 0.15});

/// Split sizes for a single sequence of n records.
std::array<std::size_t, 3> split_counts(std::size_t n, std::array<double, 3> ratios);

std::string manifest_to_jsonl(std::span<const ManifestRecord> records);
std::vector<ManifestRecord> manifest_from_jsonl(const std::string& text);

PairManifest read_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path);

/// Re-expresses every path of `records` (relative to from_dir) relative to to_dir.
std::vector<ManifestRecord> rebase_manifest(std::span<const ManifestRecord> records,
                                            const std::filesystem::path& from_dir,
                                            const std::filesystem::path& to_dir);

}  // namespace frameseg
