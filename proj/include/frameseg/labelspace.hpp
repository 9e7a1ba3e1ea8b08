#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "frameseg/frameio.hpp"
#include "frameseg/geometry.hpp"
#include "frameseg/types.hpp"

namespace frameseg {

/// Total map from a source taxonomy onto `target_count` classes. Sources beyond
/// the table, and the ignore id itself, map to kIgnoreLabel.
class LabelMap {
 public:
  LabelMap() = default;
  /// Throws Error(InvalidArgument) if a target is neither < target_count nor ignore.
  LabelMap(std::vector<std::uint16_t> table, std::uint16_t target_count, std::vector<std::string> target_names = {});

  static LabelMap identity(std::uint16_t classes);

  std::uint16_t apply(std::uint16_t source) const {
    return source < table_.size() ? table_[source] : kIgnoreLabel;
  }
  std::uint16_t target_count() const { return target_count_; }
  const std::vector<std::string>& target_names() const { return target_names_; }
  const std::vector<std::uint16_t>& table() const { return table_; }

 private:
  std::vector<std::uint16_t> table_;
  std::uint16_t target_count_ = 0;
  std::vector<std::string> target_names_;
};

enum class StructuralVariant {
  Pseudo,  // the ignore list is dropped, other sources become non-structural
  Real,    // everything but wall/floor/ceiling is non-structural
};

const std::vector<std::string>& structural_class_names();

/// Builtin four-class structural map keyed by source class names (case-insensitive).
LabelMap builtin_structural_map(std::span<const std::string> source_names, StructuralVariant variant,
                                std::span<const std::string> ignore_names = {});

/// Parses `src_id<TAB>target_id|IGNORE` lines; blank lines and '#' comments are skipped.
LabelMap parse_label_map(const std::string& text, std::uint16_t target_count);
LabelMap load_label_map(const std::filesystem::path& path, std::uint16_t target_count);

SemanticMask remap_mask(const SemanticMask& mask, const LabelMap& map);
std::vector<std::uint16_t> remap_labels(std::span<const std::uint16_t> labels, const LabelMap& map);

struct TransferOptions {
  /// Drop points lying more than depth_tolerance_m behind the nearest point on their pixel.
  bool depth_filter = false;
  double depth_tolerance_m = 0.2;
};

/// Mask-to-point label transfer at each point's rounded pixel; invalid points get ignore.
std::vector<std::uint16_t> transfer_labels(const ProjectionMap& proj, const SemanticMask& mask,
                                           const TransferOptions& options = {});

}  // namespace frameseg
