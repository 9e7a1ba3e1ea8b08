#include "frameseg/labelspace.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <set>
#include <sstream>

#include "frameseg/error.hpp"

namespace frameseg {

LabelMap::LabelMap(std::vector<std::uint16_t> table, std::uint16_t target_count,
                   std::vector<std::string> target_names)
    : table_(std::move(table)), target_count_(target_count), target_names_(std::move(target_names)) {
  for (std::size_t i = 0; i < table_.size(); ++i)
    if (table_[i] != kIgnoreLabel && table_[i] >= target_count_)
      fail(ErrorKind::InvalidArgument, "label map: source " + std::to_string(i) + " maps to " +
                                           std::to_string(table_[i]) + ", out of range for " +
                                           std::to_string(target_count_) + " classes");
}

LabelMap LabelMap::identity(std::uint16_t classes) {
  std::vector<std::uint16_t> table(classes);
  for (std::uint16_t i = 0; i < classes; ++i) table[i] = i;
  return LabelMap(std::move(table), classes);
}

const std::vector<std::string>& structural_class_names() {
  static const std::vector<std::string> names{"wall", "floor", "ceiling", "non-structural"};
  return names;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

}  // namespace

LabelMap builtin_structural_map(std::span<const std::string> source_names, StructuralVariant variant,
                                std::span<const std::string> ignore_names) {
  std::set<std::string> ignored;
  for (const auto& n : ignore_names) ignored.insert(lower(n));

  std::vector<std::uint16_t> table(source_names.size(), kIgnoreLabel);
  for (std::size_t i = 0; i < source_names.size(); ++i) {
    const auto name = lower(source_names[i]);
    if (name == "wall" || name == "building") table[i] = kWall;
    else if (name == "floor" || name == "sidewalk" || name == "road") table[i] = kFloor;
    else if (name == "ceiling") table[i] = kCeiling;
    else if (variant == StructuralVariant::Pseudo && ignored.contains(name)) table[i] = kIgnoreLabel;
    else table[i] = kNonStructural;
  }
  return LabelMap(std::move(table), kStructuralClassCount, structural_class_names());
}

LabelMap parse_label_map(const std::string& text, std::uint16_t target_count) {
  std::vector<std::uint16_t> table;
  std::set<std::uint32_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::InvalidArgument, "label map line " + std::to_string(line_no) + ": " + why);
  };
  auto parse_id = [&](const std::string& s) -> std::uint32_t {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
      bad("'" + s + "' is not a class id");
    const auto v = std::stoull(s);
    if (v > std::numeric_limits<std::uint16_t>::max()) bad("class id " + s + " out of range");
    return static_cast<std::uint32_t>(v);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) bad("expected '<src_id>\\t<target_id|IGNORE>'");
    const std::string src_text = line.substr(0, tab);
    const std::string dst_text = line.substr(tab + 1);
    const auto src = parse_id(src_text);
    if (src == kIgnoreLabel) bad("the ignore id cannot be remapped");
    std::uint16_t dst = kIgnoreLabel;
    if (dst_text != "IGNORE") {
      const auto v = parse_id(dst_text);
      if (v != kIgnoreLabel && v >= target_count)
        bad("target " + dst_text + " out of range for " + std::to_string(target_count) + " classes");
      dst = static_cast<std::uint16_t>(v);
    }
    if (!seen.insert(src).second) bad("duplicate source id " + src_text);
    if (table.size() <= src) table.resize(src + 1, kIgnoreLabel);
    table[src] = dst;
  }
  return LabelMap(std::move(table), target_count);
}

LabelMap load_label_map(const std::filesystem::path& path, std::uint16_t target_count) {
  try {
    return parse_label_map(read_text_file(path), target_count);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

SemanticMask remap_mask(const SemanticMask& mask, const LabelMap& map) {
  SemanticMask out = mask;
  for (auto& id : out.ids) id = id == kIgnoreLabel ? kIgnoreLabel : map.apply(id);
  return out;
}

std::vector<std::uint16_t> remap_labels(std::span<const std::uint16_t> labels, const LabelMap& map) {
  std::vector<std::uint16_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = labels[i] == kIgnoreLabel ? kIgnoreLabel : map.apply(labels[i]);
  return out;
}

std::vector<std::uint16_t> transfer_labels(const ProjectionMap& proj, const SemanticMask& mask,
                                           const TransferOptions& options) {
  if (mask.width != proj.width || mask.height != proj.height)
    fail(ErrorKind::Mismatch, "mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                                  " but projection targets " + std::to_string(proj.width) + "x" +
                                  std::to_string(proj.height));
  std::vector<double> nearest;
  if (options.depth_filter) {
    nearest.assign(std::size_t{mask.width} * mask.height, std::numeric_limits<double>::infinity());
    for (const auto& p : proj.points)
      if (p.valid) {
        auto& d = nearest[std::size_t(p.py) * mask.width + std::size_t(p.px)];
        d = std::min(d, p.depth);
      }
  }
  std::vector<std::uint16_t> labels(proj.points.size(), kIgnoreLabel);
  for (std::size_t i = 0; i < proj.points.size(); ++i) {
    const auto& p = proj.points[i];
    if (!p.valid) continue;
    const std::size_t at = std::size_t(p.py) * mask.width + std::size_t(p.px);
    if (options.depth_filter && p.depth > nearest[at] + options.depth_tolerance_m) continue;
    labels[i] = mask.ids[at];
  }
  return labels;
}

}  // namespace frameseg
