#include <gtest/gtest.h>

#include "frameseg/labelspace.hpp"
#include "test_util.hpp"

using namespace frameseg;
using frameseg::test::error_kind_of;
using frameseg::test::TempDir;

namespace {

const std::vector<std::string> kSource{"wall", "Building", "floor", "sidewalk", "road", "ceiling",
                                       "chair", "desk", "furniture", "person"};

std::uint16_t source_id(const std::string& name) {
  for (std::size_t i = 0; i < kSource.size(); ++i)
    if (kSource[i] == name) return static_cast<std::uint16_t>(i);
  return kIgnoreLabel;
}

PointProjection at(std::int32_t px, std::int32_t py, double depth) {
  return {true, double(px), double(py), px, py, depth};
}

}  // namespace

TEST(StructuralMap, PseudoVariant) {
  const std::vector<std::string> ignore{"chair", "desk", "furniture"};
  const auto m = builtin_structural_map(kSource, StructuralVariant::Pseudo, ignore);
  EXPECT_EQ(m.target_count(), 4);
  EXPECT_EQ(m.apply(source_id("wall")), kWall);
  EXPECT_EQ(m.apply(source_id("Building")), kWall);
  EXPECT_EQ(m.apply(source_id("floor")), kFloor);
  EXPECT_EQ(m.apply(source_id("sidewalk")), kFloor);
  EXPECT_EQ(m.apply(source_id("road")), kFloor);
  EXPECT_EQ(m.apply(source_id("ceiling")), kCeiling);
  EXPECT_EQ(m.apply(source_id("chair")), kIgnoreLabel);
  EXPECT_EQ(m.apply(source_id("desk")), kIgnoreLabel);
  EXPECT_EQ(m.apply(source_id("person")), kNonStructural);
  EXPECT_EQ(m.apply(kIgnoreLabel), kIgnoreLabel);
  EXPECT_EQ(m.apply(500), kIgnoreLabel);
}

TEST(StructuralMap, RealVariant) {
  const std::vector<std::string> ignore{"chair", "desk", "furniture"};
  const auto m = builtin_structural_map(kSource, StructuralVariant::Real, ignore);
  EXPECT_EQ(m.apply(source_id("desk")), kNonStructural);
  EXPECT_EQ(m.apply(source_id("chair")), kNonStructural);
  EXPECT_EQ(m.apply(source_id("ceiling")), kCeiling);
  EXPECT_EQ(m.target_names(), structural_class_names());
}

TEST(LabelMapText, ParseAndErrors) {
  const auto m = parse_label_map("# comment\n0\t2\n\n3\tIGNORE\r\n5\t0\n", 4);
  EXPECT_EQ(m.apply(0), 2);
  EXPECT_EQ(m.apply(3), kIgnoreLabel);
  EXPECT_EQ(m.apply(5), 0);
  EXPECT_EQ(m.apply(1), kIgnoreLabel);
  EXPECT_EQ(error_kind_of([] { parse_label_map("0\t4\n", 4); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { parse_label_map("0 1\n", 4); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { parse_label_map("0\t1\n0\t2\n", 4); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { parse_label_map("x\t1\n", 4); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { LabelMap({0, 9}, 4); }), ErrorKind::InvalidArgument);

  TempDir dir;
  write_text_file(dir / "map.tsv", "1\t3\n");
  EXPECT_EQ(load_label_map(dir / "map.tsv", 4).apply(1), 3);
}

TEST(Remap, MaskAndLabels) {
  const auto m = LabelMap({1, 0, kIgnoreLabel}, 2);
  const SemanticMask mask{2, 2, {0, 1, 2, kIgnoreLabel}};
  EXPECT_EQ(remap_mask(mask, m).ids, (std::vector<std::uint16_t>{1, 0, kIgnoreLabel, kIgnoreLabel}));
  const std::vector<std::uint16_t> labels{2, 1, 7};
  EXPECT_EQ(remap_labels(labels, m), (std::vector<std::uint16_t>{kIgnoreLabel, 0, kIgnoreLabel}));
  const auto id = LabelMap::identity(3);
  EXPECT_EQ(remap_mask(SemanticMask{1, 2, {2, 0}}, id).ids, (std::vector<std::uint16_t>{2, 0}));
}

TEST(Transfer, Fixtures) {
  SemanticMask mask{5, 4, std::vector<std::uint16_t>(20, kFloor)};
  mask.ids[2 * 5 + 3] = kWall;

  ProjectionMap proj{5, 4, {PointProjection{}, PointProjection{}}};
  EXPECT_EQ(transfer_labels(proj, mask), (std::vector<std::uint16_t>{kIgnoreLabel, kIgnoreLabel}));

  proj.points = {at(3, 2, 1.0)};
  EXPECT_EQ(transfer_labels(proj, mask), std::vector<std::uint16_t>{kWall});

  proj.points = {at(3, 2, 1.0), at(3, 2, 4.0), at(0, 0, 2.0)};
  EXPECT_EQ(transfer_labels(proj, mask), (std::vector<std::uint16_t>{kWall, kWall, kFloor}));

  TransferOptions filter{true, 0.2};
  EXPECT_EQ(transfer_labels(proj, mask, filter), (std::vector<std::uint16_t>{kWall, kIgnoreLabel, kFloor}));
  proj.points[1].depth = 1.15;
  EXPECT_EQ(transfer_labels(proj, mask, filter), (std::vector<std::uint16_t>{kWall, kWall, kFloor}));

  ProjectionMap other{4, 4, {}};
  EXPECT_EQ(error_kind_of([&] { transfer_labels(other, mask); }), ErrorKind::Mismatch);
}
