#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "frameseg/student.hpp"
#include "test_util.hpp"

using namespace frameseg;
using frameseg::test::error_kind_of;
using frameseg::test::TempDir;
using tg::Tensor64;

namespace {

StudentConfig small_config() {
  StudentConfig c;
  c.embed_dim = 8;
  c.depth = 4;
  c.grid_cells = 8;
  c.cell_size = 0.5;
  c.teacher_dim = 5;
  c.n_classes = 4;
  return c;
}

std::vector<Point> random_points(Rng& rng, std::size_t n, double extent = 3.0) {
  std::vector<Point> pts(n);
  for (auto& p : pts)
    p = {float(rng.uniform(-extent, extent)), float(rng.uniform(-extent, extent)), float(rng.uniform(-1, 1)),
         float(rng.uniform())};
  return pts;
}

}  // namespace

TEST(StudentConfig, JsonAndFingerprint) {
  const auto c = small_config();
  EXPECT_EQ(StudentConfig::from_json(c.to_json()), c);
  auto d = c;
  d.depth = 5;
  EXPECT_NE(c.fingerprint(), d.fingerprint());
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  d.embed_dim = 0;
  EXPECT_EQ(error_kind_of([&] { d.validate(); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind_of([] { StudentConfig::from_json("{\"depth\": 1}"); }), ErrorKind::Format);
}

TEST(StudentParams, InitIsSeededAndBiasesStartAtZero) {
  const auto c = small_config();
  const auto a = init_params<float>(c, 1), b = init_params<float>(c, 1), d = init_params<float>(c, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
  const auto layout = param_layout(c);
  const auto tensors = a.tensors();
  ASSERT_EQ(layout.size(), tensors.size());
  EXPECT_EQ(layout.front().name, "embed.weight");
  EXPECT_EQ(layout.front().stack_index, 0u);
  EXPECT_EQ(layout.back().name, "classifier.bias");
  EXPECT_EQ(layout.back().stack_index, c.depth + 1);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    if (tensors[k]->rank() == 1) {
      for (float v : tensors[k]->values()) EXPECT_EQ(v, 0.0f) << layout[k].name;
    } else {
      const double bound = std::sqrt(6.0 / double(tensors[k]->rows() + tensors[k]->cols()));
      for (float v : tensors[k]->values()) EXPECT_LE(std::abs(v), bound) << layout[k].name;
    }
  }
  EXPECT_EQ(a.cast<double>().cast<float>(), a);
}

TEST(StudentForward, ShapesAndEmptyInput) {
  const auto c = small_config();
  const auto p = init_params<float>(c, 3);
  Rng rng(1);
  const auto pts = random_points(rng, 50);
  const auto f = forward(p, c, pts);
  EXPECT_EQ(f.shape(), (std::vector<std::size_t>{50, 8}));
  EXPECT_TRUE(f.all_finite());
  EXPECT_EQ(classify_head(p, f).shape(), (std::vector<std::size_t>{50, 4}));
  const auto desc = distill_head(p, f);
  for (std::size_t r = 0; r < desc.rows(); ++r) {
    double ss = 0;
    for (float v : desc.row(r)) ss += double(v) * v;
    EXPECT_NEAR(ss, 1.0, 1e-5);
  }
  EXPECT_EQ(error_kind_of([&] { forward(p, c, std::span<const Point>{}); }), ErrorKind::Precondition);
  auto deeper = c;
  deeper.depth = 5;
  EXPECT_EQ(error_kind_of([&] { forward(p, deeper, pts); }), ErrorKind::Mismatch);
}

TEST(StudentForward, SinglePointAndDuplicates) {
  const auto c = small_config();
  const auto p = init_params<double>(c, 3);
  const Point a{1.0f, 2.0f, 0.5f, 0.3f};
  const auto one = forward(p, c, std::span<const Point>(&a, 1));
  EXPECT_EQ(one.rows(), 1u);
  EXPECT_TRUE(one.all_finite());

  Rng rng(2);
  auto pts = random_points(rng, 20);
  pts[7] = pts[3];
  const auto f = forward(p, c, pts);
  for (std::size_t k = 0; k < c.embed_dim; ++k) EXPECT_EQ(f(3, k), f(7, k));
}

TEST(StudentForward, PermutationEquivariant) {
  const auto c = small_config();
  const auto p = init_params<double>(c, 4);
  Rng rng(5);
  const auto pts = random_points(rng, 60);
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<Point> shuffled(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = pts[perm[i]];
  const auto a = forward(p, c, pts), b = forward(p, c, shuffled);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < c.embed_dim; ++k) EXPECT_NEAR(b(i, k), a(perm[i], k), 1e-12);
}

TEST(StudentForward, TranslationInvariant) {
  // Dyadic coordinates and a power-of-two point count keep the centroid exact,
  // so a rigid shift of the whole frame must give bit-identical features.
  const auto c = small_config();
  const auto p = init_params<double>(c, 6);
  Rng rng(7);
  std::vector<Point> pts(16), moved(16);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = {float(rng.below(48)) / 8.0f - 3.0f, float(rng.below(48)) / 8.0f - 3.0f, float(rng.below(16)) / 8.0f,
              0.5f};
    moved[i] = {pts[i].x + 3.0f, pts[i].y - 2.0f, pts[i].z + 5.0f, pts[i].intensity};
  }
  EXPECT_EQ(forward(p, c, pts), forward(p, c, moved));
}

TEST(StudentForward, FloatTracksDouble) {
  const auto c = small_config();
  const auto p = init_params<float>(c, 8);
  Rng rng(9);
  const auto pts = random_points(rng, 100);
  const auto f = forward(p, c, pts);
  const auto d = forward(p.cast<double>(), c, pts);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], d[i], 1e-4);
}

TEST(StudentForward, CellAssignment) {
  auto c = small_config();
  c.grid_cells = 4;
  c.cell_size = 1.0;
  // Centroid is the origin; the far point clamps into the last cell.
  const std::vector<Point> pts{{-0.5f, 0, 0, 0}, {0.5f, 0, 0, 0}, {100.0f, 0, 0, 0}, {-100.0f, 0, 0, 0}};
  const auto g = assign_cells(c, pts);
  EXPECT_EQ(g.centroid[0], 0.0);
  // XY plane: x cells 1, 2, 3, 0 and every y in cell 2
  EXPECT_EQ(g.planes[0].n_cells, 4u);
  EXPECT_EQ(g.planes[0].cell_of_point, (std::vector<std::uint32_t>{1, 2, 3, 0}));
  EXPECT_EQ(g.planes[2].n_cells, 1u);
  EXPECT_EQ(residual_scale(c), 0.5);
}

TEST(StudentBackward, ThreePointEndToEnd) {
  auto c = small_config();
  c.embed_dim = 4;
  c.depth = 3;
  c.teacher_dim = 3;
  c.n_classes = 3;
  auto p = init_params<double>(c, 10);
  Rng rng(11);
  for (auto* t : p.tensors())
    if (t->rank() == 1)
      for (auto& v : t->values()) v = rng.uniform(-0.1, 0.1);
  const std::vector<Point> pts{{0.1f, 0.2f, 0.3f, 0.9f}, {1.4f, -0.7f, 0.2f, 0.1f}, {-0.9f, 0.8f, -0.4f, 0.5f}};
  const auto teacher = tg::l2_normalize(frameseg::test::random_tensor(rng, {3, 3}));
  const std::vector<std::uint16_t> labels{0, 2, kIgnoreLabel};

  auto loss = [&] {
    const auto f = forward(p, c, pts);
    return tg::distill_loss(distill_head(p, f), teacher).loss +
           tg::cross_entropy(classify_head(p, f), labels, kIgnoreLabel).loss;
  };
  ForwardCache<double> cache;
  const auto f = forward(p, c, pts, &cache);
  HeadCache<double> hc;
  const auto desc = distill_head(p, f, &hc);
  auto grads = StudentParams<double>::zeros(c);
  auto df = distill_head_backward(p, f, hc, tg::distill_loss(desc, teacher).grad, grads);
  const auto dc = classify_head_backward(p, f, tg::cross_entropy(classify_head(p, f), labels, kIgnoreLabel).grad,
                                         grads, true);
  ASSERT_TRUE(dc);
  for (std::size_t i = 0; i < df.size(); ++i) df[i] += (*dc)[i];
  backward(p, c, cache, df, grads);

  auto pt = p.tensors();
  auto gt = grads.tensors();
  const auto layout = param_layout(c);
  for (std::size_t k = 0; k < pt.size(); ++k)
    EXPECT_LT(frameseg::test::max_fd_error(*pt[k], *gt[k], loss), 1e-6) << layout[k].name;
}

TEST(Checkpoint, RoundTripAndErrors) {
  TempDir dir;
  Checkpoint ck{small_config(), init_params<float>(small_config(), 12), std::nullopt};
  const auto bytes = encode_checkpoint(ck);
  EXPECT_EQ(decode_checkpoint(bytes), ck);
  save_checkpoint(ck, dir / "a.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt"), ck);
  EXPECT_EQ(read_file_bytes(dir / "a.ckpt"), bytes);

  auto with_opt = ck;
  auto tensors = with_opt.params.tensors();
  std::vector<tg::Tensor32*> ptrs(tensors.begin(), tensors.end());
  with_opt.optimizer = tg::adamw_init<float>(ptrs);
  with_opt.optimizer->step = 17;
  with_opt.optimizer->m[0][0] = 0.25f;
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(with_opt)), with_opt);

  auto tampered = bytes;
  tampered[20 + 2] ^= 0x01;  // inside the config JSON
  EXPECT_EQ(error_kind_of([&] { decode_checkpoint(tampered); }), ErrorKind::Mismatch);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(error_kind_of([&] { decode_checkpoint(magic); }), ErrorKind::Format);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  EXPECT_EQ(error_kind_of([&] { decode_checkpoint(cut); }), ErrorKind::Truncation);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_EQ(error_kind_of([&] { decode_checkpoint(longer); }), ErrorKind::Format);
}

TEST(Inference, MemoryEstimateGrowsWithDepth) {
  auto c = small_config();
  const auto a = inference_memory_bytes(c, 5760);
  c.depth = 16;
  EXPECT_GT(inference_memory_bytes(c, 5760), a);
}
