#include "checks.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include <Eigen/Dense>

#include "frameseg/geometry.hpp"
#include "frameseg/labelspace.hpp"
#include "frameseg/metrics.hpp"
#include "frameseg/random.hpp"
#include "frameseg/student.hpp"
#include "frameseg/synthgen.hpp"
#include "frameseg/tensorgrad.hpp"

namespace frameseg::checks {
namespace {

using T64 = tg::Tensor64;

T64 random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  T64 t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

void note(Outcome& out, double err, const std::string& where) {
  if (err > out.worst || out.detail.empty()) {
    out.worst = std::max(out.worst, err);
    out.detail = where;
  }
}

double fd_check(T64& x, const T64& grad, const std::function<double()>& loss) {
  constexpr double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss();
    x[i] = saved - eps;
    const double down = loss();
    x[i] = saved;
    worst = std::max(worst, rel_error(grad[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

/// Fixed random projection turning a tensor into a scalar loss.
double weighted_sum(const T64& y, const T64& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

void check_kernels(Rng& rng, Outcome& out, const std::string& tag) {
  const std::size_t n = 1 + rng.below(5), in = 1 + rng.below(8), o = 1 + rng.below(8);

  // linear
  {
    T64 x = random_tensor(rng, {n, in}), w = random_tensor(rng, {o, in}), b = random_tensor(rng, {o});
    const T64 r = random_tensor(rng, {n, o});
    auto loss = [&] { return weighted_sum(tg::linear(x, w, b), r); };
    T64 dx, dw(w.shape()), db(b.shape());
    tg::linear_backward(x, w, r, &dx, dw, db);
    note(out, fd_check(x, dx, loss), tag + " linear dx");
    note(out, fd_check(w, dw, loss), tag + " linear dw");
    note(out, fd_check(b, db, loss), tag + " linear db");
  }
  // relu, keeping inputs away from the kink
  {
    T64 x = random_tensor(rng, {n, in});
    for (auto& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    const T64 r = random_tensor(rng, {n, in});
    auto loss = [&] { return weighted_sum(tg::relu(x), r); };
    note(out, fd_check(x, tg::relu_backward(x, r), loss), tag + " relu");
  }
  // l2_normalize
  {
    T64 x = random_tensor(rng, {n, in});
    const T64 r = random_tensor(rng, {n, in});
    std::vector<double> norms;
    const T64 y = tg::l2_normalize(x, &norms);
    auto loss = [&] { return weighted_sum(tg::l2_normalize(x), r); };
    note(out, fd_check(x, tg::l2_normalize_backward(y, norms, r), loss), tag + " l2_normalize");
  }
  // scatter-mean and gather
  {
    const std::size_t cells = 1 + rng.below(4);
    std::vector<std::uint32_t> ids(n);
    for (auto& c : ids) c = static_cast<std::uint32_t>(rng.below(cells));
    T64 x = random_tensor(rng, {n, in});
    const T64 r = random_tensor(rng, {cells, in});
    std::vector<std::uint32_t> counts;
    tg::grid_scatter_mean(x, ids, cells, &counts);
    auto loss = [&] { return weighted_sum(tg::grid_scatter_mean(x, ids, cells), r); };
    note(out, fd_check(x, tg::grid_scatter_mean_backward(r, ids, counts), loss), tag + " grid_scatter_mean");

    T64 g = random_tensor(rng, {cells, in});
    const T64 rg = random_tensor(rng, {n, in});
    auto gloss = [&] { return weighted_sum(tg::grid_gather(g, ids), rg); };
    note(out, fd_check(g, tg::grid_gather_backward(rg, ids, cells), gloss), tag + " grid_gather");
  }
  // distill loss through l2_normalize, so the perturbed input stays unconstrained
  {
    T64 s = random_tensor(rng, {n, in});
    const T64 t = tg::l2_normalize(random_tensor(rng, {n, in}));
    std::vector<double> norms;
    const T64 sn = tg::l2_normalize(s, &norms);
    const auto res = tg::distill_loss(sn, t);
    auto loss = [&] { return tg::distill_loss(tg::l2_normalize(s), t).loss; };
    note(out, fd_check(s, tg::l2_normalize_backward(sn, norms, res.grad), loss), tag + " distill_loss");
  }
  // cross entropy with some ignored rows
  {
    T64 logits = random_tensor(rng, {n, o}, 3.0);
    std::vector<std::uint16_t> labels(n);
    for (auto& l : labels) l = rng.below(4) == 0 ? kIgnoreLabel : static_cast<std::uint16_t>(rng.below(o));
    const auto res = tg::cross_entropy(logits, labels, kIgnoreLabel);
    auto loss = [&] { return tg::cross_entropy(logits, labels, kIgnoreLabel).loss; };
    note(out, fd_check(logits, res.grad, loss), tag + " cross_entropy");
  }
}

void check_student(Rng& rng, Outcome& out, const std::string& tag) {
  StudentConfig cfg;
  cfg.embed_dim = static_cast<std::uint32_t>(2 + rng.below(7));
  cfg.depth = static_cast<std::uint32_t>(1 + rng.below(3));
  cfg.grid_cells = 4;
  cfg.cell_size = 0.5;
  cfg.teacher_dim = static_cast<std::uint32_t>(2 + rng.below(4));
  cfg.n_classes = static_cast<std::uint32_t>(2 + rng.below(3));

  const std::size_t n = 1 + rng.below(5);
  std::vector<Point> points(n);
  for (auto& p : points)
    p = {float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)), float(rng.uniform())};
  auto params = init_params<double>(cfg, rng.next());
  // Nonzero biases exercise every bias gradient.
  for (auto* t : params.tensors())
    if (t->rank() == 1)
      for (auto& v : t->values()) v = rng.uniform(-0.1, 0.1);

  const T64 teacher = tg::l2_normalize(random_tensor(rng, {n, cfg.teacher_dim}));
  std::vector<std::uint16_t> labels(n);
  for (auto& l : labels) l = static_cast<std::uint16_t>(rng.below(cfg.n_classes));

  auto loss = [&] {
    const T64 f = forward(params, cfg, points);
    return tg::distill_loss(distill_head(params, f), teacher).loss +
           tg::cross_entropy(classify_head(params, f), labels, kIgnoreLabel).loss;
  };

  ForwardCache<double> cache;
  const T64 feats = forward(params, cfg, points, &cache);
  HeadCache<double> hc;
  const T64 desc = distill_head(params, feats, &hc);
  auto grads = StudentParams<double>::zeros(cfg);
  T64 dfeats = distill_head_backward(params, feats, hc, tg::distill_loss(desc, teacher).grad, grads);
  const auto ce = tg::cross_entropy(classify_head(params, feats), labels, kIgnoreLabel);
  const auto dcls = classify_head_backward(params, feats, ce.grad, grads, true);
  for (std::size_t i = 0; i < dfeats.size(); ++i) dfeats[i] += (*dcls)[i];
  backward(params, cfg, cache, dfeats, grads);

  const auto layout = param_layout(cfg);
  auto p = params.tensors();
  auto g = grads.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) note(out, fd_check(*p[k], *g[k], loss), tag + " student " + layout[k].name);
}

}  // namespace

Outcome gradient_suite(std::size_t instances, std::uint64_t seed) {
  Outcome out;
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::string tag = "instance " + std::to_string(i);
    check_kernels(rng, out, tag);
    check_student(rng, out, tag);
    ++out.instances;
  }
  return out;
}

Outcome distill_loss_fixtures() {
  Outcome out;
  auto run = [&](std::vector<double> s, std::vector<double> t, std::size_t rows, double expected, const char* name) {
    const std::size_t cols = s.size() / rows;
    const auto res = tg::distill_loss(T64::from({rows, cols}, std::move(s)), T64::from({rows, cols}, std::move(t)));
    note(out, std::abs(res.loss - expected), name);
    ++out.instances;
  };
  const double h = std::sqrt(0.5);
  run({h, h, 0.6, 0.8}, {h, h, 0.6, 0.8}, 2, 0.0, "identical rows");
  run({1, 0, 0}, {0, 1, 0}, 1, std::sqrt(2.0), "orthogonal unit rows");
  run({0, 1, 1, 0}, {0, 1, -1, 0}, 2, 1.0, "identical plus antipodal rows");
  return out;
}

Outcome projection_oracle(std::size_t instances, std::uint64_t seed) {
  Outcome out;
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
    const Eigen::Vector3d t(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    RigConfig rig;
    rig.intrinsics.fx = rng.uniform(50, 800);
    rig.intrinsics.fy = rng.uniform(50, 800);
    rig.intrinsics.width = static_cast<std::uint32_t>(64 + rng.below(1200));
    rig.intrinsics.height = static_cast<std::uint32_t>(48 + rng.below(900));
    rig.intrinsics.cx = rng.uniform(0, rig.intrinsics.width);
    rig.intrinsics.cy = rng.uniform(0, rig.intrinsics.height);
    Mat3 rm;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) rm[a][b] = r(a, b);
    rig.lidar_to_camera = RigidTransform(rm, {t.x(), t.y(), t.z()});

    // Aim at the camera frustum most of the time; some points land behind it.
    const Eigen::Vector3d pc(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-0.5, 10));
    const Eigen::Vector3d pl = r.transpose() * (pc - t);
    const Point point{float(pl.x()), float(pl.y()), float(pl.z()), 0.5f};
    const auto proj = project_points(rig, std::span<const Point>(&point, 1)).points[0];

    const Eigen::Vector3d cam = r * Eigen::Vector3d(point.x, point.y, point.z) + t;
    const std::string tag = "instance " + std::to_string(i);
    bool valid = cam.z() >= rig.min_depth;
    double u = 0, v = 0;
    if (valid) {
      u = rig.intrinsics.fx * cam.x() / cam.z() + rig.intrinsics.cx;
      v = rig.intrinsics.fy * cam.y() / cam.z() + rig.intrinsics.cy;
      const double px = std::floor(u + 0.5), py = std::floor(v + 0.5);
      valid = px >= 0 && py >= 0 && px < rig.intrinsics.width && py < rig.intrinsics.height;
    }
    if (valid != proj.valid) {
      note(out, 1.0, tag + " validity differs");
    } else if (valid) {
      note(out, std::max(std::abs(u - proj.u), std::abs(v - proj.v)), tag + " uv");
      if (proj.px != std::floor(u + 0.5) || proj.py != std::floor(v + 0.5)) note(out, 1.0, tag + " pixel differs");
    }
    ++out.instances;
  }
  return out;
}

Outcome metrics_oracle(std::size_t instances, std::uint64_t seed) {
  Outcome out;
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const auto k = static_cast<std::uint16_t>(1 + rng.below(6));
    const std::size_t n = 1 + rng.below(1000);
    std::vector<std::uint16_t> gt(n), pred(n);
    for (std::size_t j = 0; j < n; ++j) {
      // Skewed draws leave some classes absent.
      gt[j] = rng.below(10) == 0 ? kIgnoreLabel : static_cast<std::uint16_t>(rng.below(k) * rng.below(2));
      pred[j] = static_cast<std::uint16_t>(rng.below(k));
    }
    gt[0] = static_cast<std::uint16_t>(rng.below(k));

    ConfusionMatrix cm(k);
    cm.accumulate(gt, pred);
    const Scores s = scores(cm);

    double iou_sum = 0, acc_sum = 0;
    int iou_n = 0, acc_n = 0;
    std::size_t correct = 0, total = 0;
    double worst = 0.0;
    for (std::uint16_t c = 0; c < k; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (gt[j] == kIgnoreLabel) continue;
        tp += gt[j] == c && pred[j] == c;
        fp += gt[j] != c && pred[j] == c;
        fn += gt[j] == c && pred[j] != c;
      }
      if (tp + fp + fn > 0) {
        const double iou = double(tp) / double(tp + fp + fn);
        iou_sum += iou;
        ++iou_n;
        worst = std::max(worst, s.iou[c] ? std::abs(*s.iou[c] - iou) : 1.0);
      } else if (s.iou[c]) {
        worst = 1.0;
      }
      if (tp + fn > 0) {
        const double acc = double(tp) / double(tp + fn);
        acc_sum += acc;
        ++acc_n;
        worst = std::max(worst, s.recall[c] ? std::abs(*s.recall[c] - acc) : 1.0);
      } else if (s.recall[c]) {
        worst = 1.0;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (gt[j] == kIgnoreLabel) continue;
      ++total;
      correct += gt[j] == pred[j];
    }
    worst = std::max({worst, std::abs(s.miou - iou_sum / iou_n), std::abs(s.macc - acc_sum / acc_n),
                      std::abs(s.oacc - double(correct) / double(total)), s.points == total ? 0.0 : 1.0});
    note(out, worst, "instance " + std::to_string(i));
    ++out.instances;
  }
  return out;
}

Outcome transfer_agreement(const RunConfig& cfg, std::uint32_t frames) {
  Outcome out;
  const auto rig = synthetic_rig(cfg.synth);
  std::size_t agree = 0, compared = 0;
  for (std::uint32_t i = 0; i < frames; ++i) {
    const auto f = synthesize_frame(cfg, i);
    const auto mask = render_mask(f.scene, rig, f.world_to_sensor);
    const auto labels = transfer_labels(project_points(rig, f.lidar), mask);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      if (labels[k] == kIgnoreLabel) continue;
      ++compared;
      agree += labels[k] == (*f.lidar.labels)[k];
    }
    ++out.instances;
  }
  out.worst = compared ? double(agree) / double(compared) : 0.0;
  out.detail = std::to_string(agree) + " of " + std::to_string(compared) + " labelled points agree";
  return out;
}

}  // namespace frameseg::checks
