#pragma once

// Dense kernels with explicit forward/backward pairs. Everything is templated
// on the storage type so the same code runs in float for training and in
// double for finite-difference gradient checks. Reductions accumulate in
// double regardless of the storage type.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frameseg/error.hpp"
#include "frameseg/frameio.hpp"

namespace frameseg::tg {

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>()), T(0)) {}
  Tensor(std::size_t rows, std::size_t cols) : Tensor(std::vector<std::size_t>{rows, cols}) {}

  static Tensor from(std::vector<std::size_t> shape, std::vector<T> data) {
    Tensor t(std::move(shape));
    if (data.size() != t.data_.size()) fail(ErrorKind::Mismatch, "tensor data does not match its shape");
    t.data_ = std::move(data);
    return t;
  }
  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) fail(ErrorKind::Mismatch, what);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// linear: y = x W^T + b with x: N x I, W: O x I, b: O

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.cols() == w.cols(), "linear: input/weight shape mismatch");
  detail::require(b.size() == w.rows(), "linear: bias shape mismatch");
  const std::size_t n = x.rows(), in = x.cols(), out = w.rows();
  Tensor<T> y(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * in;
    T* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = w.data() + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += double(xr[i]) * double(wo[i]);
      yr[o] = static_cast<T>(acc);
    }
  }
  return y;
}

/// Accumulates dW += dy^T x and db += sum(dy); writes dx = dy W when requested.
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dw,
                     Tensor<T>& db) {
  detail::require(dy.rows() == x.rows() && dy.cols() == w.rows(), "linear_backward: gradient shape mismatch");
  detail::require(dw.shape() == w.shape() && db.size() == w.rows(), "linear_backward: accumulator shape mismatch");
  const std::size_t n = x.rows(), in = x.cols(), out = w.rows();
  std::vector<double> gw(out * in, 0.0), gb(out, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * in;
    const T* dyr = dy.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      gb[o] += g;
      double* gwo = gw.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gwo[i] += g * double(xr[i]);
    }
  }
  for (std::size_t k = 0; k < gw.size(); ++k) dw[k] = static_cast<T>(double(dw[k]) + gw[k]);
  for (std::size_t o = 0; o < out; ++o) db[o] = static_cast<T>(double(db[o]) + gb[o]);

  if (dx) {
    *dx = Tensor<T>(n, in);
    std::vector<double> acc(in);
    for (std::size_t r = 0; r < n; ++r) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* dyr = dy.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dyr[o];
        if (g == 0.0) continue;
        const T* wo = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) acc[i] += g * double(wo[i]);
      }
      T* dxr = dx->data() + r * in;
      for (std::size_t i = 0; i < in; ++i) dxr[i] = static_cast<T>(acc[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

/// Gradient is passed where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  detail::require(x.shape() == dy.shape(), "relu_backward: shape mismatch");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] > T(0))) dx[i] = T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// Row-wise l2 normalization. Rows with norm < 1e-12 pass through with zero gradient.

inline constexpr double kNormFloor = 1e-12;

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::vector<double>* norms = nullptr) {
  detail::require(x.rank() == 2, "l2_normalize: expects a matrix");
  Tensor<T> y = x;
  if (norms) norms->assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = y.row(r);
    double ss = 0.0;
    for (T v : row) ss += double(v) * double(v);
    const double n = std::sqrt(ss);
    if (norms) (*norms)[r] = n;
    if (n < kNormFloor) continue;
    for (auto& v : row) v = static_cast<T>(double(v) / n);
  }
  return y;
}

/// dx = (dy - y (y . dy)) / |x|
template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& y, const std::vector<double>& norms, const Tensor<T>& dy) {
  detail::require(y.shape() == dy.shape() && norms.size() == y.rows(), "l2_normalize_backward: shape mismatch");
  Tensor<T> dx(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    if (norms[r] < kNormFloor) continue;
    const auto yr = y.row(r);
    const auto gr = dy.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < yr.size(); ++c) dot += double(yr[c]) * double(gr[c]);
    auto dr = dx.row(r);
    for (std::size_t c = 0; c < yr.size(); ++c)
      dr[c] = static_cast<T>((double(gr[c]) - double(yr[c]) * dot) / norms[r]);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Grid scatter-mean / gather. cell_ids[i] in [0, n_cells).

inline void check_cells(std::span<const std::uint32_t> cell_ids, std::size_t n_cells) {
  for (std::size_t i = 0; i < cell_ids.size(); ++i)
    if (cell_ids[i] >= n_cells)
      fail(ErrorKind::InvalidArgument, "cell id " + std::to_string(cell_ids[i]) + " at point " + std::to_string(i) +
                                           " is out of range for " + std::to_string(n_cells) + " cells");
}

inline std::vector<std::uint32_t> cell_counts(std::span<const std::uint32_t> cell_ids, std::size_t n_cells) {
  check_cells(cell_ids, n_cells);
  std::vector<std::uint32_t> counts(n_cells, 0);
  for (auto c : cell_ids) ++counts[c];
  return counts;
}

template <typename T>
Tensor<T> grid_scatter_mean(const Tensor<T>& feats, std::span<const std::uint32_t> cell_ids, std::size_t n_cells,
                            std::vector<std::uint32_t>* counts_out = nullptr) {
  detail::require(feats.rows() == cell_ids.size(), "grid_scatter_mean: one cell id per row required");
  const auto counts = cell_counts(cell_ids, n_cells);
  const std::size_t c = feats.cols();
  std::vector<double> acc(n_cells * c, 0.0);
  for (std::size_t i = 0; i < cell_ids.size(); ++i) {
    double* a = acc.data() + std::size_t{cell_ids[i]} * c;
    const T* f = feats.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) a[k] += double(f[k]);
  }
  Tensor<T> grid(n_cells, c);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    if (counts[cell] == 0) continue;
    for (std::size_t k = 0; k < c; ++k) grid(cell, k) = static_cast<T>(acc[cell * c + k] / counts[cell]);
  }
  if (counts_out) *counts_out = counts;
  return grid;
}

/// d feats[i] = d grid[cell_i] / count[cell_i]
template <typename T>
Tensor<T> grid_scatter_mean_backward(const Tensor<T>& dgrid, std::span<const std::uint32_t> cell_ids,
                                     std::span<const std::uint32_t> counts) {
  detail::require(dgrid.rows() == counts.size(), "grid_scatter_mean_backward: count/grid mismatch");
  check_cells(cell_ids, counts.size());
  const std::size_t c = dgrid.cols();
  Tensor<T> dfeats(cell_ids.size(), c);
  for (std::size_t i = 0; i < cell_ids.size(); ++i) {
    const double inv = 1.0 / counts[cell_ids[i]];
    const T* g = dgrid.data() + std::size_t{cell_ids[i]} * c;
    T* d = dfeats.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) d[k] = static_cast<T>(double(g[k]) * inv);
  }
  return dfeats;
}

template <typename T>
Tensor<T> grid_gather(const Tensor<T>& grid, std::span<const std::uint32_t> cell_ids) {
  check_cells(cell_ids, grid.rows());
  const std::size_t c = grid.cols();
  Tensor<T> out(cell_ids.size(), c);
  for (std::size_t i = 0; i < cell_ids.size(); ++i)
    std::copy_n(grid.data() + std::size_t{cell_ids[i]} * c, c, out.data() + i * c);
  return out;
}

/// d grid[cell] = sum over points in the cell of d feats[i]
template <typename T>
Tensor<T> grid_gather_backward(const Tensor<T>& dfeats, std::span<const std::uint32_t> cell_ids, std::size_t n_cells) {
  detail::require(dfeats.rows() == cell_ids.size(), "grid_gather_backward: one cell id per row required");
  check_cells(cell_ids, n_cells);
  const std::size_t c = dfeats.cols();
  std::vector<double> acc(n_cells * c, 0.0);
  for (std::size_t i = 0; i < cell_ids.size(); ++i) {
    double* a = acc.data() + std::size_t{cell_ids[i]} * c;
    const T* d = dfeats.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) a[k] += double(d[k]);
  }
  Tensor<T> dgrid(n_cells, c);
  for (std::size_t k = 0; k < acc.size(); ++k) dgrid[k] = static_cast<T>(acc[k]);
  return dgrid;
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// L = (1 / denom) * sum_i |s_i - t_i|_2 for row-normalized s and t; denom defaults to N.
/// The gradient of a zero-distance row is zero.
template <typename T>
LossResult<T> distill_loss(const Tensor<T>& student, const Tensor<T>& teacher,
                           std::optional<double> denominator = std::nullopt) {
  detail::require(student.shape() == teacher.shape() && student.rank() == 2, "distill_loss: shape mismatch");
  const std::size_t n = student.rows();
  if (n == 0) fail(ErrorKind::Precondition, "distill_loss: no rows");
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0, st = 0.0;
    for (std::size_t c = 0; c < student.cols(); ++c) {
      ss += double(student(r, c)) * double(student(r, c));
      st += double(teacher(r, c)) * double(teacher(r, c));
    }
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4 || std::abs(std::sqrt(st) - 1.0) > 1e-4)
      fail(ErrorKind::Precondition, "distill_loss: row " + std::to_string(r) + " is not l2-normalized");
  }
  const double denom = denominator.value_or(double(n));
  LossResult<T> out{0.0, Tensor<T>(student.shape())};
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < student.cols(); ++c) {
      const double d = double(student(r, c)) - double(teacher(r, c));
      d2 += d * d;
    }
    const double dist = std::sqrt(d2);
    total += dist;
    if (dist == 0.0) continue;
    for (std::size_t c = 0; c < student.cols(); ++c)
      out.grad(r, c) = static_cast<T>((double(student(r, c)) - double(teacher(r, c))) / (dist * denom));
  }
  out.loss = total / denom;
  return out;
}

/// Softmax cross-entropy averaged over non-ignored rows (or divided by `denominator`).
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> labels, std::uint16_t ignore_id,
                            std::optional<double> denominator = std::nullopt) {
  detail::require(logits.rank() == 2 && logits.rows() == labels.size(), "cross_entropy: one label per row required");
  const std::size_t k = logits.cols();
  std::size_t used = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == ignore_id) continue;
    if (labels[r] >= k)
      fail(ErrorKind::InvalidArgument, "cross_entropy: label " + std::to_string(labels[r]) + " at row " +
                                           std::to_string(r) + " is >= K=" + std::to_string(k));
    ++used;
  }
  LossResult<T> out{0.0, Tensor<T>(logits.shape())};
  if (used == 0) return out;
  const double denom = denominator.value_or(double(used));
  std::vector<double> p(k);
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == ignore_id) continue;
    const auto row = logits.row(r);
    double mx = row[0];
    for (T v : row) mx = std::max(mx, double(v));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp(double(row[c]) - mx);
      z += p[c];
    }
    total += std::log(z) + mx - double(row[labels[r]]);
    for (std::size_t c = 0; c < k; ++c) {
      const double g = p[c] / z - (c == labels[r] ? 1.0 : 0.0);
      out.grad(r, c) = static_cast<T>(g / denom);
    }
  }
  out.loss = total / denom;
  return out;
}

/// Index of the largest entry; ties resolve to the smallest index.
template <typename T>
std::size_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

// ---------------------------------------------------------------------------
// Bilinear resampling (align_corners = false, edge clamped)

struct BilinearTap {
  std::uint32_t i0 = 0, i1 = 0;
  double w1 = 0.0;  // weight of i1; i0 gets 1 - w1
};

/// Source taps for destination index `dst` when resizing `src_size` -> `dst_size`.
inline BilinearTap bilinear_tap(std::uint32_t dst, std::uint32_t src_size, std::uint32_t dst_size) {
  const double scale = double(src_size) / double(dst_size);
  double s = (double(dst) + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, double(src_size - 1));
  BilinearTap t;
  t.i0 = static_cast<std::uint32_t>(std::floor(s));
  t.i1 = std::min(t.i0 + 1, src_size - 1);
  t.w1 = s - t.i0;
  return t;
}

/// Value of bilinear_resize(fm, out_h, out_w) at (y, x), written to `out` (C floats).
inline void bilinear_sample(const FeatureMap& fm, std::uint32_t out_h, std::uint32_t out_w, std::uint32_t y,
                            std::uint32_t x, std::span<float> out) {
  const auto ty = bilinear_tap(y, fm.height, out_h);
  const auto tx = bilinear_tap(x, fm.width, out_w);
  const float* a = fm.pixel(ty.i0, tx.i0);
  const float* b = fm.pixel(ty.i0, tx.i1);
  const float* c = fm.pixel(ty.i1, tx.i0);
  const float* d = fm.pixel(ty.i1, tx.i1);
  const double wa = (1.0 - ty.w1) * (1.0 - tx.w1), wb = (1.0 - ty.w1) * tx.w1;
  const double wc = ty.w1 * (1.0 - tx.w1), wd = ty.w1 * tx.w1;
  for (std::uint32_t k = 0; k < fm.channels; ++k)
    out[k] = static_cast<float>(wa * a[k] + wb * b[k] + wc * c[k] + wd * d[k]);
}

inline FeatureMap bilinear_resize(const FeatureMap& fm, std::uint32_t out_h, std::uint32_t out_w) {
  if (out_h == 0 || out_w == 0) fail(ErrorKind::InvalidArgument, "bilinear_resize: target size must be >= 1");
  if (fm.height == 0 || fm.width == 0 || fm.channels == 0)
    fail(ErrorKind::InvalidArgument, "bilinear_resize: empty feature map");
  FeatureMap out(out_h, out_w, fm.channels);
  for (std::uint32_t y = 0; y < out_h; ++y)
    for (std::uint32_t x = 0; x < out_w; ++x)
      bilinear_sample(fm, out_h, out_w, y, x, std::span<float>(out.pixel(y, x), fm.channels));
  return out;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay

struct AdamWHyper {
  double lr = 0.002;
  double weight_decay = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamWState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

template <typename T>
AdamWState<T> adamw_init(std::span<Tensor<T>* const> params) {
  AdamWState<T> s;
  for (const auto* p : params) {
    s.m.push_back(Tensor<T>::zeros_like(*p));
    s.v.push_back(Tensor<T>::zeros_like(*p));
  }
  return s;
}

/// One step over `params` (moments in `state` follow the same order). `lr_scale`,
/// when given, multiplies the learning rate per tensor.
template <typename T>
void adamw_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamWState<T>& state,
                const AdamWHyper& h, std::span<const double> lr_scale = {}) {
  detail::require(params.size() == grads.size() && params.size() == state.m.size() && params.size() == state.v.size(),
                  "adamw_step: parameter/gradient/state count mismatch");
  detail::require(lr_scale.empty() || lr_scale.size() == params.size(), "adamw_step: lr scale count mismatch");
  ++state.step;
  const double t = double(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& g = *grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    detail::require(p.shape() == g.shape() && p.shape() == m.shape() && p.shape() == v.shape(),
                    "adamw_step: shape mismatch");
    const double lr = h.lr * (lr_scale.empty() ? 1.0 : lr_scale[k]);
    const double decay = 1.0 - lr * h.weight_decay;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = h.beta1 * double(m[i]) + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * double(v[i]) + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = double(m[i]) / bc1;
      const double vhat = double(v[i]) / bc2;
      const double pi = double(p[i]) * decay - lr * mhat / (std::sqrt(vhat) + h.eps);
      p[i] = static_cast<T>(pi);
    }
    if (!p.all_finite()) fail(ErrorKind::Internal, "adamw_step produced a non-finite parameter");
  }
}

}  // namespace frameseg::tg
