#include "frameseg/student.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "bytes.hpp"
#include "frameseg/error.hpp"
#include "frameseg/frameio.hpp"
#include "frameseg/random.hpp"

namespace frameseg {

using tg::Tensor;

// ---------------------------------------------------------------------------
// Config

StudentConfig StudentConfig::from(const RunConfig& cfg) {
  StudentConfig s;
  s.embed_dim = cfg.student.embed_dim;
  s.depth = cfg.student.depth;
  s.grid_cells = cfg.student.grid_cells;
  s.cell_size = cfg.student.cell_size_m;
  s.teacher_dim = cfg.teacher_dim;
  s.n_classes = cfg.classes;
  s.validate();
  return s;
}

void StudentConfig::validate() const {
  auto check = [](bool ok, const char* msg) {
    if (!ok) fail(ErrorKind::InvalidArgument, std::string("student config: ") + msg);
  };
  check(embed_dim >= 1, "embed_dim must be >= 1");
  check(depth >= 1, "depth must be >= 1");
  check(grid_cells >= 2 && grid_cells <= 4096, "grid_cells must be in [2, 4096]");
  check(cell_size > 0.0 && std::isfinite(cell_size), "cell_size must be > 0");
  check(teacher_dim >= 1, "teacher_dim must be >= 1");
  check(n_classes >= 1 && n_classes < kIgnoreLabel, "n_classes must be in [1, 65535)");
}

std::string StudentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["embed_dim"] = embed_dim;
  j["depth"] = depth;
  j["grid_cells"] = grid_cells;
  j["cell_size_m"] = cell_size;
  j["teacher_dim"] = teacher_dim;
  j["n_classes"] = n_classes;
  return j.dump();
}

StudentConfig StudentConfig::from_json(const std::string& text) {
  StudentConfig s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.embed_dim = j.at("embed_dim").get<std::uint32_t>();
    s.depth = j.at("depth").get<std::uint32_t>();
    s.grid_cells = j.at("grid_cells").get<std::uint32_t>();
    s.cell_size = j.at("cell_size_m").get<double>();
    s.teacher_dim = j.at("teacher_dim").get<std::uint32_t>();
    s.n_classes = j.at("n_classes").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("student config JSON: ") + e.what());
  }
  s.validate();
  return s;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t StudentConfig::fingerprint() const { return fnv1a64(to_json()); }

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
StudentParams<T> StudentParams<T>::zeros(const StudentConfig& cfg) {
  const std::size_t e = cfg.embed_dim;
  StudentParams<T> p;
  p.embed_w = Tensor<T>(e, 4);
  p.embed_b = Tensor<T>({e});
  p.layers.resize(cfg.depth);
  for (auto& l : p.layers) {
    l.w1 = Tensor<T>(e, e);
    l.b1 = Tensor<T>({e});
    l.w2 = Tensor<T>(e, e);
    l.b2 = Tensor<T>({e});
  }
  p.distill_w = Tensor<T>(cfg.teacher_dim, e);
  p.distill_b = Tensor<T>({std::size_t{cfg.teacher_dim}});
  p.class_w = Tensor<T>(cfg.n_classes, e);
  p.class_b = Tensor<T>({std::size_t{cfg.n_classes}});
  return p;
}

template <typename T>
std::vector<Tensor<T>*> StudentParams<T>::tensors() {
  std::vector<Tensor<T>*> out{&embed_w, &embed_b};
  for (auto& l : layers) out.insert(out.end(), {&l.w1, &l.b1, &l.w2, &l.b2});
  out.insert(out.end(), {&distill_w, &distill_b, &class_w, &class_b});
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> StudentParams<T>::tensors() const {
  auto mut = const_cast<StudentParams<T>*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

template <typename T>
template <typename U>
StudentParams<U> StudentParams<T>::cast() const {
  StudentParams<U> out;
  out.embed_w = embed_w.template cast<U>();
  out.embed_b = embed_b.template cast<U>();
  for (const auto& l : layers)
    out.layers.push_back({l.w1.template cast<U>(), l.b1.template cast<U>(), l.w2.template cast<U>(),
                          l.b2.template cast<U>()});
  out.distill_w = distill_w.template cast<U>();
  out.distill_b = distill_b.template cast<U>();
  out.class_w = class_w.template cast<U>();
  out.class_b = class_b.template cast<U>();
  return out;
}

std::vector<ParamInfo> param_layout(const StudentConfig& cfg) {
  std::vector<ParamInfo> out{{"embed.weight", ParamGroup::Embedding, 0}, {"embed.bias", ParamGroup::Embedding, 0}};
  for (std::uint32_t l = 0; l < cfg.depth; ++l) {
    const auto prefix = "layers." + std::to_string(l) + ".";
    for (const char* n : {"w1", "b1", "w2", "b2"}) out.push_back({prefix + n, ParamGroup::Mixing, l + 1});
  }
  out.push_back({"distill.weight", ParamGroup::DistillHead, cfg.depth + 1});
  out.push_back({"distill.bias", ParamGroup::DistillHead, cfg.depth + 1});
  out.push_back({"classifier.weight", ParamGroup::Classifier, cfg.depth + 1});
  out.push_back({"classifier.bias", ParamGroup::Classifier, cfg.depth + 1});
  return out;
}

template <typename T>
StudentParams<T> init_params(const StudentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto p = StudentParams<T>::zeros(cfg);
  Rng rng(derive_seed(seed, 0x1417));
  auto glorot = [&](Tensor<T>& w) {
    const double fan_out = double(w.rows()), fan_in = double(w.cols());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  };
  glorot(p.embed_w);
  for (auto& l : p.layers) {
    glorot(l.w1);
    glorot(l.w2);
  }
  glorot(p.distill_w);
  glorot(p.class_w);
  return p;
}

// ---------------------------------------------------------------------------
// Grid assignment

namespace {
constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
}

GridAssignment assign_cells(const StudentConfig& cfg, std::span<const Point> points) {
  GridAssignment g;
  const std::size_t n = points.size();
  if (n == 0) return g;
  double sum[3] = {0.0, 0.0, 0.0};
  for (const auto& p : points) {
    sum[0] += p.x;
    sum[1] += p.y;
    sum[2] += p.z;
  }
  for (int a = 0; a < 3; ++a) g.centroid[a] = sum[a] / double(n);

  const std::int64_t cells = cfg.grid_cells;
  const double half = double(cells) / 2.0;
  std::vector<std::int64_t> index[3];
  for (int a = 0; a < 3; ++a) {
    index[a].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = a == 0 ? points[i].x : (a == 1 ? points[i].y : points[i].z);
      const auto k = static_cast<std::int64_t>(std::floor((c - g.centroid[a]) / cfg.cell_size + half));
      index[a][i] = std::clamp<std::int64_t>(k, 0, cells - 1);
    }
  }
  std::vector<std::uint32_t> raw(n), occupied;
  for (int plane = 0; plane < 3; ++plane) {
    const auto& ia = index[kPlaneAxes[plane][0]];
    const auto& ib = index[kPlaneAxes[plane][1]];
    for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<std::uint32_t>(ia[i] * cells + ib[i]);
    occupied = raw;
    std::sort(occupied.begin(), occupied.end());
    occupied.erase(std::unique(occupied.begin(), occupied.end()), occupied.end());
    auto& pc = g.planes[plane];
    pc.n_cells = static_cast<std::uint32_t>(occupied.size());
    pc.cell_of_point.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      pc.cell_of_point[i] =
          static_cast<std::uint32_t>(std::lower_bound(occupied.begin(), occupied.end(), raw[i]) - occupied.begin());
  }
  return g;
}

double residual_scale(const StudentConfig& cfg) { return 1.0 / std::sqrt(double(cfg.depth)); }

// ---------------------------------------------------------------------------
// Backbone

template <typename T>
Tensor<T> forward(const StudentParams<T>& params, const StudentConfig& cfg, std::span<const Point> points,
                  ForwardCache<T>* cache) {
  if (points.empty()) fail(ErrorKind::Precondition, "student forward needs at least one point");
  if (params.layers.size() != cfg.depth) fail(ErrorKind::Mismatch, "parameter layer count does not match config depth");
  const std::size_t n = points.size();
  const std::size_t e = cfg.embed_dim;
  GridAssignment grid = assign_cells(cfg, points);

  Tensor<T> input(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    input(i, 0) = static_cast<T>(double(points[i].x) - grid.centroid[0]);
    input(i, 1) = static_cast<T>(double(points[i].y) - grid.centroid[1]);
    input(i, 2) = static_cast<T>(double(points[i].z) - grid.centroid[2]);
    input(i, 3) = static_cast<T>(points[i].intensity);
  }
  Tensor<T> x = tg::linear(input, params.embed_w, params.embed_b);

  const double alpha = residual_scale(cfg);
  if (cache) cache->layers.resize(cfg.depth);
  for (std::uint32_t l = 0; l < cfg.depth; ++l) {
    const auto& plane = grid.planes[l % 3];
    const auto& layer = params.layers[l];
    std::vector<std::uint32_t> counts;
    Tensor<T> cells = tg::grid_scatter_mean(x, plane.cell_of_point, plane.n_cells, &counts);
    Tensor<T> pre = tg::linear(cells, layer.w1, layer.b1);
    Tensor<T> hidden = tg::relu(pre);
    const Tensor<T> mixed = tg::linear(hidden, layer.w2, layer.b2);
    for (std::size_t i = 0; i < n; ++i) {
      const T* m = mixed.data() + std::size_t{plane.cell_of_point[i]} * e;
      T* xi = x.data() + i * e;
      for (std::size_t k = 0; k < e; ++k) xi[k] = static_cast<T>(double(xi[k]) + alpha * double(m[k]));
    }
    if (cache) {
      auto& c = cache->layers[l];
      c.cells = std::move(cells);
      c.pre = std::move(pre);
      c.hidden = std::move(hidden);
      c.counts = std::move(counts);
    }
  }
  if (cache) {
    cache->grid = std::move(grid);
    cache->input = std::move(input);
  }
  return x;
}

template <typename T>
void backward(const StudentParams<T>& params, const StudentConfig& cfg, const ForwardCache<T>& cache,
              const Tensor<T>& dfeats, StudentParams<T>& grads) {
  if (cache.layers.size() != cfg.depth) fail(ErrorKind::Mismatch, "forward cache does not match config depth");
  const std::size_t n = dfeats.rows();
  const std::size_t e = cfg.embed_dim;
  const double alpha = residual_scale(cfg);
  Tensor<T> dx = dfeats;
  for (std::uint32_t l = cfg.depth; l-- > 0;) {
    const auto& plane = cache.grid.planes[l % 3];
    const auto& c = cache.layers[l];
    const auto& layer = params.layers[l];
    auto& g = grads.layers[l];
    Tensor<T> dmixed = tg::grid_gather_backward(dx, plane.cell_of_point, plane.n_cells);
    for (auto& v : dmixed.values()) v = static_cast<T>(alpha * double(v));
    Tensor<T> dhidden, dcells;
    tg::linear_backward(c.hidden, layer.w2, dmixed, &dhidden, g.w2, g.b2);
    const Tensor<T> dpre = tg::relu_backward(c.pre, dhidden);
    tg::linear_backward(c.cells, layer.w1, dpre, &dcells, g.w1, g.b1);
    for (std::size_t i = 0; i < n; ++i) {
      const double inv = 1.0 / c.counts[plane.cell_of_point[i]];
      const T* d = dcells.data() + std::size_t{plane.cell_of_point[i]} * e;
      T* xi = dx.data() + i * e;
      for (std::size_t k = 0; k < e; ++k) xi[k] = static_cast<T>(double(xi[k]) + double(d[k]) * inv);
    }
  }
  tg::linear_backward<T>(cache.input, params.embed_w, dx, nullptr, grads.embed_w, grads.embed_b);
}

// ---------------------------------------------------------------------------
// Heads

template <typename T>
Tensor<T> distill_head(const StudentParams<T>& params, const Tensor<T>& feats, HeadCache<T>* cache) {
  const Tensor<T> z = tg::linear(feats, params.distill_w, params.distill_b);
  std::vector<double> norms;
  Tensor<T> y = tg::l2_normalize(z, &norms);
  if (cache) {
    cache->normalized = y;
    cache->norms = std::move(norms);
  }
  return y;
}

template <typename T>
Tensor<T> distill_head_backward(const StudentParams<T>& params, const Tensor<T>& feats, const HeadCache<T>& cache,
                                const Tensor<T>& dout, StudentParams<T>& grads) {
  const Tensor<T> dz = tg::l2_normalize_backward(cache.normalized, cache.norms, dout);
  Tensor<T> dfeats;
  tg::linear_backward(feats, params.distill_w, dz, &dfeats, grads.distill_w, grads.distill_b);
  return dfeats;
}

template <typename T>
Tensor<T> classify_head(const StudentParams<T>& params, const Tensor<T>& feats) {
  return tg::linear(feats, params.class_w, params.class_b);
}

template <typename T>
std::optional<Tensor<T>> classify_head_backward(const StudentParams<T>& params, const Tensor<T>& feats,
                                                const Tensor<T>& dlogits, StudentParams<T>& grads, bool want_dfeats) {
  Tensor<T> dfeats;
  tg::linear_backward(feats, params.class_w, dlogits, want_dfeats ? &dfeats : nullptr, grads.class_w, grads.class_b);
  if (!want_dfeats) return std::nullopt;
  return dfeats;
}

std::uint64_t inference_memory_bytes(const StudentConfig& cfg, std::uint64_t n_points) {
  const std::uint64_t e = cfg.embed_dim;
  const std::uint64_t g = cfg.grid_cells;
  const std::uint64_t max_cells = std::min<std::uint64_t>(n_points, g * g);
  std::uint64_t params = 4 * e + e;
  params += std::uint64_t{cfg.depth} * (2 * e * e + 2 * e);
  params += (std::uint64_t{cfg.teacher_dim} + cfg.n_classes) * (e + 1);
  std::uint64_t floats = params;
  floats += n_points * 4;          // centered input
  floats += n_points * e;          // residual stream
  floats += max_cells * e * 3;     // cell means, hidden, mixed
  floats += n_points * cfg.n_classes;
  const std::uint64_t indices = n_points * (3 * 3 + 3);  // per-axis index, raw/compact ids per plane
  return floats * 4 + indices * 8;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr std::uint16_t kCheckpointVersion = 1;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  const std::string cfg_json = ckpt.config.to_json();
  w.put_magic("CKPT");
  w.put_u16(kCheckpointVersion);
  w.put_u16(0);
  w.put_u64(ckpt.config.fingerprint());
  w.put_u32(static_cast<std::uint32_t>(cfg_json.size()));
  w.put_raw(std::span(reinterpret_cast<const std::uint8_t*>(cfg_json.data()), cfg_json.size()));
  const auto tensors = ckpt.params.tensors();
  w.put_u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    w.put_u32(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) w.put_u32(static_cast<std::uint32_t>(d));
    for (float v : t->values()) w.put_f32(v);
  }
  w.put_u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    if (o.m.size() != tensors.size() || o.v.size() != tensors.size())
      fail(ErrorKind::Consistency, "optimizer state does not match parameter count");
    w.put_u64(o.step);
    for (const auto& m : o.m)
      for (float v : m.values()) w.put_f32(v);
    for (const auto& m : o.v)
      for (float v : m.values()) w.put_f32(v);
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (!r.magic_is("CKPT")) fail(ErrorKind::Format, "bad magic (expected CKPT)");
  r.skip(4);
  const auto version = r.u16();
  if (version != kCheckpointVersion) fail(ErrorKind::Format, "unsupported CKPT version " + std::to_string(version));
  if (r.u16() != 0) fail(ErrorKind::Format, "reserved CKPT field is not zero");
  const auto fingerprint = r.u64();
  const auto cfg_len = r.u32();
  const auto cfg_bytes = r.raw(cfg_len);
  const std::string cfg_json(cfg_bytes.begin(), cfg_bytes.end());
  if (fnv1a64(cfg_json) != fingerprint) fail(ErrorKind::Mismatch, "checkpoint config fingerprint mismatch");

  Checkpoint ckpt;
  ckpt.config = StudentConfig::from_json(cfg_json);
  if (ckpt.config.to_json() != cfg_json) fail(ErrorKind::Format, "checkpoint config JSON is not canonical");
  ckpt.params = StudentParams<float>::zeros(ckpt.config);
  auto tensors = ckpt.params.tensors();
  const auto count = r.u32();
  if (count != tensors.size())
    fail(ErrorKind::Consistency, "checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                                     std::to_string(tensors.size()));
  for (auto* t : tensors) {
    const auto rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != t->shape()) fail(ErrorKind::Consistency, "checkpoint tensor shape does not match config");
    r.need(t->size() * 4);
    for (auto& v : t->values()) {
      v = r.f32();
      if (!std::isfinite(v)) fail(ErrorKind::Consistency, "checkpoint holds a non-finite parameter");
    }
  }
  const auto has_opt = r.u8();
  if (has_opt > 1) fail(ErrorKind::Format, "bad optimizer flag");
  if (has_opt) {
    tg::AdamWState<float> o;
    o.step = r.u64();
    for (auto* t : tensors) o.m.push_back(Tensor<float>::zeros_like(*t));
    for (auto* t : tensors) o.v.push_back(Tensor<float>::zeros_like(*t));
    for (auto& m : o.m)
      for (auto& v : m.values()) v = r.f32();
    for (auto& m : o.v)
      for (auto& v : m.values()) v = r.f32();
    ckpt.optimizer = std::move(o);
  }
  if (r.remaining() != 0) fail(ErrorKind::Format, "trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

#define FRAMESEG_INSTANTIATE(T)                                                                                    \
  template struct StudentParams<T>;                                                                                \
  template StudentParams<T> init_params<T>(const StudentConfig&, std::uint64_t);                                   \
  template Tensor<T> forward<T>(const StudentParams<T>&, const StudentConfig&, std::span<const Point>,            \
                                ForwardCache<T>*);                                                                 \
  template void backward<T>(const StudentParams<T>&, const StudentConfig&, const ForwardCache<T>&,                \
                            const Tensor<T>&, StudentParams<T>&);                                                  \
  template Tensor<T> distill_head<T>(const StudentParams<T>&, const Tensor<T>&, HeadCache<T>*);                    \
  template Tensor<T> distill_head_backward<T>(const StudentParams<T>&, const Tensor<T>&, const HeadCache<T>&,      \
                                              const Tensor<T>&, StudentParams<T>&);                                \
  template Tensor<T> classify_head<T>(const StudentParams<T>&, const Tensor<T>&);                                  \
  template std::optional<Tensor<T>> classify_head_backward<T>(const StudentParams<T>&, const Tensor<T>&,           \
                                                              const Tensor<T>&, StudentParams<T>&, bool);

FRAMESEG_INSTANTIATE(float)
FRAMESEG_INSTANTIATE(double)
#undef FRAMESEG_INSTANTIATE

template StudentParams<double> StudentParams<float>::cast<double>() const;
template StudentParams<float> StudentParams<double>::cast<float>() const;
template StudentParams<float> StudentParams<float>::cast<float>() const;

}  // namespace frameseg
