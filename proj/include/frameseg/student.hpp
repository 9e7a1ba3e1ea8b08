#pragma once

// Plane-mixing point backbone. Each layer projects the points onto one of the
// XY/XZ/YZ planes (cycling), averages the features per grid cell, runs a
// two-layer channel MLP on every occupied cell and adds the result back to its
// points as a residual:
//
//   x_{l+1} = x_l + gather(MLP_l(scatter_mean(x_l)))
//
// Inputs are (x, y, z, intensity) with coordinates taken relative to the frame
// centroid, which is also the center of the grid.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frameseg/config.hpp"
#include "frameseg/tensorgrad.hpp"
#include "frameseg/types.hpp"

namespace frameseg {

struct StudentConfig {
  std::uint32_t embed_dim = 32;
  std::uint32_t depth = 8;
  std::uint32_t grid_cells = 64;
  double cell_size = 0.15;
  std::uint32_t teacher_dim = 16;
  std::uint32_t n_classes = 4;

  static StudentConfig from(const RunConfig& cfg);
  /// Throws Error(InvalidArgument).
  void validate() const;
  /// Canonical JSON; its FNV-1a hash is the config fingerprint.
  std::string to_json() const;
  static StudentConfig from_json(const std::string& text);
  std::uint64_t fingerprint() const;

  friend bool operator==(const StudentConfig&, const StudentConfig&) = default;
};

std::uint64_t fnv1a64(std::string_view bytes);

enum class ParamGroup { Embedding, Mixing, DistillHead, Classifier };

struct ParamInfo {
  std::string name;
  ParamGroup group;
  /// Position in the embedding(0) .. mixing(1..D) .. classifier(D+1) stack.
  std::uint32_t stack_index;
};

template <typename T>
struct StudentParams {
  struct Layer {
    tg::Tensor<T> w1, b1, w2, b2;
    friend bool operator==(const Layer&, const Layer&) = default;
  };

  tg::Tensor<T> embed_w, embed_b;
  std::vector<Layer> layers;
  tg::Tensor<T> distill_w, distill_b;
  tg::Tensor<T> class_w, class_b;

  /// All zeros with the shapes implied by `cfg`.
  static StudentParams zeros(const StudentConfig& cfg);

  /// Tensors in declaration order (matches param_layout).
  std::vector<tg::Tensor<T>*> tensors();
  std::vector<const tg::Tensor<T>*> tensors() const;

  template <typename U>
  StudentParams<U> cast() const;

  friend bool operator==(const StudentParams&, const StudentParams&) = default;
};

std::vector<ParamInfo> param_layout(const StudentConfig& cfg);

/// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.
template <typename T>
StudentParams<T> init_params(const StudentConfig& cfg, std::uint64_t seed);

/// Compact per-plane cell assignment shared by all layers that use the plane.
struct PlaneCells {
  std::vector<std::uint32_t> cell_of_point;  // compact index into occupied cells
  std::uint32_t n_cells = 0;
};

struct GridAssignment {
  double centroid[3] = {0.0, 0.0, 0.0};
  PlaneCells planes[3];  // XY, XZ, YZ
};

GridAssignment assign_cells(const StudentConfig& cfg, std::span<const Point> points);

template <typename T>
struct ForwardCache {
  GridAssignment grid;
  tg::Tensor<T> input;  // N x 4
  struct Layer {
    tg::Tensor<T> cells;    // scatter-mean, M x E
    tg::Tensor<T> pre;      // first linear output, M x E
    tg::Tensor<T> hidden;   // relu(pre)
    std::vector<std::uint32_t> counts;
  };
  std::vector<Layer> layers;
};

/// Scale applied to every residual branch.
double residual_scale(const StudentConfig& cfg);

/// Backbone features (N x E). Pass a cache to enable backward.
template <typename T>
tg::Tensor<T> forward(const StudentParams<T>& params, const StudentConfig& cfg, std::span<const Point> points,
                      ForwardCache<T>* cache = nullptr);

/// Accumulates parameter gradients of the backbone (embedding and mixing layers).
template <typename T>
void backward(const StudentParams<T>& params, const StudentConfig& cfg, const ForwardCache<T>& cache,
              const tg::Tensor<T>& dfeats, StudentParams<T>& grads);

template <typename T>
struct HeadCache {
  tg::Tensor<T> normalized;
  std::vector<double> norms;
};

/// Row-normalized N x C descriptors.
template <typename T>
tg::Tensor<T> distill_head(const StudentParams<T>& params, const tg::Tensor<T>& feats, HeadCache<T>* cache = nullptr);

/// Accumulates distill head gradients and returns d feats.
template <typename T>
tg::Tensor<T> distill_head_backward(const StudentParams<T>& params, const tg::Tensor<T>& feats,
                                    const HeadCache<T>& cache, const tg::Tensor<T>& dout, StudentParams<T>& grads);

/// N x K logits.
template <typename T>
tg::Tensor<T> classify_head(const StudentParams<T>& params, const tg::Tensor<T>& feats);

/// Accumulates classifier gradients; returns d feats when `want_dfeats`.
template <typename T>
std::optional<tg::Tensor<T>> classify_head_backward(const StudentParams<T>& params, const tg::Tensor<T>& feats,
                                                    const tg::Tensor<T>& dlogits, StudentParams<T>& grads,
                                                    bool want_dfeats);

/// Rough peak bytes held during inference on `n_points` points.
std::uint64_t inference_memory_bytes(const StudentConfig& cfg, std::uint64_t n_points);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "CKPT" u16 version=1, u16 reserved=0, u64 config fingerprint,
//   u32 config JSON length + bytes, u32 tensor count,
//   per tensor: u32 rank, rank x u32 dims, f32 data,
//   u8 has-optimizer, [u64 step, per tensor m data, per tensor v data]

struct Checkpoint {
  StudentConfig config;
  StudentParams<float> params;
  std::optional<tg::AdamWState<float>> optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace frameseg
