#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lrm/grid.hpp"

namespace lrm {

/// Square RGB image, values in [0, 1], stored row-major as [y][x][channel].
struct ImageTensor {
  int size = 0;
  std::vector<double> values;

  static ImageTensor zeros(int size) {
    return ImageTensor{size, std::vector<double>(static_cast<std::size_t>(size) * size * 3, 0.0)};
  }

  double& at(int y, int x, int c) { return values[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }
  double at(int y, int x, int c) const { return values[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }

  void validate() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Per-cell MLP detector:
///   z0 = Wp * patch + bp           (stride x stride x 3 patch -> hidden)
///   h1 = tanh(W1 * z0 + b1)
///   h2 = tanh(W2 * h1 + b2)
///   out = Wo * h2 + bo             (hidden -> B * (5 + C) raw channels)
/// Weights are shared by all cells; patches do not overlap.
enum ParamSlot : std::size_t {
  kProjW,
  kProjB,
  kHidden1W,
  kHidden1B,
  kHidden2W,
  kHidden2B,
  kOutW,
  kOutB,
  kParamSlotCount
};

struct ParamTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

struct DetectorParams {
  GridSpec spec;
  int hidden = 32;
  std::uint64_t seed = 0;
  std::array<ParamTensor, kParamSlotCount> tensors;

  int patch_size() const { return spec.stride() * spec.stride() * 3; }
  std::size_t parameter_count() const;

  /// Shapes consistent with spec and hidden size, all values finite.
  void validate() const;

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

/// All tensors zero-filled with the right shapes.
DetectorParams zero_params(const GridSpec& spec, int hidden);

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a generator seeded with `seed`.
DetectorParams init_params(const GridSpec& spec, int hidden, std::uint64_t seed);

struct ParamGradients {
  std::array<std::vector<double>, kParamSlotCount> values;

  static ParamGradients zeros_like(const DetectorParams& p);
  void add(const ParamGradients& other);
  void scale(double s);
};

/// Intermediate values kept for the backward pass, one row per cell.
struct Activations {
  int cells = 0;
  std::vector<double> patch;
  std::vector<double> z0;
  std::vector<double> h1;
  std::vector<double> h2;
};

struct ForwardResult {
  FeatureMap feature_map;
  Activations activations;
};

ForwardResult forward(const ImageTensor& img, const DetectorParams& p);

/// Reverse-mode gradients of a scalar whose gradient with respect to the raw
/// feature map is `grad_feature_map`.
ParamGradients backward(std::span<const double> grad_feature_map, const Activations& acts, const DetectorParams& p);

struct SgdMomentum {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  ParamGradients velocity;  // empty until the first step
};

/// v <- momentum * v - lr * g;  p <- p + v.
/// Throws RuntimeError naming the tensor when a gradient is non-finite.
void sgd_step(DetectorParams& p, const ParamGradients& grads, SgdMomentum& opt);

/// Text checkpoint; every real is written as a C99 hex float so reading
/// back is bit-exact. See docs/formats.md.
void write_checkpoint(std::ostream& out, const DetectorParams& p);
DetectorParams read_checkpoint(std::istream& in);

}  // namespace lrm
