#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lrm/box.hpp"

namespace lrm {

/// Anchor prior size in grid-cell units.
struct Anchor {
  double w = 1.0;
  double h = 1.0;

  friend bool operator==(const Anchor&, const Anchor&) = default;
};

/// Geometry of the detector's final feature map.
///
/// Each (cell, anchor) group occupies 5 + C contiguous channels laid out as
/// [tx, ty, tw, th, to, class_0 .. class_{C-1}]; anchor groups follow each
/// other along the channel axis, so a cell has B * (5 + C) channels.
struct GridSpec {
  int grid_size = 8;
  int anchor_count = 2;
  int class_count = 3;
  std::vector<Anchor> anchors{{1.0, 1.0}, {2.0, 2.0}};
  int image_size = 64;

  int stride() const { return image_size / grid_size; }
  int channels_per_prediction() const { return 5 + class_count; }
  int channels() const { return anchor_count * channels_per_prediction(); }
  int prediction_count() const { return grid_size * grid_size * anchor_count; }
  std::size_t element_count() const {
    return static_cast<std::size_t>(grid_size) * grid_size * channels();
  }

  /// Throws ContractError when any invariant is broken.
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Channel offsets inside one prediction group.
namespace channel {
inline constexpr int kTx = 0;
inline constexpr int kTy = 1;
inline constexpr int kTw = 2;
inline constexpr int kTh = 3;
inline constexpr int kObj = 4;
inline constexpr int kClass0 = 5;
}  // namespace channel

struct PredictionIndex {
  int row = 0;
  int col = 0;
  int anchor = 0;

  friend auto operator<=>(const PredictionIndex&, const PredictionIndex&) = default;
};

/// Row-major (row, col, anchor) flat index.
int flat_index(const GridSpec& spec, const PredictionIndex& idx);
PredictionIndex index_of(const GridSpec& spec, int flat);
bool in_range(const GridSpec& spec, const PredictionIndex& idx);

/// Offset of the first channel of prediction `flat` inside the value buffer.
inline std::size_t group_offset(const GridSpec& spec, int flat) {
  return static_cast<std::size_t>(flat) * spec.channels_per_prediction();
}

/// Raw (pre-activation) detector output F of shape [S, S, B*(5+C)].
class FeatureMap {
 public:
  FeatureMap(GridSpec spec, std::vector<double> values);

  static FeatureMap zeros(const GridSpec& spec);

  const GridSpec& spec() const { return spec_; }
  std::span<const double> values() const { return values_; }
  double at(int row, int col, int channel) const;
  /// The 5 + C raw values of prediction `flat`.
  std::span<const double> group(int flat) const;

 private:
  GridSpec spec_;
  std::vector<double> values_;
};

/// Binary mask M with the same shape as F. Entries are 0 or 1 and every
/// prediction group is uniformly 0 or uniformly 1.
class MaskMatrix {
 public:
  /// Validates binariness and prediction atomicity.
  MaskMatrix(GridSpec spec, std::vector<double> values);

  const GridSpec& spec() const { return spec_; }
  std::span<const double> values() const { return values_; }
  double at(int row, int col, int channel) const;
  bool kept(int flat) const;
  int kept_count() const;

 private:
  GridSpec spec_;
  std::vector<double> values_;
};

/// Throws ContractError unless `values` is binary and prediction-atomic for `spec`.
void check_mask_atomic(const GridSpec& spec, std::span<const double> values);

MaskMatrix mask_all_ones(const GridSpec& spec);
MaskMatrix mask_from_selection(const GridSpec& spec, std::span<const PredictionIndex> kept);

/// One decoded prediction.
struct PredictionView {
  PredictionIndex index;
  Box box;
  double objectness = 0.0;
  std::vector<double> class_scores;
  int predicted_class = 0;
};

double sigmoid(double x);
/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

PredictionView decode(const FeatureMap& fm, const PredictionIndex& idx);
std::vector<PredictionView> decode_all(const FeatureMap& fm);

}  // namespace lrm
