#include "lrm/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lrm/error.hpp"

namespace lrm {

void GridSpec::validate() const {
  if (grid_size <= 0) throw ContractError("grid_size must be positive");
  if (anchor_count <= 0) throw ContractError("anchor_count must be positive");
  if (class_count <= 0) throw ContractError("class_count must be positive");
  if (image_size <= 0) throw ContractError("image_size must be positive");
  if (image_size % grid_size != 0) {
    throw ContractError("image_size " + std::to_string(image_size) + " is not divisible by grid_size " +
                        std::to_string(grid_size));
  }
  if (static_cast<int>(anchors.size()) != anchor_count) {
    throw ContractError("expected " + std::to_string(anchor_count) + " anchors, got " +
                        std::to_string(anchors.size()));
  }
  for (const auto& a : anchors) {
    if (!(a.w > 0.0) || !(a.h > 0.0) || !std::isfinite(a.w) || !std::isfinite(a.h)) {
      throw ContractError("anchor sizes must be positive and finite");
    }
  }
}

int flat_index(const GridSpec& spec, const PredictionIndex& idx) {
  return (idx.row * spec.grid_size + idx.col) * spec.anchor_count + idx.anchor;
}

PredictionIndex index_of(const GridSpec& spec, int flat) {
  if (flat < 0 || flat >= spec.prediction_count()) {
    throw ContractError("flat prediction index " + std::to_string(flat) + " out of range");
  }
  const int anchor = flat % spec.anchor_count;
  const int cell = flat / spec.anchor_count;
  return {cell / spec.grid_size, cell % spec.grid_size, anchor};
}

bool in_range(const GridSpec& spec, const PredictionIndex& idx) {
  return idx.row >= 0 && idx.row < spec.grid_size && idx.col >= 0 && idx.col < spec.grid_size &&
         idx.anchor >= 0 && idx.anchor < spec.anchor_count;
}

namespace {

void require_index(const GridSpec& spec, const PredictionIndex& idx) {
  if (!in_range(spec, idx)) {
    throw ContractError("prediction index (" + std::to_string(idx.row) + "," + std::to_string(idx.col) + "," +
                        std::to_string(idx.anchor) + ") out of range");
  }
}

std::size_t element_offset(const GridSpec& spec, int row, int col, int ch) {
  if (row < 0 || row >= spec.grid_size || col < 0 || col >= spec.grid_size || ch < 0 || ch >= spec.channels()) {
    throw ContractError("feature map element out of range");
  }
  return (static_cast<std::size_t>(row) * spec.grid_size + col) * spec.channels() + ch;
}

}  // namespace

FeatureMap::FeatureMap(GridSpec spec, std::vector<double> values) : spec_(std::move(spec)), values_(std::move(values)) {
  spec_.validate();
  if (values_.size() != spec_.element_count()) {
    throw ContractError("feature map has " + std::to_string(values_.size()) + " values, expected " +
                        std::to_string(spec_.element_count()));
  }
  for (std::size_t e = 0; e < values_.size(); ++e) {
    if (!std::isfinite(values_[e])) {
      const auto per_cell = static_cast<std::size_t>(spec_.channels());
      const auto cell = e / per_cell;
      throw RuntimeError("non-finite feature value at (" + std::to_string(cell / spec_.grid_size) + "," +
                         std::to_string(cell % spec_.grid_size) + "," + std::to_string(e % per_cell) + ")");
    }
  }
}

FeatureMap FeatureMap::zeros(const GridSpec& spec) {
  spec.validate();
  return FeatureMap(spec, std::vector<double>(spec.element_count(), 0.0));
}

double FeatureMap::at(int row, int col, int ch) const { return values_[element_offset(spec_, row, col, ch)]; }

std::span<const double> FeatureMap::group(int flat) const {
  index_of(spec_, flat);
  return std::span<const double>(values_).subspan(group_offset(spec_, flat), spec_.channels_per_prediction());
}

void check_mask_atomic(const GridSpec& spec, std::span<const double> values) {
  if (values.size() != spec.element_count()) throw ContractError("mask shape does not match grid spec");
  const int per = spec.channels_per_prediction();
  for (int k = 0; k < spec.prediction_count(); ++k) {
    const auto g = values.subspan(group_offset(spec, k), per);
    if (g[0] != 0.0 && g[0] != 1.0) throw ContractError("mask entries must be 0 or 1");
    for (double v : g) {
      if (v != g[0]) {
        throw ContractError("mask is not prediction-atomic at prediction " + std::to_string(k));
      }
    }
  }
}

MaskMatrix::MaskMatrix(GridSpec spec, std::vector<double> values) : spec_(std::move(spec)), values_(std::move(values)) {
  spec_.validate();
  check_mask_atomic(spec_, values_);
}

double MaskMatrix::at(int row, int col, int ch) const { return values_[element_offset(spec_, row, col, ch)]; }

bool MaskMatrix::kept(int flat) const {
  index_of(spec_, flat);
  return values_[group_offset(spec_, flat)] == 1.0;
}

int MaskMatrix::kept_count() const {
  int n = 0;
  for (int k = 0; k < spec_.prediction_count(); ++k) n += kept(k) ? 1 : 0;
  return n;
}

MaskMatrix mask_all_ones(const GridSpec& spec) {
  spec.validate();
  return MaskMatrix(spec, std::vector<double>(spec.element_count(), 1.0));
}

MaskMatrix mask_from_selection(const GridSpec& spec, std::span<const PredictionIndex> kept) {
  spec.validate();
  std::vector<double> values(spec.element_count(), 0.0);
  const int per = spec.channels_per_prediction();
  for (const auto& idx : kept) {
    require_index(spec, idx);
    const auto off = group_offset(spec, flat_index(spec, idx));
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(off), per, 1.0);
  }
  return MaskMatrix(spec, std::move(values));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] - m);
    sum += out[c];
  }
  for (double& v : out) v /= sum;
  return out;
}

PredictionView decode(const FeatureMap& fm, const PredictionIndex& idx) {
  const GridSpec& spec = fm.spec();
  require_index(spec, idx);
  const auto g = fm.group(flat_index(spec, idx));
  const double stride = spec.stride();
  const Anchor& anchor = spec.anchors[static_cast<std::size_t>(idx.anchor)];

  const double cx = (idx.col + sigmoid(g[channel::kTx])) * stride;
  const double cy = (idx.row + sigmoid(g[channel::kTy])) * stride;
  const double w = anchor.w * std::exp(g[channel::kTw]) * stride;
  const double h = anchor.h * std::exp(g[channel::kTh]) * stride;

  PredictionView view;
  view.index = idx;
  view.box = from_center(cx, cy, w, h);
  view.objectness = sigmoid(g[channel::kObj]);
  view.class_scores = softmax(g.subspan(channel::kClass0));
  view.predicted_class = static_cast<int>(
      std::max_element(view.class_scores.begin(), view.class_scores.end()) - view.class_scores.begin());
  return view;
}

std::vector<PredictionView> decode_all(const FeatureMap& fm) {
  const GridSpec& spec = fm.spec();
  std::vector<PredictionView> views;
  views.reserve(static_cast<std::size_t>(spec.prediction_count()));
  for (int k = 0; k < spec.prediction_count(); ++k) views.push_back(decode(fm, index_of(spec, k)));
  return views;
}

}  // namespace lrm
