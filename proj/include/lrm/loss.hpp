#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lrm/box.hpp"
#include "lrm/grid.hpp"

namespace lrm {

struct GroundTruth {
  std::vector<Box> boxes;
  std::vector<int> classes;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }

  /// Lengths agree, classes in [0, class_count), boxes have positive area
  /// and lie inside [0, image_size]^2. Throws ContractError otherwise.
  void validate(int class_count, int image_size) const;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Which prediction answers for which object, and which predictions are
/// exempt from the non-object term.
struct Assignment {
  std::map<int, PredictionIndex> responsible;
  std::vector<PredictionIndex> ignore_set;  // sorted, unique
  std::vector<std::string> warnings;        // objects dropped for lack of a free anchor
};

/// Responsible prediction per object: the anchor in the cell containing the
/// object center whose centered prior has the highest IoU with the object
/// (lowest anchor index on ties). Cells are half-open, so a center on a
/// boundary belongs to the higher-index cell.
///
/// Objects are visited in a canonical order (by box corners, then class), so
/// the result does not depend on the order of `gt`. When an anchor is taken,
/// the object falls back to the best free anchor of its cell, or is dropped
/// with a warning.
Assignment assign(const GroundTruth& gt, const GridSpec& spec, double ignore_iou);

struct LossWeights {
  double coord = 5.0;
  double obj = 1.0;
  double noobj = 0.5;
  double cls = 1.0;

  void validate() const;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossTerms {
  double obj = 0.0;
  double noobj = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct LossBreakdown {
  std::vector<LossTerms> per_prediction;
  double grand_total = 0.0;
};

enum class PredictionRole { kBackground, kResponsible, kIgnored };

/// Per-prediction regression/classification targets derived from an
/// assignment. `iou_target` is the detached objectness target and is the only
/// field that depends on the feature map.
struct PredictionTarget {
  PredictionRole role = PredictionRole::kBackground;
  int object = -1;
  int class_id = -1;
  double tx = 0.0, ty = 0.0, tw = 0.0, th = 0.0;
  double iou_target = 0.0;
};

std::vector<PredictionTarget> build_targets(const FeatureMap& fm, const GroundTruth& gt, const Assignment& asg);

LossTerms prediction_loss(std::span<const double> raw, const PredictionTarget& target, const LossWeights& w);

/// Adds d(prediction_loss)/d(raw) into `grad` (same length as `raw`).
void accumulate_prediction_gradient(std::span<const double> raw, const PredictionTarget& target,
                                    const LossWeights& w, std::span<double> grad);

LossBreakdown per_prediction_loss(const FeatureMap& fm, const std::vector<PredictionTarget>& targets,
                                  const LossWeights& w);
LossBreakdown per_prediction_loss(const FeatureMap& fm, const GroundTruth& gt, const Assignment& asg,
                                  const LossWeights& w);

/// Gradient of grand_total with respect to every raw feature-map element,
/// treating the objectness IoU targets as constants.
std::vector<double> loss_gradient(const FeatureMap& fm, const std::vector<PredictionTarget>& targets,
                                  const LossWeights& w);
std::vector<double> loss_gradient(const FeatureMap& fm, const GroundTruth& gt, const Assignment& asg,
                                  const LossWeights& w);

}  // namespace lrm
