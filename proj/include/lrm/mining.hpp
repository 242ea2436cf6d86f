#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrm/grid.hpp"
#include "lrm/loss.hpp"

namespace lrm {

/// Loss Rank Mining hyperparameters. K is per image.
struct LrmConfig {
  int hard_example_count = 128;
  std::optional<double> nms_threshold = 0.7;  // nullopt disables loss-descent NMS
  bool enabled = true;
  bool force_keep_assigned = false;

  void validate() const;

  friend bool operator==(const LrmConfig&, const LrmConfig&) = default;
};

struct RankedPrediction {
  PredictionView view;
  double loss = 0.0;
  int rank = 0;
  int flat = 0;
};

/// Sorts predictions by loss, highest first; ties go to the lower flat index.
std::vector<RankedPrediction> rank(const LossBreakdown& breakdown, const std::vector<PredictionView>& views);

/// Greedy suppression in loss-descent order. A prediction is dropped when an
/// already kept prediction of the same predicted class overlaps it with
/// IoU >= threshold. No threshold returns the input unchanged.
std::vector<RankedPrediction> dedup_by_loss_nms(std::vector<RankedPrediction> ranked,
                                                std::optional<double> threshold);

/// First min(K, n) entries of the deduplicated list, plus every responsible
/// prediction when force_keep_assigned is set. All N predictions when LRM is
/// disabled. Returned sorted by flat index.
std::vector<PredictionIndex> select_hard(const std::vector<RankedPrediction>& ranked_deduped, const LrmConfig& cfg,
                                         const Assignment& asg, const GridSpec& spec);

/// Elementwise product F o M.
FeatureMap apply_mask(const FeatureMap& fm, const MaskMatrix& m);

/// d(loss(F o M))/dF = M o dLoss/dF-hat. Masked elements receive exactly zero.
std::vector<double> gated_gradient(const FeatureMap& fm, const MaskMatrix& m, const GroundTruth& gt,
                                   const Assignment& asg, const LossWeights& w);

/// Gradient of the loss summed over kept predictions only, computed directly
/// on F without a mask. Must agree with gated_gradient.
std::vector<double> kept_loss_gradient(const FeatureMap& fm, const MaskMatrix& m, const GroundTruth& gt,
                                       const Assignment& asg, const LossWeights& w);

/// Verification harness for the gradient gate: rejects non-atomic masks, then
/// returns gated_gradient.
std::vector<double> gated_backward_check(const FeatureMap& fm, std::span<const double> mask_values,
                                         const GroundTruth& gt, const Assignment& asg, const LossWeights& w);

struct SelectionReport {
  std::string image_id;
  int prediction_count = 0;
  int suppressed = 0;
  int kept = 0;
  int fg_total = 0;
  int fg_kept = 0;

  double fg_kept_share() const { return kept == 0 ? 0.0 : static_cast<double>(fg_kept) / kept; }
  double fg_population_share() const {
    return prediction_count == 0 ? 0.0 : static_cast<double>(fg_total) / prediction_count;
  }
};

struct LrmStep {
  MaskMatrix mask;
  LossBreakdown breakdown;
  SelectionReport report;
  Assignment assignment;
};

/// decode_all -> assign -> per_prediction_loss -> rank -> dedup_by_loss_nms
/// -> select_hard -> mask_from_selection.
LrmStep run_lrm_step(const FeatureMap& fm, const GroundTruth& gt, const LossWeights& w, const LrmConfig& cfg,
                     double ignore_iou = 0.6);

/// CSV with header image_id,N,n_suppressed,n_kept,fg_total,fg_kept.
void write_selection_csv(std::ostream& out, std::span<const SelectionReport> reports);

}  // namespace lrm
