#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrm/box.hpp"
#include "lrm/grid.hpp"
#include "lrm/loss.hpp"

namespace lrm {

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;  // objectness x class score
  std::string image_id;
};

enum class ApProtocol {
  kVoc07ElevenPoint,  // mean of max precision at recall 0, 0.1, ..., 1
  kAreaUnderCurve,    // VOC2010+ area under the interpolated PR envelope
};

struct EvalConfig {
  double iou_threshold = 0.5;
  double nms_threshold = 0.45;
  double confidence_floor = 0.005;
  ApProtocol protocol = ApProtocol::kVoc07ElevenPoint;

  void validate() const;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct EvalResult {
  std::map<int, double> per_class_ap;  // only classes present in the ground truth
  double map = 0.0;
  std::map<int, std::vector<PrPoint>> pr_curves;
  std::vector<std::string> notes;
};

using GroundTruthSet = std::map<std::string, GroundTruth>;

/// One detection per prediction: the argmax class with confidence
/// objectness * class score.
std::vector<Detection> detections_from_feature_map(const FeatureMap& fm, const std::string& image_id);

/// Drops detections below `confidence_floor`, then greedy confidence-descent
/// suppression per (image, class) at IoU >= threshold. Survivors keep their
/// input order.
std::vector<Detection> inference_nms(const std::vector<Detection>& detections, double threshold,
                                     double confidence_floor);

/// Precision/recall after each detection of `class_id`, in confidence order.
std::vector<PrPoint> pr_curve(const std::vector<Detection>& detections, const GroundTruthSet& gt, int class_id,
                              double iou_threshold);

/// nullopt when the class has no ground-truth instance.
std::optional<double> average_precision(const std::vector<Detection>& detections, const GroundTruthSet& gt,
                                        int class_id, double iou_threshold,
                                        ApProtocol protocol = ApProtocol::kVoc07ElevenPoint);

/// inference_nms, then per-class AP, then mAP over classes present in `gt`.
/// Throws RuntimeError when the image ids of `outputs` and `gt` differ.
EvalResult evaluate(const std::map<std::string, std::vector<Detection>>& outputs, const GroundTruthSet& gt,
                    int class_count, const EvalConfig& cfg);

/// class,ap rows followed by a final mAP,<value> row.
void write_eval_csv(std::ostream& out, const EvalResult& result, const std::vector<std::string>& class_names);
void write_pr_csv(std::ostream& out, const std::vector<PrPoint>& curve);

}  // namespace lrm
