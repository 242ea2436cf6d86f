#include "lrm/eval.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>

#include "lrm/csv.hpp"
#include "lrm/error.hpp"

namespace lrm {

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ContractError("eval iou_threshold must lie in (0, 1]");
  if (!(nms_threshold > 0.0 && nms_threshold <= 1.0)) throw ContractError("eval nms threshold must lie in (0, 1]");
  if (!(confidence_floor >= 0.0 && confidence_floor <= 1.0)) {
    throw ContractError("eval confidence_floor must lie in [0, 1]");
  }
}

std::vector<Detection> detections_from_feature_map(const FeatureMap& fm, const std::string& image_id) {
  std::vector<Detection> out;
  for (const auto& v : decode_all(fm)) {
    out.push_back(Detection{v.box, v.predicted_class,
                            v.objectness * v.class_scores[static_cast<std::size_t>(v.predicted_class)], image_id});
  }
  return out;
}

namespace {

/// Indices sorted by confidence descending, input order on ties.
std::vector<std::size_t> confidence_order(const std::vector<Detection>& d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d[a].confidence > d[b].confidence; });
  return order;
}

}  // namespace

std::vector<Detection> inference_nms(const std::vector<Detection>& detections, double threshold,
                                     double confidence_floor) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractError("inference_nms threshold must lie in (0, 1]");
  std::vector<bool> keep(detections.size(), false);
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> kept_by_group;
  for (std::size_t k : confidence_order(detections)) {
    const Detection& d = detections[k];
    if (d.confidence < confidence_floor) continue;
    auto& group = kept_by_group[{d.image_id, d.class_id}];
    const bool suppressed = std::any_of(group.begin(), group.end(), [&](std::size_t q) {
      return iou(detections[q].box, d.box) >= threshold;
    });
    if (!suppressed) {
      group.push_back(k);
      keep[k] = true;
    }
  }
  std::vector<Detection> out;
  for (std::size_t k = 0; k < detections.size(); ++k) {
    if (keep[k]) out.push_back(detections[k]);
  }
  return out;
}

namespace {

struct MatchTable {
  std::vector<bool> true_positive;  // in confidence order
  std::size_t positives = 0;
};

MatchTable match(const std::vector<Detection>& detections, const GroundTruthSet& gt, int class_id,
                 double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ContractError("AP iou_threshold must lie in (0, 1]");
  MatchTable table;
  std::map<std::string, std::vector<bool>> matched;
  for (const auto& [id, truth] : gt) {
    matched[id].assign(truth.size(), false);
    table.positives += static_cast<std::size_t>(std::count(truth.classes.begin(), truth.classes.end(), class_id));
  }
  std::vector<Detection> of_class;
  for (const auto& d : detections) {
    if (d.class_id == class_id) of_class.push_back(d);
  }
  for (std::size_t k : confidence_order(of_class)) {
    const Detection& d = of_class[k];
    const auto it = gt.find(d.image_id);
    int best = -1;
    double best_iou = -1.0;
    if (it != gt.end()) {
      const GroundTruth& truth = it->second;
      auto& used = matched[d.image_id];
      for (std::size_t g = 0; g < truth.size(); ++g) {
        if (truth.classes[g] != class_id || used[g]) continue;
        const double o = iou(d.box, truth.boxes[g]);
        if (o > best_iou) {
          best_iou = o;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= iou_threshold) {
        used[static_cast<std::size_t>(best)] = true;
        table.true_positive.push_back(true);
        continue;
      }
    }
    table.true_positive.push_back(false);
  }
  return table;
}

std::vector<PrPoint> curve_from(const MatchTable& table) {
  std::vector<PrPoint> curve;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < table.true_positive.size(); ++k) {
    tp += table.true_positive[k] ? 1 : 0;
    curve.push_back({table.positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(table.positives),
                     static_cast<double>(tp) / static_cast<double>(k + 1)});
  }
  return curve;
}

}  // namespace

std::vector<PrPoint> pr_curve(const std::vector<Detection>& detections, const GroundTruthSet& gt, int class_id,
                              double iou_threshold) {
  return curve_from(match(detections, gt, class_id, iou_threshold));
}

std::optional<double> average_precision(const std::vector<Detection>& detections, const GroundTruthSet& gt,
                                        int class_id, double iou_threshold, ApProtocol protocol) {
  const MatchTable table = match(detections, gt, class_id, iou_threshold);
  if (table.positives == 0) return std::nullopt;
  const auto curve = curve_from(table);

  if (protocol == ApProtocol::kVoc07ElevenPoint) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double best = 0.0;
      for (const auto& p : curve) {
        if (p.recall >= level) best = std::max(best, p.precision);
      }
      ap += best;
    }
    return ap / 11.0;
  }

  // Precision envelope, integrated over recall steps.
  std::vector<double> rec{0.0}, prec{0.0};
  for (const auto& p : curve) {
    rec.push_back(p.recall);
    prec.push_back(p.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t k = prec.size() - 1; k > 0; --k) prec[k - 1] = std::max(prec[k - 1], prec[k]);
  double ap = 0.0;
  for (std::size_t k = 1; k < rec.size(); ++k) ap += (rec[k] - rec[k - 1]) * prec[k];
  return ap;
}

EvalResult evaluate(const std::map<std::string, std::vector<Detection>>& outputs, const GroundTruthSet& gt,
                    int class_count, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<std::string> unmatched;
  for (const auto& [id, dets] : outputs) {
    if (!gt.contains(id)) unmatched.push_back(id);
  }
  for (const auto& [id, truth] : gt) {
    if (!outputs.contains(id)) unmatched.push_back(id);
  }
  if (!unmatched.empty()) {
    std::string msg = "evaluate: image ids without a counterpart:";
    for (const auto& id : unmatched) msg += " " + id;
    throw RuntimeError(msg);
  }

  std::vector<Detection> all;
  for (const auto& [id, dets] : outputs) {
    for (const auto& d : dets) {
      if (d.image_id != id) throw ContractError("detection image_id does not match its output key " + id);
      all.push_back(d);
    }
  }
  const auto filtered = inference_nms(all, cfg.nms_threshold, cfg.confidence_floor);

  EvalResult result;
  for (int c = 0; c < class_count; ++c) {
    const auto ap = average_precision(filtered, gt, c, cfg.iou_threshold, cfg.protocol);
    if (!ap) {
      result.notes.push_back("class " + std::to_string(c) + " has no ground truth; excluded from mAP");
      continue;
    }
    result.per_class_ap[c] = *ap;
    result.pr_curves[c] = pr_curve(filtered, gt, c, cfg.iou_threshold);
  }
  if (!result.per_class_ap.empty()) {
    double sum = 0.0;
    for (const auto& [c, ap] : result.per_class_ap) sum += ap;
    result.map = sum / static_cast<double>(result.per_class_ap.size());
  }
  return result;
}

void write_eval_csv(std::ostream& out, const EvalResult& result, const std::vector<std::string>& class_names) {
  CsvWriter csv(out);
  csv.row({"class", "ap"});
  for (const auto& [c, ap] : result.per_class_ap) {
    const std::string name =
        c < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(c)] : std::to_string(c);
    csv.row({name, format_real(ap)});
  }
  csv.row({"mAP", format_real(result.map)});
}

void write_pr_csv(std::ostream& out, const std::vector<PrPoint>& curve) {
  CsvWriter csv(out);
  csv.row({"recall", "precision"});
  for (const auto& p : curve) csv.row({format_real(p.recall), format_real(p.precision)});
}

}  // namespace lrm
