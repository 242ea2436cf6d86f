#include "lrm/mining.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "lrm/csv.hpp"
#include "lrm/error.hpp"

namespace lrm {

void LrmConfig::validate() const {
  if (hard_example_count < 1) throw ContractError("hard_example_count must be >= 1");
  if (nms_threshold && !(*nms_threshold > 0.0 && *nms_threshold <= 1.0)) {
    throw ContractError("nms_threshold must lie in (0, 1]");
  }
}

std::vector<RankedPrediction> rank(const LossBreakdown& breakdown, const std::vector<PredictionView>& views) {
  if (breakdown.per_prediction.size() != views.size()) {
    throw ContractError("rank: " + std::to_string(breakdown.per_prediction.size()) + " losses for " +
                        std::to_string(views.size()) + " predictions");
  }
  std::vector<RankedPrediction> out(views.size());
  for (std::size_t k = 0; k < views.size(); ++k) {
    out[k].view = views[k];
    out[k].loss = breakdown.per_prediction[k].total;
    out[k].flat = static_cast<int>(k);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedPrediction& a, const RankedPrediction& b) { return a.loss > b.loss; });
  for (std::size_t r = 0; r < out.size(); ++r) out[r].rank = static_cast<int>(r);
  return out;
}

std::vector<RankedPrediction> dedup_by_loss_nms(std::vector<RankedPrediction> ranked,
                                                std::optional<double> threshold) {
  if (!threshold) return ranked;
  std::vector<RankedPrediction> kept;
  kept.reserve(ranked.size());
  for (auto& p : ranked) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const RankedPrediction& q) {
      return q.view.predicted_class == p.view.predicted_class && iou(q.view.box, p.view.box) >= *threshold;
    });
    if (!suppressed) kept.push_back(std::move(p));
  }
  return kept;
}

std::vector<PredictionIndex> select_hard(const std::vector<RankedPrediction>& ranked_deduped, const LrmConfig& cfg,
                                         const Assignment& asg, const GridSpec& spec) {
  cfg.validate();
  std::vector<PredictionIndex> out;
  if (!cfg.enabled) {
    out.reserve(static_cast<std::size_t>(spec.prediction_count()));
    for (int k = 0; k < spec.prediction_count(); ++k) out.push_back(index_of(spec, k));
    return out;
  }
  const std::size_t take = std::min(static_cast<std::size_t>(cfg.hard_example_count), ranked_deduped.size());
  for (std::size_t r = 0; r < take; ++r) out.push_back(ranked_deduped[r].view.index);
  if (cfg.force_keep_assigned) {
    for (const auto& [n, idx] : asg.responsible) out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

FeatureMap apply_mask(const FeatureMap& fm, const MaskMatrix& m) {
  if (!(fm.spec() == m.spec())) throw ContractError("apply_mask: feature map and mask shapes differ");
  const auto f = fm.values();
  const auto mv = m.values();
  std::vector<double> out(f.size());
  for (std::size_t e = 0; e < f.size(); ++e) out[e] = f[e] * mv[e];
  return FeatureMap(fm.spec(), std::move(out));
}

std::vector<double> gated_gradient(const FeatureMap& fm, const MaskMatrix& m, const GroundTruth& gt,
                                   const Assignment& asg, const LossWeights& w) {
  const FeatureMap masked = apply_mask(fm, m);
  auto grad = loss_gradient(masked, build_targets(masked, gt, asg), w);
  const auto mv = m.values();
  for (std::size_t e = 0; e < grad.size(); ++e) grad[e] = mv[e] == 0.0 ? 0.0 : grad[e] * mv[e];
  return grad;
}

std::vector<double> kept_loss_gradient(const FeatureMap& fm, const MaskMatrix& m, const GroundTruth& gt,
                                       const Assignment& asg, const LossWeights& w) {
  if (!(fm.spec() == m.spec())) throw ContractError("kept_loss_gradient: feature map and mask shapes differ");
  const GridSpec& spec = fm.spec();
  const auto targets = build_targets(fm, gt, asg);
  std::vector<double> grad(spec.element_count(), 0.0);
  const auto per = static_cast<std::size_t>(spec.channels_per_prediction());
  for (int k = 0; k < spec.prediction_count(); ++k) {
    if (!m.kept(k)) continue;
    accumulate_prediction_gradient(fm.group(k), targets[static_cast<std::size_t>(k)], w,
                                   std::span<double>(grad).subspan(group_offset(spec, k), per));
  }
  return grad;
}

std::vector<double> gated_backward_check(const FeatureMap& fm, std::span<const double> mask_values,
                                         const GroundTruth& gt, const Assignment& asg, const LossWeights& w) {
  check_mask_atomic(fm.spec(), mask_values);
  const MaskMatrix m(fm.spec(), std::vector<double>(mask_values.begin(), mask_values.end()));
  return gated_gradient(fm, m, gt, asg, w);
}

LrmStep run_lrm_step(const FeatureMap& fm, const GroundTruth& gt, const LossWeights& w, const LrmConfig& cfg,
                     double ignore_iou) {
  cfg.validate();
  const GridSpec& spec = fm.spec();
  auto asg = assign(gt, spec, ignore_iou);
  auto breakdown = per_prediction_loss(fm, gt, asg, w);

  SelectionReport report;
  report.prediction_count = spec.prediction_count();
  report.fg_total = static_cast<int>(asg.responsible.size());

  std::vector<PredictionIndex> kept;
  if (cfg.enabled) {
    const auto views = decode_all(fm);
    const auto ranked = rank(breakdown, views);
    const auto deduped = dedup_by_loss_nms(ranked, cfg.nms_threshold);
    report.suppressed = static_cast<int>(ranked.size() - deduped.size());
    kept = select_hard(deduped, cfg, asg, spec);
  } else {
    kept = select_hard({}, cfg, asg, spec);
  }

  auto mask = mask_from_selection(spec, kept);
  report.kept = static_cast<int>(kept.size());
  for (const auto& [n, idx] : asg.responsible) {
    if (mask.kept(flat_index(spec, idx))) ++report.fg_kept;
  }
  return LrmStep{std::move(mask), std::move(breakdown), std::move(report), std::move(asg)};
}

void write_selection_csv(std::ostream& out, std::span<const SelectionReport> reports) {
  CsvWriter csv(out);
  csv.row({"image_id", "N", "n_suppressed", "n_kept", "fg_total", "fg_kept"});
  for (const auto& r : reports) {
    csv.row({r.image_id, std::to_string(r.prediction_count), std::to_string(r.suppressed), std::to_string(r.kept),
             std::to_string(r.fg_total), std::to_string(r.fg_kept)});
  }
}

}  // namespace lrm
