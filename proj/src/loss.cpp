#include "lrm/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "lrm/error.hpp"

namespace lrm {

void GroundTruth::validate(int class_count, int image_size) const {
  if (boxes.size() != classes.size()) throw ContractError("ground truth boxes/classes length mismatch");
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    const Box& b = boxes[n];
    const std::string where = "ground truth object " + std::to_string(n);
    if (!b.valid() || !(area(b) > 0.0)) throw ContractError(where + " has non-positive area");
    if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > image_size || b.y_max > image_size) {
      throw ContractError(where + " lies outside the image");
    }
    if (classes[n] < 0 || classes[n] >= class_count) throw ContractError(where + " has class out of range");
  }
}

void LossWeights::validate() const {
  for (double v : {coord, obj, noobj, cls}) {
    if (!std::isfinite(v) || v < 0.0) throw ContractError("loss weights must be finite and non-negative");
  }
}

namespace {

Box prior_box(const GridSpec& spec, double cx, double cy, const Anchor& a) {
  return from_center(cx, cy, a.w * spec.stride(), a.h * spec.stride());
}

int cell_of(double coord, double stride, int grid_size) {
  return std::clamp(static_cast<int>(std::floor(coord / stride)), 0, grid_size - 1);
}

}  // namespace

Assignment assign(const GroundTruth& gt, const GridSpec& spec, double ignore_iou) {
  spec.validate();
  gt.validate(spec.class_count, spec.image_size);
  if (!(ignore_iou >= 0.0 && ignore_iou <= 1.0)) throw ContractError("ignore_iou must lie in [0, 1]");

  const double stride = spec.stride();
  std::vector<int> order(gt.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const Box& ba = gt.boxes[static_cast<std::size_t>(a)];
    const Box& bb = gt.boxes[static_cast<std::size_t>(b)];
    return std::tie(ba.x_min, ba.y_min, ba.x_max, ba.y_max, gt.classes[static_cast<std::size_t>(a)]) <
           std::tie(bb.x_min, bb.y_min, bb.x_max, bb.y_max, gt.classes[static_cast<std::size_t>(b)]);
  });

  Assignment asg;
  std::set<PredictionIndex> taken;
  for (int n : order) {
    const Box& b = gt.boxes[static_cast<std::size_t>(n)];
    const double cx = b.center_x();
    const double cy = b.center_y();
    const int row = cell_of(cy, stride, spec.grid_size);
    const int col = cell_of(cx, stride, spec.grid_size);

    std::vector<std::pair<double, int>> ranked;
    for (int a = 0; a < spec.anchor_count; ++a) {
      ranked.emplace_back(iou(prior_box(spec, cx, cy, spec.anchors[static_cast<std::size_t>(a)]), b), a);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& l, const auto& r) { return l.first > r.first; });

    bool placed = false;
    for (const auto& [score, a] : ranked) {
      const PredictionIndex idx{row, col, a};
      if (taken.insert(idx).second) {
        asg.responsible.emplace(n, idx);
        placed = true;
        break;
      }
    }
    if (!placed) {
      asg.warnings.push_back("object " + std::to_string(n) + " dropped: no free anchor in cell (" +
                             std::to_string(row) + "," + std::to_string(col) + ")");
    }
  }

  for (int k = 0; k < spec.prediction_count(); ++k) {
    const PredictionIndex idx = index_of(spec, k);
    if (taken.contains(idx)) continue;
    const Box prior = prior_box(spec, (idx.col + 0.5) * stride, (idx.row + 0.5) * stride,
                                spec.anchors[static_cast<std::size_t>(idx.anchor)]);
    for (const Box& b : gt.boxes) {
      if (iou(prior, b) > ignore_iou) {
        asg.ignore_set.push_back(idx);
        break;
      }
    }
  }
  return asg;
}

std::vector<PredictionTarget> build_targets(const FeatureMap& fm, const GroundTruth& gt, const Assignment& asg) {
  const GridSpec& spec = fm.spec();
  gt.validate(spec.class_count, spec.image_size);
  std::vector<PredictionTarget> targets(static_cast<std::size_t>(spec.prediction_count()));
  for (const auto& idx : asg.ignore_set) {
    if (!in_range(spec, idx)) throw ContractError("ignore_set index out of range");
    targets[static_cast<std::size_t>(flat_index(spec, idx))].role = PredictionRole::kIgnored;
  }

  const double stride = spec.stride();
  for (const auto& [n, idx] : asg.responsible) {
    if (n < 0 || static_cast<std::size_t>(n) >= gt.size()) throw ContractError("assignment refers to unknown object");
    if (!in_range(spec, idx)) throw ContractError("responsible index out of range");
    auto& t = targets[static_cast<std::size_t>(flat_index(spec, idx))];
    if (t.role == PredictionRole::kIgnored) throw ContractError("responsible prediction is also ignored");
    if (t.role == PredictionRole::kResponsible) throw ContractError("prediction responsible for two objects");
    const Box& b = gt.boxes[static_cast<std::size_t>(n)];
    const Anchor& a = spec.anchors[static_cast<std::size_t>(idx.anchor)];
    t.role = PredictionRole::kResponsible;
    t.object = n;
    t.class_id = gt.classes[static_cast<std::size_t>(n)];
    t.tx = b.center_x() / stride - idx.col;
    t.ty = b.center_y() / stride - idx.row;
    t.tw = std::log(b.width() / stride / a.w);
    t.th = std::log(b.height() / stride / a.h);
    t.iou_target = iou(decode(fm, idx).box, b);
  }
  return targets;
}

LossTerms prediction_loss(std::span<const double> raw, const PredictionTarget& t, const LossWeights& w) {
  LossTerms terms;
  switch (t.role) {
    case PredictionRole::kIgnored:
      break;
    case PredictionRole::kBackground: {
      const double so = sigmoid(raw[channel::kObj]);
      terms.noobj = w.noobj * so * so;
      break;
    }
    case PredictionRole::kResponsible: {
      const double dx = sigmoid(raw[channel::kTx]) - t.tx;
      const double dy = sigmoid(raw[channel::kTy]) - t.ty;
      const double dw = raw[channel::kTw] - t.tw;
      const double dh = raw[channel::kTh] - t.th;
      terms.reg = w.coord * (dx * dx + dy * dy + dw * dw + dh * dh);
      const double d_obj = sigmoid(raw[channel::kObj]) - t.iou_target;
      terms.obj = w.obj * d_obj * d_obj;
      const auto scores = softmax(raw.subspan(channel::kClass0));
      double cls = 0.0;
      for (std::size_t c = 0; c < scores.size(); ++c) {
        const double d = scores[c] - (static_cast<int>(c) == t.class_id ? 1.0 : 0.0);
        cls += d * d;
      }
      terms.cls = w.cls * cls;
      break;
    }
  }
  terms.total = terms.obj + terms.noobj + terms.cls + terms.reg;
  return terms;
}

void accumulate_prediction_gradient(std::span<const double> raw, const PredictionTarget& t, const LossWeights& w,
                                    std::span<double> grad) {
  switch (t.role) {
    case PredictionRole::kIgnored:
      return;
    case PredictionRole::kBackground: {
      const double so = sigmoid(raw[channel::kObj]);
      grad[channel::kObj] += 2.0 * w.noobj * so * so * (1.0 - so);
      return;
    }
    case PredictionRole::kResponsible: {
      const double sx = sigmoid(raw[channel::kTx]);
      const double sy = sigmoid(raw[channel::kTy]);
      grad[channel::kTx] += 2.0 * w.coord * (sx - t.tx) * sx * (1.0 - sx);
      grad[channel::kTy] += 2.0 * w.coord * (sy - t.ty) * sy * (1.0 - sy);
      grad[channel::kTw] += 2.0 * w.coord * (raw[channel::kTw] - t.tw);
      grad[channel::kTh] += 2.0 * w.coord * (raw[channel::kTh] - t.th);
      const double so = sigmoid(raw[channel::kObj]);
      grad[channel::kObj] += 2.0 * w.obj * (so - t.iou_target) * so * (1.0 - so);

      // d/dz_k of sum_c (s_c - y_c)^2 = s_k * (g_k - sum_c g_c s_c), g_c = 2 (s_c - y_c)
      const auto s = softmax(raw.subspan(channel::kClass0));
      std::vector<double> g(s.size());
      double gs = 0.0;
      for (std::size_t c = 0; c < s.size(); ++c) {
        g[c] = 2.0 * (s[c] - (static_cast<int>(c) == t.class_id ? 1.0 : 0.0));
        gs += g[c] * s[c];
      }
      for (std::size_t c = 0; c < s.size(); ++c) {
        grad[channel::kClass0 + c] += w.cls * s[c] * (g[c] - gs);
      }
      return;
    }
  }
}

LossBreakdown per_prediction_loss(const FeatureMap& fm, const std::vector<PredictionTarget>& targets,
                                  const LossWeights& w) {
  const GridSpec& spec = fm.spec();
  if (targets.size() != static_cast<std::size_t>(spec.prediction_count())) {
    throw ContractError("target count does not match prediction count");
  }
  w.validate();
  LossBreakdown out;
  out.per_prediction.reserve(targets.size());
  for (int k = 0; k < spec.prediction_count(); ++k) {
    out.per_prediction.push_back(prediction_loss(fm.group(k), targets[static_cast<std::size_t>(k)], w));
    out.grand_total += out.per_prediction.back().total;
  }
  return out;
}

LossBreakdown per_prediction_loss(const FeatureMap& fm, const GroundTruth& gt, const Assignment& asg,
                                  const LossWeights& w) {
  return per_prediction_loss(fm, build_targets(fm, gt, asg), w);
}

std::vector<double> loss_gradient(const FeatureMap& fm, const std::vector<PredictionTarget>& targets,
                                  const LossWeights& w) {
  const GridSpec& spec = fm.spec();
  if (targets.size() != static_cast<std::size_t>(spec.prediction_count())) {
    throw ContractError("target count does not match prediction count");
  }
  std::vector<double> grad(spec.element_count(), 0.0);
  const auto per = static_cast<std::size_t>(spec.channels_per_prediction());
  for (int k = 0; k < spec.prediction_count(); ++k) {
    accumulate_prediction_gradient(fm.group(k), targets[static_cast<std::size_t>(k)], w,
                                   std::span<double>(grad).subspan(group_offset(spec, k), per));
  }
  return grad;
}

std::vector<double> loss_gradient(const FeatureMap& fm, const GroundTruth& gt, const Assignment& asg,
                                  const LossWeights& w) {
  return loss_gradient(fm, build_targets(fm, gt, asg), w);
}

}  // namespace lrm
