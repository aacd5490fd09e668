#include "grouplab/match_cost.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace grouplab {

namespace {
constexpr double kProbClamp = 1e-8;
}

double focal_cls_cost(double p, double alpha, double gamma) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double pos = alpha * std::pow(1.0 - p, gamma) * (-std::log(p));
  const double neg = (1.0 - alpha) * std::pow(p, gamma) * (-std::log(1.0 - p));
  return pos - neg;
}

CostMatrix build_cost_matrix(const std::vector<Prediction>& preds,
                             const std::vector<GroundTruth>& gts,
                             const CostWeights& w) {
  if (preds.empty()) throw std::invalid_argument("build_cost_matrix: no predictions");
  const int n = static_cast<int>(preds.size());
  const int m = static_cast<int>(gts.size());
  const int classes = static_cast<int>(preds[0].class_probs.size());
  CostMatrix cost;
  cost.queries = n;
  cost.gts = m;
  cost.entries.resize(static_cast<size_t>(n) * m);
  for (int j = 0; j < m; ++j) {
    if (gts[j].class_id < 0 || gts[j].class_id >= classes)
      throw std::invalid_argument("build_cost_matrix: gt class " +
                                  std::to_string(gts[j].class_id) + " out of [0," +
                                  std::to_string(classes) + ")");
  }
  for (int i = 0; i < n; ++i) {
    const Prediction& pred = preds[i];
    for (int j = 0; j < m; ++j) {
      const GroundTruth& gt = gts[j];
      const double cls =
          focal_cls_cost(pred.class_probs[gt.class_id], w.focal_alpha, w.focal_gamma);
      cost.at(i, j) = w.mu_cls * cls + w.l1_weight * l1_distance(pred.box, gt.box) +
                      w.giou_weight * (1.0 - giou(pred.box, gt.box));
    }
  }
  return cost;
}

Tensor set_loss(const Tensor& class_probs, const Tensor& boxes,
                const std::vector<GroundTruth>& gts,
                const std::vector<GroupMatches>& matches_per_group,
                const CostWeights& w, int queries_per_group) {
  if (class_probs.shape().size() != 2 || boxes.shape().size() != 2 ||
      boxes.shape()[1] != 4 || boxes.shape()[0] != class_probs.shape()[0])
    throw std::invalid_argument("set_loss: probs " + shape_str(class_probs.shape()) +
                                " vs boxes " + shape_str(boxes.shape()));
  const int total = class_probs.shape()[0];
  const int classes = class_probs.shape()[1];
  const int groups = static_cast<int>(matches_per_group.size());
  if (groups * queries_per_group != total)
    throw std::invalid_argument("set_loss: " + std::to_string(groups) + " groups of " +
                                std::to_string(queries_per_group) + " queries vs " +
                                std::to_string(total) + " predictions");

  // Classification targets: one-hot rows for matched queries, zero otherwise.
  std::vector<double> target(static_cast<size_t>(total) * classes, 0.0);
  std::vector<Tensor> matched_pred_rows;
  std::vector<double> matched_gt_values;
  int matched_count = 0;
  for (int g = 0; g < groups; ++g) {
    for (const auto& [query, gt_index] : matches_per_group[g]) {
      if (query < 0 || query >= queries_per_group || gt_index < 0 ||
          gt_index >= static_cast<int>(gts.size()))
        throw std::invalid_argument("set_loss: assignment index out of range (group " +
                                    std::to_string(g) + ", query " +
                                    std::to_string(query) + ", gt " +
                                    std::to_string(gt_index) + ")");
      const int row = g * queries_per_group + query;
      const GroundTruth& gt = gts[static_cast<size_t>(gt_index)];
      target[static_cast<size_t>(row) * classes + gt.class_id] = 1.0;
      matched_pred_rows.push_back(slice(boxes, 0, row, row + 1));
      const Box& b = gt.box;
      matched_gt_values.insert(matched_gt_values.end(), {b.cx, b.cy, b.w, b.h});
      ++matched_count;
    }
  }

  Tensor t = Tensor::from_values({total, classes}, std::move(target));
  Tensor ones = Tensor::full({total, classes}, 1.0);
  Tensor p = clamp(class_probs, kProbClamp, 1.0 - kProbClamp);
  Tensor one_minus_p = sub(ones, p);
  Tensor pos = mul(t, mul(pow(one_minus_p, w.focal_gamma), neg(log(p))));
  Tensor negm = mul(sub(ones, t), mul(pow(p, w.focal_gamma), neg(log(one_minus_p))));
  Tensor cls_loss =
      add(scale(sum(pos), w.focal_alpha), scale(sum(negm), 1.0 - w.focal_alpha));

  Tensor loss = cls_loss;
  if (matched_count > 0) {
    Tensor pred_rows = matched_pred_rows.size() == 1 ? matched_pred_rows[0]
                                                     : concat(matched_pred_rows, 0);
    Tensor gt_rows =
        Tensor::from_values({matched_count, 4}, std::move(matched_gt_values));
    loss = add(loss, sum(box_loss_rows(pred_rows, gt_rows, w.l1_weight, w.giou_weight)));
  }
  return scale(loss, 1.0 / std::max(1, matched_count));
}

}  // namespace grouplab
