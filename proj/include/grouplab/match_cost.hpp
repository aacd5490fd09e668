#pragma once

#include <utility>
#include <vector>

#include "grouplab/box.hpp"
#include "grouplab/tensor.hpp"

namespace grouplab {

// Per-query prediction: per-class sigmoid probabilities plus a box.
struct Prediction {
  std::vector<double> class_probs;
  Box box;
};

struct GroundTruth {
  int class_id = 0;
  Box box;
};

struct CostWeights {
  double mu_cls = 2.0;
  double l1_weight = 5.0;
  double giou_weight = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

// Query-by-ground-truth matching costs; row i = query, column j = gt.
struct CostMatrix {
  int queries = 0;  // N
  int gts = 0;      // M
  std::vector<double> entries;  // row-major, queries x gts

  double at(int query, int gt) const { return entries[static_cast<size_t>(query) * gts + gt]; }
  double& at(int query, int gt) { return entries[static_cast<size_t>(query) * gts + gt]; }
};

// Focal classification cost: alpha(1-p)^gamma(-log p) - (1-alpha)p^gamma(-log(1-p)).
// p is clamped to [1e-8, 1-1e-8]; strictly decreasing in p.
double focal_cls_cost(double p, double alpha = 0.25, double gamma = 2.0);

// entry(i,j) = mu_cls * focal_cls_cost(p_i[class_j]) + l1_weight * L1(b_i, b_j)
//            + giou_weight * (1 - giou(b_i, b_j))
CostMatrix build_cost_matrix(const std::vector<Prediction>& preds,
                             const std::vector<GroundTruth>& gts,
                             const CostWeights& w);

// One group's matched pairs as (query index local to the group, gt index).
using GroupMatches = std::vector<std::pair<int, int>>;

// Differentiable training loss over all groups: focal classification over
// every query (matched queries target their gt class, the rest are
// all-negative) plus l1/giou box terms over the matched pairs, normalized by
// max(1, total matched pairs). For one-to-one groups the normalizer is K*M.
Tensor set_loss(const Tensor& class_probs, const Tensor& boxes,
                const std::vector<GroundTruth>& gts,
                const std::vector<GroupMatches>& matches_per_group,
                const CostWeights& w, int queries_per_group);

}  // namespace grouplab
