#pragma once

#include <vector>

#include "grouplab/match_cost.hpp"

namespace grouplab {

// One-to-One result: an injection from ground-truth indices to query indices.
struct Assignment {
  std::vector<int> gt_to_query;  // entry j = query matched to gt j
  double total_cost = 0.0;

  GroupMatches matches() const {
    GroupMatches m;
    m.reserve(gt_to_query.size());
    for (size_t j = 0; j < gt_to_query.size(); ++j)
      m.emplace_back(gt_to_query[j], static_cast<int>(j));
    return m;
  }
};

// One-to-Many result: several queries per gt, each query used at most once.
struct MultiAssignment {
  std::vector<std::vector<int>> queries_per_gt;

  GroupMatches matches() const {
    GroupMatches m;
    for (size_t j = 0; j < queries_per_gt.size(); ++j)
      for (int q : queries_per_gt[j]) m.emplace_back(q, static_cast<int>(j));
    return m;
  }
};

// Exact minimum-cost injection of gts into queries (M <= N required).
// Rectangular inputs are padded to square with a sentinel column cost so the
// padding can never displace a real match. Deterministic; ties resolve toward
// low query indices.
Assignment hungarian(const CostMatrix& cost);

// Exhaustive enumeration oracle; rejects M > 8.
Assignment brute_force_assign(const CostMatrix& cost);

// Independent Hungarian per group; every gt ends up with exactly K positives.
std::vector<Assignment> group_wise_assign(const std::vector<CostMatrix>& costs);

// Rank-greedy One-to-Many: all (query, gt) pairs sorted by ascending cost,
// assigned with query exclusivity until every gt holds `multiplicity` queries.
MultiAssignment one_to_many_assign(const CostMatrix& cost, int multiplicity);

}  // namespace grouplab
