#pragma once

#include <ostream>
#include <vector>

#include "grouplab/assign.hpp"
#include "grouplab/decoder.hpp"

namespace grouplab {

// Normalized 2-d positions of all K*N queries (sigmoid of the anchor logits).
struct GroupPositions {
  int groups = 0;
  int queries_per_group = 0;
  std::vector<double> xy;  // (groups * queries_per_group) * 2, row-major

  double x(int group, int query) const {
    return xy[2 * (static_cast<size_t>(group) * queries_per_group + query)];
  }
  double y(int group, int query) const {
    return xy[2 * (static_cast<size_t>(group) * queries_per_group + query) + 1];
  }
};

GroupPositions positions_from_model(const DetectorModel& model);

// Mean nearest-neighbor distance between the queries of two groups, averaged
// over both directions; for K > 2, the mean over all unordered group pairs.
// Requires K >= 2.
double perturbation_distance(const GroupPositions& pos);

struct MatchingDistanceResult {
  double value = 0.0;
  bool no_gts = false;  // M = 0: value is 0 by convention
};

// Mean distance between queries of different groups matched to the same gt;
// for K > 2, the mean over unordered group pairs. One assignment per group,
// all sharing the same gt count.
MatchingDistanceResult matching_distance(const GroupPositions& pos,
                                         const std::vector<Assignment>& assignments);

// CSV rows group,query,x,y (with header) for external scatter plotting.
void dump_positions(const GroupPositions& pos, std::ostream& out);

}  // namespace grouplab
