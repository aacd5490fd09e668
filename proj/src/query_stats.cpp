#include "grouplab/query_stats.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace grouplab {

GroupPositions positions_from_model(const DetectorModel& model) {
  GroupPositions pos;
  pos.groups = model.config().groups;
  pos.queries_per_group = model.config().queries_per_group;
  const auto logits = model.query_anchors().values();
  pos.xy.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    pos.xy[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  return pos;
}

namespace {

double point_distance(const GroupPositions& pos, int ga, int qa, int gb, int qb) {
  const double dx = pos.x(ga, qa) - pos.x(gb, qb);
  const double dy = pos.y(ga, qa) - pos.y(gb, qb);
  return std::sqrt(dx * dx + dy * dy);
}

// Mean over both directions of nearest-neighbor distances between two groups.
double pair_pd(const GroupPositions& pos, int ga, int gb) {
  const int n = pos.queries_per_group;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) best = std::min(best, point_distance(pos, ga, i, gb, j));
    total += best;
  }
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) best = std::min(best, point_distance(pos, gb, i, ga, j));
    total += best;
  }
  return total / (2.0 * n);
}

}  // namespace

double perturbation_distance(const GroupPositions& pos) {
  if (pos.groups < 2)
    throw std::invalid_argument("perturbation_distance: needs K >= 2, got K=" +
                                std::to_string(pos.groups));
  double total = 0.0;
  int pairs = 0;
  for (int a = 0; a < pos.groups; ++a)
    for (int b = a + 1; b < pos.groups; ++b) {
      total += pair_pd(pos, a, b);
      ++pairs;
    }
  return total / pairs;
}

MatchingDistanceResult matching_distance(const GroupPositions& pos,
                                         const std::vector<Assignment>& assignments) {
  if (pos.groups < 2)
    throw std::invalid_argument("matching_distance: needs K >= 2, got K=" +
                                std::to_string(pos.groups));
  if (static_cast<int>(assignments.size()) != pos.groups)
    throw std::invalid_argument("matching_distance: " +
                                std::to_string(assignments.size()) +
                                " assignments for " + std::to_string(pos.groups) +
                                " groups");
  const size_t m = assignments[0].gt_to_query.size();
  for (const Assignment& a : assignments)
    if (a.gt_to_query.size() != m)
      throw std::invalid_argument(
          "matching_distance: inconsistent gt counts across assignments");
  MatchingDistanceResult result;
  if (m == 0) {
    result.no_gts = true;
    return result;
  }
  double total = 0.0;
  int pairs = 0;
  for (int a = 0; a < pos.groups; ++a) {
    for (int b = a + 1; b < pos.groups; ++b) {
      double pair_total = 0.0;
      for (size_t j = 0; j < m; ++j)
        pair_total += point_distance(pos, a, assignments[a].gt_to_query[j], b,
                                     assignments[b].gt_to_query[j]);
      total += pair_total / static_cast<double>(m);
      ++pairs;
    }
  }
  result.value = total / pairs;
  return result;
}

void dump_positions(const GroupPositions& pos, std::ostream& out) {
  out << "group,query,x,y\n";
  char buf[96];
  for (int g = 0; g < pos.groups; ++g) {
    for (int q = 0; q < pos.queries_per_group; ++q) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", g, q, pos.x(g, q),
                    pos.y(g, q));
      out << buf;
    }
  }
}

}  // namespace grouplab
