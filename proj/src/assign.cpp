#include "grouplab/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace grouplab {

namespace {

void check_finite(const CostMatrix& cost) {
  for (double v : cost.entries)
    if (!std::isfinite(v))
      throw std::invalid_argument("assign: non-finite cost entry");
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  const int n = cost.queries;
  const int m = cost.gts;
  if (m > n)
    throw std::invalid_argument("hungarian: " + std::to_string(m) + " gts exceed " +
                                std::to_string(n) + " queries");
  Assignment result;
  if (m == 0) return result;
  check_finite(cost);

  // Square padding: dummy gt columns priced above any achievable real total.
  double max_entry = 0.0;
  for (double v : cost.entries) max_entry = std::max(max_entry, v);
  const double sentinel = max_entry * m + 2.0;
  auto entry = [&](int i, int j) { return j < m ? cost.at(i, j) : sentinel; };

  // Shortest-augmenting-path Hungarian with potentials, O(n^3). Columns are
  // scanned in ascending index, so equal-cost alternatives settle on the
  // lowest query index.
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = entry(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  // p[j] = column (1-based) assigned to row... rows here are the padded gt
  // side; recover gt -> query from the real columns.
  result.gt_to_query.assign(m, -1);
  for (int j = 1; j <= n; ++j) {
    const int gt = p[j] - 1;    // padded gt index
    const int query = j - 1;
    if (gt < m) result.gt_to_query[gt] = query;
  }
  for (int j = 0; j < m; ++j) result.total_cost += cost.at(result.gt_to_query[j], j);
  return result;
}

Assignment brute_force_assign(const CostMatrix& cost) {
  const int n = cost.queries;
  const int m = cost.gts;
  if (m > 8)
    throw std::invalid_argument("brute_force_assign: M=" + std::to_string(m) +
                                " exceeds the enumeration guard (8)");
  if (m > n)
    throw std::invalid_argument("brute_force_assign: " + std::to_string(m) +
                                " gts exceed " + std::to_string(n) + " queries");
  Assignment best;
  if (m == 0) return best;
  check_finite(cost);
  best.total_cost = std::numeric_limits<double>::infinity();
  std::vector<int> current(m, -1);
  std::vector<char> used(n, 0);
  auto recurse = [&](auto&& self, int gt, double acc) -> void {
    if (gt == m) {
      if (acc < best.total_cost) {
        best.total_cost = acc;
        best.gt_to_query = current;
      }
      return;
    }
    for (int q = 0; q < n; ++q) {
      if (used[q]) continue;
      used[q] = 1;
      current[gt] = q;
      self(self, gt + 1, acc + cost.at(q, gt));
      used[q] = 0;
    }
  };
  recurse(recurse, 0, 0.0);
  return best;
}

std::vector<Assignment> group_wise_assign(const std::vector<CostMatrix>& costs) {
  std::vector<Assignment> result;
  result.reserve(costs.size());
  for (size_t g = 0; g < costs.size(); ++g) {
    if (costs[g].gts > costs[g].queries)
      throw std::invalid_argument("group_wise_assign: group " + std::to_string(g) +
                                  " infeasible (" + std::to_string(costs[g].gts) +
                                  " gts, " + std::to_string(costs[g].queries) +
                                  " queries)");
    result.push_back(hungarian(costs[g]));
  }
  return result;
}

MultiAssignment one_to_many_assign(const CostMatrix& cost, int multiplicity) {
  const int n = cost.queries;
  const int m = cost.gts;
  if (multiplicity < 1)
    throw std::invalid_argument("one_to_many_assign: multiplicity must be >= 1");
  if (n < multiplicity * m)
    throw std::invalid_argument("one_to_many_assign: need " +
                                std::to_string(multiplicity * m) + " queries, have " +
                                std::to_string(n));
  MultiAssignment result;
  result.queries_per_gt.assign(m, {});
  if (m == 0) return result;
  check_finite(cost);

  struct Pair {
    double cost;
    int query;
    int gt;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<size_t>(n) * m);
  for (int q = 0; q < n; ++q)
    for (int j = 0; j < m; ++j) pairs.push_back({cost.at(q, j), q, j});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.query != b.query) return a.query < b.query;
    return a.gt < b.gt;
  });

  std::vector<char> query_used(n, 0);
  int remaining = multiplicity * m;
  for (const Pair& p : pairs) {
    if (remaining == 0) break;
    if (query_used[p.query]) continue;
    if (static_cast<int>(result.queries_per_gt[p.gt].size()) >= multiplicity) continue;
    query_used[p.query] = 1;
    result.queries_per_gt[p.gt].push_back(p.query);
    --remaining;
  }
  return result;
}

}  // namespace grouplab
