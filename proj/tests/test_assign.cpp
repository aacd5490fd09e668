#include <doctest.h>

#include <algorithm>
#include <set>

#include "grouplab/assign.hpp"
#include "grouplab/rng.hpp"

using namespace grouplab;

namespace {

CostMatrix make_cost(int queries, int gts, const std::vector<double>& entries) {
  CostMatrix c;
  c.queries = queries;
  c.gts = gts;
  c.entries = entries;
  return c;
}

CostMatrix random_cost(Rng& rng, int queries, int gts, double lo = 0.0,
                       double hi = 10.0) {
  CostMatrix c;
  c.queries = queries;
  c.gts = gts;
  c.entries.resize(static_cast<size_t>(queries) * gts);
  for (double& v : c.entries) v = rng.uniform(lo, hi);
  return c;
}

void check_injective(const Assignment& a, int queries) {
  std::set<int> seen;
  for (int q : a.gt_to_query) {
    CHECK(q >= 0);
    CHECK(q < queries);
    CHECK(seen.insert(q).second);
  }
}

}  // namespace

TEST_CASE("hungarian on a 1x1 matrix") {
  const Assignment a = hungarian(make_cost(1, 1, {0.0}));
  REQUIRE(a.gt_to_query.size() == 1);
  CHECK(a.gt_to_query[0] == 0);
  CHECK(a.total_cost == 0.0);
}

TEST_CASE("hungarian picks the unique optimum by inspection") {
  // entries (query, gt): q0 = [1,2], q1 = [2,1]
  const Assignment a = hungarian(make_cost(2, 2, {1, 2, 2, 1}));
  CHECK(a.gt_to_query[0] == 0);
  CHECK(a.gt_to_query[1] == 1);
  CHECK(a.total_cost == doctest::Approx(2.0));
}

TEST_CASE("hungarian rejects more gts than queries, reporting the counts") {
  CHECK_THROWS_WITH_AS(hungarian(make_cost(1, 2, {1, 2})),
                       doctest::Contains("2 gts exceed 1 queries"),
                       std::invalid_argument);
}

TEST_CASE("hungarian of an empty gt set is empty") {
  CostMatrix c;
  c.queries = 3;
  c.gts = 0;
  const Assignment a = hungarian(c);
  CHECK(a.gt_to_query.empty());
  CHECK(a.total_cost == 0.0);
}

TEST_CASE("hungarian equals brute force on 1000 random square instances") {
  Rng rng(606);
  for (int trial = 0; trial < 1000; ++trial) {
    const CostMatrix c = random_cost(rng, 6, 6);
    const Assignment fast = hungarian(c);
    const Assignment exact = brute_force_assign(c);
    check_injective(fast, 6);
    CHECK(fast.total_cost == doctest::Approx(exact.total_cost).epsilon(1e-12));
  }
}

TEST_CASE("hungarian equals brute force on rectangular and negative-cost instances") {
  Rng rng(909);
  for (int trial = 0; trial < 500; ++trial) {
    const int queries = rng.uniform_int(1, 9);
    const int gts = rng.uniform_int(0, std::min(queries, 6));
    const CostMatrix c = random_cost(rng, queries, gts, -5.0, 5.0);
    const Assignment fast = hungarian(c);
    const Assignment exact = brute_force_assign(c);
    check_injective(fast, queries);
    CHECK(fast.total_cost == doctest::Approx(exact.total_cost).epsilon(1e-12));
    // reported total equals the sum of selected entries
    double total = 0.0;
    for (size_t j = 0; j < fast.gt_to_query.size(); ++j)
      total += c.at(fast.gt_to_query[j], static_cast<int>(j));
    CHECK(fast.total_cost == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("brute force on a single gt picks the cheapest query") {
  const CostMatrix c = make_cost(4, 1, {3, 1, 2, 5});
  const Assignment a = brute_force_assign(c);
  CHECK(a.gt_to_query[0] == 1);
  CHECK(a.total_cost == 1.0);
}

TEST_CASE("brute force on all-equal entries costs M times the entry") {
  const CostMatrix c = make_cost(4, 3, std::vector<double>(12, 2.5));
  const Assignment a = brute_force_assign(c);
  CHECK(a.total_cost == doctest::Approx(7.5));
  check_injective(a, 4);
}

TEST_CASE("brute force rejects M beyond the enumeration guard") {
  CostMatrix c;
  c.queries = 9;
  c.gts = 9;
  c.entries.assign(81, 1.0);
  CHECK_THROWS_AS(brute_force_assign(c), std::invalid_argument);
}

TEST_CASE("shift invariance: adding a constant leaves the argmin unchanged") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const CostMatrix c = random_cost(rng, 5, 3);
    CostMatrix shifted = c;
    const double offset = rng.uniform(-20, 20);
    for (double& v : shifted.entries) v += offset;
    const Assignment a = hungarian(c);
    const Assignment b = hungarian(shifted);
    CHECK(a.gt_to_query == b.gt_to_query);
    CHECK(b.total_cost == doctest::Approx(a.total_cost + 3 * offset).epsilon(1e-9));
  }
}

TEST_CASE("group_wise produces exactly K positives per gt") {
  Rng rng(31337);
  std::vector<CostMatrix> costs;
  for (int g = 0; g < 3; ++g) costs.push_back(random_cost(rng, 4, 2));
  const std::vector<Assignment> result = group_wise_assign(costs);
  REQUIRE(result.size() == 3);
  int positives = 0;
  for (const Assignment& a : result) {
    CHECK(a.gt_to_query.size() == 2);
    check_injective(a, 4);
    positives += static_cast<int>(a.gt_to_query.size());
  }
  CHECK(positives == 6);  // K positives per gt, summed over 2 gts
}

TEST_CASE("group_wise with one group reduces to plain hungarian") {
  Rng rng(8);
  const CostMatrix c = random_cost(rng, 5, 3);
  const std::vector<Assignment> grouped = group_wise_assign({c});
  const Assignment plain = hungarian(c);
  REQUIRE(grouped.size() == 1);
  CHECK(grouped[0].gt_to_query == plain.gt_to_query);
  CHECK(grouped[0].total_cost == plain.total_cost);
}

TEST_CASE("identical cost matrices give identical per-group assignments") {
  Rng rng(15);
  const CostMatrix c = random_cost(rng, 6, 4);
  const std::vector<Assignment> result = group_wise_assign({c, c, c});
  for (const Assignment& a : result) CHECK(a.gt_to_query == result[0].gt_to_query);
}

TEST_CASE("group_wise rejects an infeasible group by index") {
  Rng rng(5);
  std::vector<CostMatrix> costs = {random_cost(rng, 4, 2), random_cost(rng, 2, 3)};
  CHECK_THROWS_WITH_AS(group_wise_assign(costs), doctest::Contains("group 1"),
                       std::invalid_argument);
}

TEST_CASE("group independence: perturbing one group's costs never changes another's") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CostMatrix> costs = {random_cost(rng, 5, 3), random_cost(rng, 5, 3),
                                     random_cost(rng, 5, 3)};
    const std::vector<Assignment> before = group_wise_assign(costs);
    costs[1] = random_cost(rng, 5, 3);
    const std::vector<Assignment> after = group_wise_assign(costs);
    CHECK(after[0].gt_to_query == before[0].gt_to_query);
    CHECK(after[2].gt_to_query == before[2].gt_to_query);
  }
}

namespace {

// Scripted greedy oracle: an independent pass over pairs sorted by
// (cost, query, gt) honoring exclusivity and the per-gt quota.
MultiAssignment greedy_oracle(const CostMatrix& c, int multiplicity) {
  struct P {
    double cost;
    int q, g;
  };
  std::vector<P> pairs;
  for (int q = 0; q < c.queries; ++q)
    for (int g = 0; g < c.gts; ++g) pairs.push_back({c.at(q, g), q, g});
  std::sort(pairs.begin(), pairs.end(), [](const P& a, const P& b) {
    return a.cost != b.cost ? a.cost < b.cost
                            : (a.q != b.q ? a.q < b.q : a.g < b.g);
  });
  MultiAssignment out;
  out.queries_per_gt.assign(static_cast<size_t>(c.gts), {});
  std::vector<char> used(static_cast<size_t>(c.queries), 0);
  for (const P& p : pairs) {
    if (used[static_cast<size_t>(p.q)]) continue;
    if (static_cast<int>(out.queries_per_gt[static_cast<size_t>(p.g)].size()) >=
        multiplicity)
      continue;
    used[static_cast<size_t>(p.q)] = 1;
    out.queries_per_gt[static_cast<size_t>(p.g)].push_back(p.q);
  }
  return out;
}

}  // namespace

TEST_CASE("one_to_many with multiplicity one is a valid injection") {
  Rng rng(3);
  const CostMatrix c = random_cost(rng, 6, 4);
  const MultiAssignment m = one_to_many_assign(c, 1);
  std::set<int> used;
  for (const auto& queries : m.queries_per_gt) {
    REQUIRE(queries.size() == 1);
    CHECK(used.insert(queries[0]).second);
  }
}

TEST_CASE("one gt with multiplicity three takes its three cheapest queries") {
  const CostMatrix c = make_cost(5, 1, {0.9, 0.1, 0.5, 0.3, 0.7});
  const MultiAssignment m = one_to_many_assign(c, 3);
  std::vector<int> queries = m.queries_per_gt[0];
  std::sort(queries.begin(), queries.end());
  CHECK(queries == std::vector<int>{1, 2, 3});
}

TEST_CASE("competing gts resolve by global greedy rank") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const int queries = rng.uniform_int(4, 10);
    const int gts = rng.uniform_int(1, 3);
    const int multiplicity = rng.uniform_int(1, queries / std::max(1, gts));
    if (queries < multiplicity * gts) continue;
    const CostMatrix c = random_cost(rng, queries, gts);
    const MultiAssignment got = one_to_many_assign(c, multiplicity);
    const MultiAssignment expected = greedy_oracle(c, multiplicity);
    CHECK(got.queries_per_gt == expected.queries_per_gt);
    // exactly `multiplicity` queries per gt, no reuse across gts
    std::set<int> used;
    for (const auto& qs : got.queries_per_gt) {
      CHECK(static_cast<int>(qs.size()) == multiplicity);
      for (int q : qs) CHECK(used.insert(q).second);
    }
  }
}

TEST_CASE("one_to_many rejects insufficient queries") {
  Rng rng(9);
  const CostMatrix c = random_cost(rng, 5, 2);
  CHECK_THROWS_WITH_AS(one_to_many_assign(c, 3), doctest::Contains("need 6"),
                       std::invalid_argument);
}
