#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using namespace mapvec;
using mapvec::testing::fixture;
using mapvec::testing::line;
using mapvec::testing::make_instance;

namespace {

CostMatrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<std::vector<double>> v(r, std::vector<double>(c));
  for (auto& row : v) {
    for (double& x : row) x = rng.uniform(-5.0, 5.0);
  }
  return CostMatrix::from_values(v);
}

std::vector<std::pair<std::size_t, std::size_t>> pair_list(const AssignmentResult& r) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& p : r.pairs) out.emplace_back(p.pred, p.gt);
  return out;
}

}  // namespace

TEST(BuildCost, PerfectCandidateIsRowMinimum) {
  const auto a = make_instance(MapClass::lane_divider, line({-3, -10}, {-3, 10}, 20), false, 1.0 - kProbEps);
  const auto b = make_instance(MapClass::road_boundary, line({6, -10}, {6, 10}, 20), false, 0.7);
  const std::vector<MapInstance> preds{a}, gts{a, b};
  const MatcherConfig cfg;
  const auto m = build_cost(preds, gts, cfg);
  EXPECT_NEAR(m.cost(0, 0), cfg.w_cls * gfc(1.0 - kProbEps, 1.0, cfg.focal), 1e-12);
  EXPECT_EQ(m.at(0, 0).pts_term, 0.0);
  EXPECT_LT(m.cost(0, 0), m.cost(0, 1));
}

TEST(BuildCost, ReversedPolylineSelectsFlip) {
  const auto gt = make_instance(MapClass::lane_divider, line({-3, -10}, {-2, 10}, 20));
  auto pred = gt;
  std::reverse(pred.points.begin(), pred.points.end());
  const std::vector<MapInstance> preds{gt, pred}, gts{gt};
  const auto m = build_cost(preds, gts, MatcherConfig{});
  EXPECT_EQ(m.at(1, 0).pts_term, m.at(0, 0).pts_term);
  EXPECT_EQ(m.at(1, 0).ordering, 1u);
  EXPECT_EQ(m.at(1, 0).s_geo, 1.0);
}

TEST(BuildCost, MatchesReferenceScript) {
  const auto j = fixture("build_cost_2x2.json");
  std::vector<MapInstance> preds, gts;
  for (std::size_t i = 0; i < j["preds"].size(); ++i) preds.push_back(io::instance_from_json(j["preds"][i], "preds"));
  for (std::size_t i = 0; i < j["gts"].size(); ++i) gts.push_back(io::instance_from_json(j["gts"][i], "gts"));
  const auto m = build_cost(preds, gts, MatcherConfig{});
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      const auto& want = j["expected"][r][c];
      const auto& got = m.at(r, c);
      EXPECT_NEAR(got.total, want["total"].get<double>(), 1e-12);
      EXPECT_NEAR(got.cls_term, want["cls_term"].get<double>(), 1e-12);
      EXPECT_NEAR(got.pts_term, want["pts_term"].get<double>(), 1e-12);
      EXPECT_NEAR(got.s_geo, want["s_geo"].get<double>(), 1e-12);
      EXPECT_EQ(got.ordering, want["ordering"].get<std::size_t>());
    }
  }
}

TEST(BuildCost, Errors) {
  const auto gt = make_instance(MapClass::lane_divider, line({0, 0}, {0, 5}, 20));
  const std::vector<MapInstance> none, gts{gt};
  EXPECT_THROW(build_cost(none, gts, MatcherConfig{}), ValidationError);
  EXPECT_EQ(build_cost(gts, none, MatcherConfig{}).cols(), 0u);
  const auto short_pred = make_instance(MapClass::lane_divider, line({0, 0}, {0, 5}, 10));
  const std::vector<MapInstance> bad{short_pred};
  EXPECT_THROW(build_cost(bad, gts, MatcherConfig{}), ValidationError);
}

TEST(Hungarian, Examples) {
  const auto diag = CostMatrix::from_values({{0, 5, 5}, {5, 0, 5}, {5, 5, 0}});
  const auto r = solve_hungarian(diag);
  ASSERT_EQ(r.pairs.size(), 3u);
  for (const auto& p : r.pairs) EXPECT_EQ(p.pred, p.gt);
  EXPECT_EQ(r.total_cost, 0.0);

  const auto one = solve_hungarian(CostMatrix::from_values({{3.5}}));
  ASSERT_EQ(one.pairs.size(), 1u);
  EXPECT_EQ(one.total_cost, 3.5);

  EXPECT_TRUE(solve_hungarian(CostMatrix(3, 0)).pairs.empty());
  auto bad = CostMatrix::from_values({{1, NAN}});
  EXPECT_THROW(solve_hungarian(bad), ValidationError);
}

TEST(BruteForce, Examples) {
  const auto r = brute_force_assign(CostMatrix::from_values({{0, 1}, {1, 0}}));
  EXPECT_EQ(pair_list(r), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(r.total_cost, 0.0);
  // 3 x 2: six ordered choices, best is (1,0) + (2,1) = 1 + 1.
  const auto rect = brute_force_assign(CostMatrix::from_values({{4, 6}, {1, 5}, {3, 1}}));
  EXPECT_EQ(pair_list(rect), (std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}, {2, 1}}));
  EXPECT_EQ(rect.total_cost, 2.0);
  EXPECT_THROW(brute_force_assign(CostMatrix(9, 9)), ValidationError);
}

TEST(Hungarian, EqualsBruteForceOnRandomSquare) {
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto m = random_matrix(rng, 5, 5);
    const auto h = solve_hungarian(m), b = brute_force_assign(m);
    EXPECT_EQ(h.total_cost, b.total_cost);
    EXPECT_EQ(pair_list(h), pair_list(b));
  }
}

TEST(Hungarian, TiesResolveLikeBruteForce) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const std::size_t r = 1 + t % 6, c = 1 + (t / 6) % 6;
    std::vector<std::vector<double>> v(r, std::vector<double>(c));
    for (auto& row : v) {
      for (double& x : row) x = static_cast<double>(static_cast<int>(rng.uniform(0.0, 3.0)));
    }
    const auto m = CostMatrix::from_values(v);
    const auto h = solve_hungarian(m), b = brute_force_assign(m);
    EXPECT_EQ(h.total_cost, b.total_cost);
    EXPECT_EQ(pair_list(h), pair_list(b));
  }
}

TEST(Hungarian, MatchesScipyTotals) {
  const auto j = fixture("hungarian_scipy.json");
  for (const auto& cs : j["cases"]) {
    std::vector<std::vector<double>> v = cs["cost"].get<std::vector<std::vector<double>>>();
    const auto r = solve_hungarian(CostMatrix::from_values(v));
    EXPECT_NEAR(r.total_cost, cs["optimal_total"].get<double>(), 1e-9);
    EXPECT_EQ(r.pairs.size(), std::min(v.size(), v.front().size()));
  }
}

TEST(Hungarian, RowPermutationKeepsPairing) {
  Rng rng(77);
  std::vector<std::vector<double>> v(6, std::vector<double>(4));
  for (auto& row : v) {
    for (double& x : row) x = rng.uniform(0.0, 10.0);
  }
  const auto base = solve_hungarian(CostMatrix::from_values(v));
  std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
  std::vector<std::vector<double>> shuffled;
  for (std::size_t i : perm) shuffled.push_back(v[i]);
  const auto r = solve_hungarian(CostMatrix::from_values(shuffled));
  std::vector<std::pair<std::size_t, std::size_t>> mapped;
  for (const auto& p : r.pairs) mapped.emplace_back(perm[p.pred], p.gt);
  std::sort(mapped.begin(), mapped.end());
  EXPECT_EQ(mapped, pair_list(base));
  EXPECT_NEAR(r.total_cost, base.total_cost, 1e-12);
}

TEST(Hungarian, EachRowAndColumnUsedOnce) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t r = 1 + t % 7, c = 1 + (t * 3) % 7;
    const auto res = solve_hungarian(random_matrix(rng, r, c));
    ASSERT_EQ(res.pairs.size(), std::min(r, c));
    std::vector<int> rows(r, 0), cols(c, 0);
    for (const auto& p : res.pairs) {
      ++rows[p.pred];
      ++cols[p.gt];
    }
    for (int x : rows) EXPECT_LE(x, 1);
    for (int x : cols) EXPECT_LE(x, 1);
  }
}
