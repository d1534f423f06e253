#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <numeric>
#include <sstream>

#include "surq/errors.hpp"
#include "surq/eval/evaluate.hpp"
#include "surq/eval/stats.hpp"

using namespace surq;
using namespace surq::eval;

namespace {

// Textbook Welch statistic with Boost's Student-t survival function for p.
WelchResult reference_welch(const std::vector<double>& a, const std::vector<double>& b) {
  auto moments = [](const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::make_tuple(n, mean, ss / (n - 1));
  };
  const auto [na, ma, va] = moments(a);
  const auto [nb, mb, vb] = moments(b);
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
  boost::math::students_t dist(r.df);
  r.p = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

EvalGrid tiny_grid() {
  EvalGrid g;
  g.sim.track_length = 500.0;
  g.vehicle_counts = {10, 20};
  g.scenarios_per_count = 3;
  g.episode_length = 30;
  g.seed = 5;
  return g;
}

}  // namespace

TEST(Welch, FrozenReferenceValues) {
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {2, 3, 4, 5, 6};
  const auto r = welch_t_test(a, b);
  EXPECT_NEAR(r.t, -1.0, 1e-12);
  EXPECT_NEAR(r.df, 8.0, 1e-12);
  EXPECT_NEAR(r.p, 0.34659350708733416, 1e-9 * 0.3466);

  const std::vector<double> c = {1.5, 2.25, 7, 3}, d = {10, 11.5, 9.25};
  const auto r2 = welch_t_test(c, d);
  EXPECT_NEAR(r2.t, -4.889318213777197, 1e-9 * 4.89);
  EXPECT_NEAR(r2.p, 0.006204520484523425, 1e-9 * 0.0062);
}

TEST(Welch, AgreesWithReferenceOnRandomPairs) {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const auto na = std::uniform_int_distribution<int>(2, 30)(rng);
    const auto nb = std::uniform_int_distribution<int>(2, 30)(rng);
    const double shift = uniform(rng, -2, 2), scale = uniform(rng, 0.1, 5);
    std::normal_distribution<double> da(0, 1), db(shift, scale);
    std::vector<double> a(na), b(nb);
    for (auto& x : a) x = da(rng);
    for (auto& x : b) x = db(rng);
    const auto got = welch_t_test(a, b);
    const auto want = reference_welch(a, b);
    EXPECT_NEAR(got.t, want.t, 1e-9 * std::abs(want.t));
    EXPECT_NEAR(got.df, want.df, 1e-9 * want.df);
    EXPECT_NEAR(got.p, want.p, 1e-9 * want.p) << "trial " << trial;
  }
}

TEST(Welch, SymmetryIdentityAndErrors) {
  const std::vector<double> a = {0.3, 1.7, 2.2, 0.9}, b = {1.1, 4.0, 2.5};
  const auto ab = welch_t_test(a, b), ba = welch_t_test(b, a);
  EXPECT_EQ(ab.t, -ba.t);
  EXPECT_EQ(ab.p, ba.p);

  const auto same = welch_t_test(a, a);
  EXPECT_EQ(same.t, 0.0);
  EXPECT_DOUBLE_EQ(same.p, 1.0);

  const std::vector<double> flat1 = {2, 2, 2}, flat2 = {3, 3};
  EXPECT_THROW(welch_t_test(flat1, flat2), DegenerateSampleError);
  EXPECT_NO_THROW(welch_t_test(flat1, a));
  const std::vector<double> one = {1.0};
  EXPECT_THROW(welch_t_test(one, a), std::invalid_argument);
}

TEST(IncompleteBeta, MatchesBoost) {
  for (double a : {0.5, 1.0, 2.5, 7.0, 40.0}) {
    for (double b : {0.5, 1.0, 3.0, 12.0, 60.0}) {
      for (double x : {0.0, 1e-6, 0.05, 0.3, 0.5, 0.77, 0.999, 1.0}) {
        const double want = boost::math::ibeta(a, b, x);
        EXPECT_NEAR(regularized_incomplete_beta(x, a, b), want, 1e-12 + 1e-10 * want)
            << "a=" << a << " b=" << b << " x=" << x;
      }
    }
  }
  EXPECT_THROW(regularized_incomplete_beta(1.5, 1, 1), std::invalid_argument);
}

TEST(StudentT, TwoSidedTailMatchesBoost) {
  for (double df : {1.0, 2.5, 8.0, 30.0, 300.0}) {
    boost::math::students_t dist(df);
    for (double t : {0.0, 0.4, 1.0, 2.2, 5.0, 12.0}) {
      const double want = 2 * boost::math::cdf(boost::math::complement(dist, t));
      EXPECT_NEAR(student_t_two_sided(t, df), want, 1e-12 + 1e-10 * want);
      EXPECT_EQ(student_t_two_sided(-t, df), student_t_two_sided(t, df));
    }
  }
}

TEST(Evaluate, KeepLaneMakesNoLaneChangesAndNoCollisions) {
  const auto report = evaluate(KeepLanePolicy{}, tiny_grid());
  ASSERT_EQ(report.rows.size(), 6u);
  for (const auto& r : report.rows) {
    EXPECT_EQ(r.lane_changes, 0u);
    EXPECT_EQ(r.collisions, 0u);
    EXPECT_EQ(r.overrides, 0u);
    EXPECT_GT(r.mean_speed, 0.0);
    EXPECT_LE(r.mean_reward, 1.0);
  }
  EXPECT_EQ(report.policy, "keep-lane");
}

TEST(Evaluate, FullGridShapeAndSharedSeeds) {
  auto grid = tiny_grid();
  grid = EvalGrid{};
  grid.episode_length = 2;
  grid.warmup_steps = 0;
  const auto keep = evaluate(KeepLanePolicy{}, grid);
  ASSERT_EQ(keep.rows.size(), 260u);
  EXPECT_EQ(keep.rows.front().vehicle_count, 30u);
  EXPECT_EQ(keep.rows.back().vehicle_count, 90u);
  EXPECT_EQ(keep.rows.back().scenario, 19u);
  const auto rule = evaluate(RuleBasedPolicy{}, grid);
  for (std::size_t i = 0; i < keep.rows.size(); ++i) {
    EXPECT_EQ(keep.rows[i].seed, rule.rows[i].seed);
    EXPECT_EQ(keep.rows[i].seed, scenario_seed(grid.seed, keep.rows[i].vehicle_count, keep.rows[i].scenario));
  }
}

TEST(Evaluate, DeterministicAcrossRunsAndThreadCounts) {
  auto grid = tiny_grid();
  const auto a = evaluate(RuleBasedPolicy{}, grid);
  const auto b = evaluate(RuleBasedPolicy{}, grid);
  EXPECT_EQ(a, b);
  grid.threads = 3;
  EXPECT_EQ(evaluate(RuleBasedPolicy{}, grid), a);
}

TEST(Evaluate, RuleBasedBeatsKeepLaneOnCongestedRing) {
  auto grid = tiny_grid();
  grid.scenarios_per_count = 5;
  grid.episode_length = 100;
  grid.agent_driver.lane_change_eagerness = 1.0;
  const auto keep = evaluate(KeepLanePolicy{}, grid);
  const auto rule = evaluate(RuleBasedPolicy{}, grid);
  const auto sk = summarize(keep), sr = summarize(rule);
  EXPECT_GT(sr.lane_changes.mean, 0.0);
  EXPECT_GE(sr.mean_speed.mean, sk.mean_speed.mean);
  EXPECT_EQ(sr.collisions, 0u);
}

TEST(Report, SummaryEqualsRecomputation) {
  const auto report = evaluate(RuleBasedPolicy{}, tiny_grid());
  const auto s = summarize(report);
  const auto speeds = report_column(report, "mean_speed");
  const double mean = std::accumulate(speeds.begin(), speeds.end(), 0.0) / static_cast<double>(speeds.size());
  double ss = 0;
  for (double v : speeds) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(s.mean_speed.mean, mean, 1e-12);
  EXPECT_NEAR(s.mean_speed.stddev, std::sqrt(ss / static_cast<double>(speeds.size() - 1)), 1e-12);
  EXPECT_EQ(s.scenarios, report.rows.size());
  std::size_t overrides = 0;
  for (const auto& r : report.rows) overrides += r.overrides;
  EXPECT_EQ(s.overrides, overrides);
  EXPECT_THROW(report_column(report, "speed"), std::invalid_argument);
}

TEST(Report, CsvRoundTripIsLossless) {
  EvalReport r;
  r.policy = "surrogate-q";
  r.rows.push_back({30, 0, 123456789012345ULL, 0.1 + 0.2, -1e-300, 27.123456789012345, 4, 0, 2});
  r.rows.push_back({35, 1, 7, 1.0 / 3.0, 98.76, 0.0, 0, 0, 0});
  std::stringstream ss;
  write_report(ss, r);
  EXPECT_EQ(read_report(ss), r);

  std::stringstream bad_header("policy,vehicles\n");
  EXPECT_THROW(read_report(bad_header), FormatError);
  std::stringstream short_row(
      "policy,vehicle_count,scenario,seed,mean_reward,discounted_return,mean_speed,lane_changes,collisions,"
      "overrides\nx,1,2\n");
  EXPECT_THROW(read_report(short_row), FormatError);
}

TEST(GridConfig, KeysAndValidation) {
  EvalGrid g;
  apply_grid_key(g, "vehicle_counts", "20, 25,30");
  apply_grid_key(g, "scenarios_per_count", "4");
  apply_grid_key(g, "sim.track_length", "500");
  apply_grid_key(g, "safety_enabled", "true");
  EXPECT_EQ(g.vehicle_counts, (std::vector<std::size_t>{20, 25, 30}));
  EXPECT_EQ(g.scenarios_per_count, 4u);
  EXPECT_EQ(g.sim.track_length, 500.0);
  EXPECT_THROW(apply_grid_key(g, "episodes", "3"), FormatError);
  g.vehicle_counts.clear();
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST(Curves, EmptyAndZeroRateBuffers) {
  EXPECT_TRUE(cumulative_lane_change_curve(replay::ReplayBuffer{}).empty());

  sim::CollectConfig c;
  c.sim.track_length = 500.0;
  c.vehicles_min = c.vehicles_max = 20;
  c.agent_lc_rate = 0.0;
  c.transitions = 400;
  c.seed = 2;
  const auto buf = sim::collect_dataset(c);
  const auto curve = cumulative_lane_change_curve(buf);
  ASSERT_EQ(curve.size(), 400u);
  EXPECT_DOUBLE_EQ(curve.back().driving_hours, 400 * 2.0 / 3600.0);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    EXPECT_EQ(curve[i].agent_lane_changes, 0u);
    EXPECT_GE(curve[i].all_lane_changes, curve[i - 1].all_lane_changes);
    EXPECT_GT(curve[i].driving_hours, curve[i - 1].driving_hours);
  }
  EXPECT_GT(curve.back().all_lane_changes, 0u);
  EXPECT_LT(hours_to_reach(curve, 1, false), 0.0);
  EXPECT_GT(hours_to_reach(curve, 1, true), 0.0);
}

TEST(Curves, CsvLayout) {
  const std::vector<CurvePoint> curve = {{0.5, 0, 3}, {1.0, 1, 7}};
  std::ostringstream os;
  write_curve(os, curve);
  EXPECT_EQ(os.str(), "driving_hours,agent_lane_changes,all_lane_changes\n0.5,0,3\n1,1,7\n");
  EXPECT_DOUBLE_EQ(hours_to_reach(curve, 5, true), 1.0);
  EXPECT_DOUBLE_EQ(hours_to_reach(curve, 3, true), 0.5);
}
