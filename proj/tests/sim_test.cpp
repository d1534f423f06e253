#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "surq/errors.hpp"
#include "surq/sim/highway.hpp"

using namespace surq;
using namespace surq::sim;

namespace {

struct Placement {
  double position;
  int lane;
  double speed;
};

// Agent is the first placement (id 0); the rest get ids 1, 2, ...
HighwayWorld world_of(const std::vector<Placement>& cars, SimConfig cfg = {}, DriverParams driver = {}) {
  HighwayWorld w;
  w.config = cfg;
  w.rng.seed(1);
  for (std::size_t i = 0; i < cars.size(); ++i) {
    Vehicle v;
    v.id = i;
    v.position = cars[i].position;
    v.lane = cars[i].lane;
    v.speed = cars[i].speed;
    v.driver = driver;
    w.vehicles.push_back(v);
  }
  w.agent_id = 0;
  return w;
}

DriverParams eager_driver() {
  DriverParams d;
  d.max_speed = 30.0;
  d.lane_change_eagerness = 1.0;
  d.cooperation = 0.0;
  return d;
}

}  // namespace

TEST(Krauss, SafeSpeedExamples) {
  const SimConfig cfg;
  EXPECT_EQ(krauss_safe_speed(0.0, 0.0, cfg), 0.0);
  const double b = 4.5, tau = 0.5;
  const double expect = -b * tau + std::sqrt(b * b * tau * tau + 10.0 * 10.0 + 2 * b * 20.0);
  EXPECT_NEAR(krauss_safe_speed(10.0, 20.0, cfg), expect, 1e-12);
  EXPECT_NEAR(krauss_safe_speed(10.0, 20.0, cfg), 14.633794004903045, 1e-12);
}

TEST(Krauss, FreeRoadAccelerationBound) {
  const SimConfig cfg;
  DriverParams d;
  d.max_speed = 30.0;
  Rng rng(1);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_DOUBLE_EQ(krauss_speed(20.0, 0.0, inf, cfg, d, rng), 21.3);
  EXPECT_DOUBLE_EQ(krauss_speed(29.5, 0.0, inf, cfg, d, rng), 30.0);
  EXPECT_DOUBLE_EQ(krauss_speed(20.0, 0.0, 0.0, cfg, d, rng), 0.0);
}

TEST(Krauss, NoiseStaysInBand) {
  const SimConfig cfg;
  DriverParams d;
  d.max_speed = 30.0;
  d.sigma = 0.5;
  Rng rng(2);
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const double v = krauss_speed(20.0, 0.0, inf, cfg, d, rng);
    EXPECT_LE(v, 21.3);
    EXPECT_GE(v, 21.3 - 0.5 * 2.6 * 0.5 - 1e-12);
  }
  EXPECT_EQ(krauss_speed(0.0, 0.0, 0.0, cfg, d, rng), 0.0);
}

TEST(RingGeometry, ShortestSignedOffset) {
  EXPECT_DOUBLE_EQ(ring_offset(0.0, 950.0, 1000.0), -50.0);
  EXPECT_DOUBLE_EQ(ring_offset(950.0, 0.0, 1000.0), 50.0);
  EXPECT_DOUBLE_EQ(ring_offset(100.0, 130.0, 1000.0), 30.0);
  EXPECT_DOUBLE_EQ(ring_offset(0.0, 500.0, 1000.0), 500.0);
}

TEST(Observe, SensorWindowAndRingWrap) {
  auto w = world_of({{0.0, 1, 20.0}, {100.0, 1, 20.0}, {950.0, 2, 25.0}, {40.0, 0, 18.0}});
  const auto s = observe(w, 0);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_TRUE(s.vehicles[0].is_agent);
  EXPECT_EQ(s.vehicles[1].vehicle_id, 2u);
  EXPECT_DOUBLE_EQ(s.vehicles[1].rel_distance, -50.0);
  EXPECT_DOUBLE_EQ(s.vehicles[1].rel_speed, 5.0);
  EXPECT_EQ(s.vehicles[1].rel_lane, 1);
  EXPECT_EQ(s.vehicles[2].vehicle_id, 3u);
  EXPECT_DOUBLE_EQ(s.vehicles[2].rel_distance, 40.0);
  EXPECT_EQ(s.vehicles[2].rel_lane, -1);

  const auto alone = world_of({{10.0, 0, 20.0}});
  EXPECT_EQ(observe(alone, 0).size(), 1u);
}

TEST(Observe, TranslationInvariant) {
  auto w = spawn_world(SimConfig{}, 40, DriverMix{}, DriverParams{}, 5);
  for (int i = 0; i < 5; ++i) step(w, Action::keep);
  const auto base = observe(w, w.agent_id);
  for (double shift : {123.4, 777.7, 999.9}) {
    auto moved = w;
    for (auto& v : moved.vehicles) v.position = std::fmod(v.position + shift, moved.config.track_length);
    const auto s = observe(moved, moved.agent_id);
    ASSERT_EQ(s.size(), base.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_EQ(s.vehicles[i].vehicle_id, base.vehicles[i].vehicle_id);
      EXPECT_NEAR(s.vehicles[i].rel_distance, base.vehicles[i].rel_distance, 1e-9);
      EXPECT_EQ(s.vehicles[i].rel_speed, base.vehicles[i].rel_speed);
      EXPECT_EQ(s.vehicles[i].rel_lane, base.vehicles[i].rel_lane);
    }
  }
}

TEST(SafetyCheck, OffRoadEmptyLaneAndCloseFollower) {
  const SimConfig cfg;
  auto w = world_of({{100.0, 0, 20.0}});
  EXPECT_EQ(safety_check(w, 0, Action::right), Action::keep);
  EXPECT_EQ(safety_check(w, 0, Action::left), Action::left);
  EXPECT_EQ(safety_check(w, 0, Action::keep), Action::keep);
  auto top = world_of({{100.0, 2, 20.0}});
  EXPECT_EQ(safety_check(top, 0, Action::left), Action::keep);

  // Follower's front bumper 1 m behind the agent's rear bumper in the target lane.
  auto tight = world_of({{100.0, 0, 20.0}, {100.0 - cfg.vehicle_length - 1.0, 1, 20.0}});
  EXPECT_EQ(safety_check(tight, 0, Action::left), Action::keep);
  // Same follower well outside the sensor range does not matter.
  auto far = world_of({{100.0, 0, 20.0}, {100.0 - 200.0 + 1000.0, 1, 20.0}});
  EXPECT_EQ(safety_check(far, 0, Action::left), Action::left);
  // Fast follower that could not brake in time.
  auto fast = world_of({{100.0, 0, 10.0}, {100.0 - cfg.vehicle_length - 6.0, 1, 30.0}});
  EXPECT_EQ(safety_check(fast, 0, Action::left), Action::keep);
}

TEST(RuleBased, LoneVehicleKeeps) {
  auto w = world_of({{0.0, 1, 25.0}}, SimConfig{}, eager_driver());
  Rng rng(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(rule_based_lane_decision(w, 0, rng), Action::keep);
}

TEST(RuleBased, SlowLeaderTriggersLegalChange) {
  auto w = world_of({{0.0, 0, 25.0}, {20.0, 0, 5.0}}, SimConfig{}, eager_driver());
  w.vehicles[1].driver.max_speed = 5.0;
  Rng rng(4);
  EXPECT_EQ(rule_based_lane_decision(w, 0, rng), Action::left);

  auto top = world_of({{0.0, 2, 25.0}, {20.0, 2, 5.0}}, SimConfig{}, eager_driver());
  top.vehicles[1].driver.max_speed = 5.0;
  EXPECT_EQ(rule_based_lane_decision(top, 0, rng), Action::right);

  auto lazy = w;
  lazy.vehicles[0].driver.lane_change_eagerness = 0.0;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(rule_based_lane_decision(lazy, 0, rng), Action::keep);
}

TEST(RuleBased, RateCappedDriverOnlyChangesWhenOwed) {
  auto w = world_of({{0.0, 0, 25.0}, {20.0, 0, 5.0}}, SimConfig{}, eager_driver());
  w.vehicles[0].driver.lane_change_rate = 0.0;
  w.vehicles[1].driver.max_speed = 5.0;
  for (int i = 0; i < 50; ++i) EXPECT_EQ(drive_rule_based(w, 0), Action::keep);
  w.vehicles[0].owed_changes = 1;
  Rng rng(5);
  EXPECT_EQ(rule_based_lane_decision(w, 0, rng), Action::left);
}

TEST(Step, FreeRoadKinematics) {
  DriverParams d;
  d.max_speed = 30.0;
  auto w = world_of({{10.0, 1, 20.0}}, SimConfig{}, d);
  const auto events = step(w, Action::keep);
  EXPECT_TRUE(events.empty());
  // Four substeps at 21.3, 22.6, 23.9, 25.2 m/s, each 0.5 s.
  EXPECT_NEAR(w.agent().position, 10.0 + 0.5 * (21.3 + 22.6 + 23.9 + 25.2), 1e-9);
  EXPECT_NEAR(w.agent().speed, 25.2, 1e-12);
  EXPECT_EQ(w.agent().lane, 1);
  EXPECT_EQ(w.step_count, 1u);
}

TEST(Step, AgentLaneChangeAndWraparound) {
  DriverParams d;
  d.max_speed = 30.0;
  d.lane_change_eagerness = 0.0;
  auto w = world_of({{990.0, 1, 30.0}}, SimConfig{}, d);
  const auto events = step(w, Action::left);
  EXPECT_EQ(w.agent().lane, 2);
  EXPECT_NEAR(w.agent().position, 50.0, 1e-9);
  bool changed = false, wrapped = false;
  for (const auto& e : events) {
    changed |= e.kind == EventKind::lane_change && e.lane_from == 1 && e.lane_to == 2;
    wrapped |= e.kind == EventKind::wraparound;
  }
  EXPECT_TRUE(changed);
  EXPECT_TRUE(wrapped);

  const auto blocked = step(w, Action::left);
  EXPECT_EQ(w.agent().lane, 2);
  ASSERT_FALSE(blocked.empty());
  EXPECT_EQ(blocked.front().kind, EventKind::unsafe_override);
}

TEST(Step, TwentyVehiclesTenThousandStepsCollisionFree) {
  SimConfig cfg;
  cfg.track_length = 500.0;
  DriverMix mix;
  mix.sigma = 0.2;
  auto w = spawn_world(cfg, 20, mix, DriverParams{}, 11);
  Rng pick(12);
  std::size_t collisions = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = kAllActions[std::uniform_int_distribution<int>(0, 2)(pick)];
    for (const auto& e : step(w, a)) collisions += e.kind == EventKind::collision;
    for (const auto& v : w.vehicles) {
      ASSERT_GE(v.position, 0.0);
      ASSERT_LT(v.position, cfg.track_length);
      ASSERT_GE(v.speed, 0.0);
      ASSERT_LE(v.speed, v.driver.max_speed);
    }
  }
  EXPECT_EQ(collisions, 0u);
  EXPECT_EQ(w.vehicles.size(), 20u);
  EXPECT_NO_THROW(w.validate());
}

TEST(Step, SeededRunsAreIdentical) {
  auto run = [] {
    auto w = spawn_world(SimConfig{}, 50, DriverMix{}, DriverParams{}, 21);
    std::vector<SimEvent> all;
    for (int i = 0; i < 200; ++i) {
      const auto e = step(w, drive_rule_based(w, w.agent_id));
      all.insert(all.end(), e.begin(), e.end());
    }
    return std::make_pair(all, w.vehicles.back().position);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_FALSE(a.first.empty());
}

TEST(Spawn, ValidWorldWithAgentFirst) {
  const auto w = spawn_world(SimConfig{}, 90, DriverMix{}, DriverParams{}, 3);
  EXPECT_EQ(w.vehicles.size(), 90u);
  EXPECT_EQ(w.agent_id, 0u);
  EXPECT_NO_THROW(w.validate());
  EXPECT_NEAR(w.v_desired(), 0.9 * w.agent().driver.max_speed, 1e-12);
  EXPECT_THROW(spawn_world(SimConfig{}, 100000, DriverMix{}, DriverParams{}, 3), std::invalid_argument);
}

TEST(Collect, ZeroRateAgentAlwaysKeeps) {
  CollectConfig c;
  c.sim.track_length = 500.0;
  c.vehicles_min = c.vehicles_max = 20;
  c.agent_lc_rate = 0.0;
  c.transitions = 600;
  c.episode_steps = 100;
  c.seed = 4;
  std::size_t surrounder_changes = 0;
  const auto buf = collect_dataset(c);
  ASSERT_EQ(buf.size(), 600u);
  for (const auto& k : buf.transitions()) {
    EXPECT_EQ(k.actions[0], Action::keep);
    EXPECT_NO_THROW(k.validate());
    for (std::size_t p = 1; p < k.actions.size(); ++p) surrounder_changes += is_lane_change(k.actions[p]);
  }
  EXPECT_GT(surrounder_changes, 0u);
  EXPECT_EQ(buf.scale().sensor_range, 80.0);
}

TEST(Collect, AgentRateCalibrated) {
  CollectConfig c;
  c.agent_lc_rate = 0.05;
  c.transitions = 50000;
  c.episode_steps = 500;
  c.seed = 9;
  std::size_t changes = 0;
  const auto buf = collect_dataset(c);
  for (const auto& k : buf.transitions()) changes += is_lane_change(k.actions[0]);
  EXPECT_NEAR(static_cast<double>(changes) / static_cast<double>(buf.size()), 0.05, 0.01);
}

TEST(ScenarioFile, ParsesKeysAndRejectsUnknown) {
  const auto path = std::filesystem::temp_directory_path() / "surq_scenario.cfg";
  {
    std::ofstream os(path);
    os << "# desk scenario\nsim.track_length = 500\nvehicles_min = 20\nvehicles_max=25\n"
          "agent_lc_rate = 0.2  # comment\nmix.max_speed_min = 22\nagent.max_speed = 31\nseed = 8\n";
  }
  const auto c = read_scenario(path);
  EXPECT_EQ(c.sim.track_length, 500.0);
  EXPECT_EQ(c.vehicles_min, 20u);
  EXPECT_EQ(c.vehicles_max, 25u);
  EXPECT_EQ(c.agent_lc_rate, 0.2);
  EXPECT_EQ(c.mix.max_speed_min, 22.0);
  EXPECT_EQ(c.agent_driver.max_speed, 31.0);
  EXPECT_EQ(c.seed, 8u);
  {
    std::ofstream os(path);
    os << "sim.track_lenght = 500\n";
  }
  EXPECT_THROW(read_scenario(path), FormatError);
  std::filesystem::remove(path);

  CollectConfig bad;
  bad.agent_lc_rate = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  SimConfig odd;
  odd.action_dt = 1.2;
  EXPECT_THROW(odd.validate(), std::invalid_argument);
}

TEST(EventLog, CsvLayout) {
  std::ostringstream os;
  write_event_header(os);
  write_event(os, {3, 7, EventKind::lane_change, 1, 2});
  write_event(os, {4, 0, EventKind::unsafe_override, 0, 0});
  EXPECT_EQ(os.str(), "step,vehicle_id,event,lane_from,lane_to\n3,7,lane_change,1,2\n4,0,unsafe_override,0,0\n");
}
