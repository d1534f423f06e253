#pragma once

// Ring-highway microsimulator: Krauss car following, a speed-gain lane-change
// heuristic, a lane-change safety layer and agent-centric observation.
//
// Lane 0 is the rightmost lane; `left` moves to lane + 1. Lane changes are decided
// at the start of an action step and take effect at its end.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "surq/action.hpp"
#include "surq/random.hpp"
#include "surq/replay/buffer.hpp"
#include "surq/replay/scene.hpp"

namespace surq::sim {

struct SimConfig {
  double track_length = 1000.0;  // m
  int lanes = 3;
  double sim_dt = 0.5;           // s
  double action_dt = 2.0;        // s, integer multiple of sim_dt
  double sensor_range = 80.0;    // m
  double accel_max = 2.6;        // m/s^2
  double decel_max = 4.5;        // m/s^2
  double vehicle_length = 4.5;   // m
  double min_gap = 2.0;          // m
  double headway = 0.5;          // s
  double v_desired = 0.0;        // m/s; <= 0 means 0.9 x agent max speed

  void validate() const;  // throws std::invalid_argument
  std::size_t substeps() const;
};

struct DriverParams {
  double max_speed = 30.0;              // m/s
  double lane_change_eagerness = 0.5;   // 0 disables lane changes
  double cooperation = 0.5;             // chance of refusing changes that make the new follower brake
  double sigma = 0.0;                   // speed noise, fraction of accel_max * sim_dt
  double lane_change_rate = -1.0;       // < 0: purely motivated; else expected changes per action step

  void validate() const;
};

struct Vehicle {
  std::uint64_t id = 0;
  double position = 0.0;  // m, in [0, track_length)
  int lane = 0;
  double speed = 0.0;     // m/s
  DriverParams driver;
  Action pending = Action::keep;  // lane change executing at the end of the current action step
  double lane_change_timer = 0.0; // s left until `pending` executes
  int owed_changes = 0;           // rate-capped drivers: accrued, not yet executed lane changes
};

struct HighwayWorld {
  SimConfig config;
  std::vector<Vehicle> vehicles;  // sorted by id
  std::uint64_t agent_id = 0;
  std::uint64_t step_count = 0;   // action steps taken
  bool safety_enabled = true;     // agent lane changes pass safety_check
  Rng rng;

  const Vehicle& vehicle(std::uint64_t id) const;
  Vehicle& vehicle(std::uint64_t id);
  const Vehicle& agent() const { return vehicle(agent_id); }
  double v_desired() const;
  double time() const { return static_cast<double>(step_count) * config.action_dt; }
  // Same-lane overlap, positions/lanes in range, unique ids, speeds within [0, max_speed].
  void validate() const;
};

// Collision-free speed behind a leader moving at `v_leader` with `gap` metres to spare.
double krauss_safe_speed(double v_leader, double gap, const SimConfig& cfg);

// One Krauss substep. `gap` >= 0; use +infinity for a free road.
double krauss_speed(double v, double v_leader, double gap, const SimConfig& cfg, const DriverParams& driver,
                    Rng& rng);

// Signed ring-shortest distance from `from` to `to` (positive = ahead), in (-L/2, L/2].
double ring_offset(double from, double to, double track_length);

struct Neighbor {
  const Vehicle* vehicle = nullptr;
  double gap = 0.0;  // bumper to bumper, m
};

// Closest vehicle ahead / behind `position` in `lane`, excluding `self_id`.
std::optional<Neighbor> leader_in_lane(const HighwayWorld& world, int lane, double position,
                                       std::uint64_t self_id);
std::optional<Neighbor> follower_in_lane(const HighwayWorld& world, int lane, double position,
                                         std::uint64_t self_id);

// Unsafe or off-road lane changes become keep. Only neighbors within sensor range count.
Action safety_check(const HighwayWorld& world, std::uint64_t vehicle_id, Action action);

// Speed reachable in `lane` over the next few seconds, from the vehicle's position.
double prospective_speed(const HighwayWorld& world, const Vehicle& v, int lane);

// Speed-gain heuristic. Rate-capped drivers only change lanes when a change is owed
// and then prefer the best-gain safe lane; the caller accounts owed changes.
Action rule_based_lane_decision(const HighwayWorld& world, std::uint64_t vehicle_id, Rng& rng);

// Accrues a Bernoulli(lane_change_rate) owed change for rate-capped drivers, then decides
// with world.rng. step() calls this for every surrounder.
Action drive_rule_based(HighwayWorld& world, std::uint64_t vehicle_id);

enum class EventKind : std::uint8_t { lane_change, collision, wraparound, unsafe_override, aborted_lane_change };
std::string to_string(EventKind kind);

struct SimEvent {
  std::uint64_t step = 0;  // action step during which it happened
  std::uint64_t vehicle_id = 0;
  EventKind kind = EventKind::lane_change;
  int lane_from = 0;
  int lane_to = 0;

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

// Advances one action step. Surrounders follow rule_based_lane_decision; the agent's
// action passes safety_check when world.safety_enabled.
std::vector<SimEvent> step(HighwayWorld& world, Action agent_action);

// Agent-centric scene of `ego_id`: ego row first, then vehicles within sensor range
// ordered by signed distance (ties by id).
replay::SceneState observe(const HighwayWorld& world, std::uint64_t ego_id);

replay::FeatureScale feature_scale(const HighwayWorld& world);

struct DriverMix {
  double max_speed_min = 20.0;
  double max_speed_max = 30.0;
  double eagerness_min = 0.3;
  double eagerness_max = 1.0;
  double cooperation_min = 0.0;
  double cooperation_max = 1.0;
  double sigma = 0.0;
  double lane_change_rate = -1.0;  // applied to every surrounder

  DriverParams sample(Rng& rng) const;
  void validate() const;
};

// Places vehicles on distinct slots of one vehicle length plus min gap plus 4 m.
// Vehicle 0 is the agent. Initial speeds are uniform in [0.5, 1] x max_speed,
// reduced until every follower is Krauss-safe.
HighwayWorld spawn_world(const SimConfig& cfg, std::size_t vehicle_count, const DriverMix& mix,
                         const DriverParams& agent_driver, std::uint64_t seed);

struct CollectConfig {
  SimConfig sim;
  DriverMix mix;
  DriverParams agent_driver;     // lane_change_rate is overridden by agent_lc_rate
  double agent_lc_rate = 0.05;   // in [0, 1]; 0 disables agent lane changes
  std::size_t vehicles_min = 30;
  std::size_t vehicles_max = 90;
  std::size_t episode_steps = 200;  // recorded action steps per episode
  std::size_t warmup_steps = 10;    // unrecorded action steps after spawning
  std::size_t transitions = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

// Runs seeded episodes until `transitions` scene transitions are recorded.
replay::ReplayBuffer collect_dataset(const CollectConfig& cfg,
                                     const std::function<void(const SimEvent&)>& on_event = {});

// Flat key = value file; '#' starts a comment. Keys mirror the CollectConfig fields,
// with `sim.`, `mix.` and `agent.` prefixes for nested fields. Unknown keys throw FormatError.
CollectConfig read_scenario(const std::filesystem::path& path);
void apply_scenario_key(CollectConfig& cfg, const std::string& key, const std::string& value);

// CSV: step,vehicle_id,event,lane_from,lane_to
void write_event_header(std::ostream& os);
void write_event(std::ostream& os, const SimEvent& e);

}  // namespace surq::sim
