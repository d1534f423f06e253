#include "surq/sim/highway.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "surq/errors.hpp"
#include "surq/io/keyvalue.hpp"

namespace surq::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kOverlapTolerance = 1e-9;  // m
constexpr int kMaxOwedChanges = 3;
constexpr double kLookaheadTime = 10.0;  // s, bounds the prospective speed behind a leader

double forward_distance(double from, double to, double track_length) {
  double d = std::fmod(to - from, track_length);
  if (d < 0.0) d += track_length;
  return d;
}

double leader_gap(const SimConfig& cfg, const Neighbor& n) { return std::max(0.0, n.gap - cfg.min_gap); }

bool within_sensor(const SimConfig& cfg, const Neighbor& n) {
  return n.gap + cfg.vehicle_length <= cfg.sensor_range;
}

// Fails the optional cooperation requirement: new follower would have to brake.
bool forces_follower_to_brake(const HighwayWorld& world, const Vehicle& v, int target) {
  const auto f = follower_in_lane(world, target, v.position, v.id);
  if (!f || !within_sensor(world.config, *f)) return false;
  return krauss_safe_speed(v.speed, leader_gap(world.config, *f), world.config) < f->vehicle->speed;
}

void check_overlaps(const HighwayWorld& world, std::vector<SimEvent>& events) {
  for (const auto& v : world.vehicles) {
    const auto l = leader_in_lane(world, v.lane, v.position, v.id);
    if (l && l->gap < -kOverlapTolerance) {
      events.push_back({world.step_count, v.id, EventKind::collision, v.lane, v.lane});
    }
  }
}

// Lowers follower speeds until no same-lane pair can overlap after moving for dt.
void enforce_no_overlap(HighwayWorld& world, std::vector<double>& next_speed, double dt) {
  const auto n = world.vehicles.size();
  std::vector<std::ptrdiff_t> leader(n, -1);
  std::vector<double> gap(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = world.vehicles[i];
    const auto l = leader_in_lane(world, v.lane, v.position, v.id);
    if (!l) continue;
    leader[i] = l->vehicle - world.vehicles.data();
    gap[i] = std::max(0.0, l->gap);
  }
  for (std::size_t pass = 0; pass <= n; ++pass) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (leader[i] < 0) continue;
      const double bound = std::max(0.0, next_speed[static_cast<std::size_t>(leader[i])] + gap[i] / dt);
      if (next_speed[i] > bound) {
        next_speed[i] = bound;
        changed = true;
      }
    }
    if (!changed) return;
  }
}

void substep(HighwayWorld& world, std::vector<SimEvent>& events) {
  const auto& cfg = world.config;
  std::vector<double> next(world.vehicles.size());
  for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
    const auto& v = world.vehicles[i];
    const auto l = leader_in_lane(world, v.lane, v.position, v.id);
    const double gap = l ? leader_gap(cfg, *l) : kInf;
    const double v_leader = l ? l->vehicle->speed : 0.0;
    next[i] = krauss_speed(v.speed, v_leader, gap, cfg, v.driver, world.rng);
  }
  enforce_no_overlap(world, next, cfg.sim_dt);
  for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
    auto& v = world.vehicles[i];
    v.speed = next[i];
    v.position += v.speed * cfg.sim_dt;
    if (v.position >= cfg.track_length) {
      v.position = std::fmod(v.position, cfg.track_length);
      events.push_back({world.step_count, v.id, EventKind::wraparound, v.lane, v.lane});
    }
    v.lane_change_timer = std::max(0.0, v.lane_change_timer - cfg.sim_dt);
  }
  check_overlaps(world, events);
}

}  // namespace

void SimConfig::validate() const {
  if (!(track_length > 0 && sim_dt > 0 && action_dt > 0 && sensor_range > 0 && accel_max > 0 &&
        decel_max > 0 && vehicle_length > 0 && min_gap > 0 && headway > 0)) {
    throw std::invalid_argument("simulator magnitudes must be positive");
  }
  if (lanes < 1) throw std::invalid_argument("lanes must be >= 1");
  const double ratio = action_dt / sim_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw std::invalid_argument("action_dt must be an integer multiple of sim_dt");
  }
}

std::size_t SimConfig::substeps() const { return static_cast<std::size_t>(std::llround(action_dt / sim_dt)); }

void DriverParams::validate() const {
  if (!(max_speed > 0)) throw std::invalid_argument("max_speed must be positive");
  if (!(lane_change_eagerness >= 0 && lane_change_eagerness <= 1)) {
    throw std::invalid_argument("lane_change_eagerness must be in [0, 1]");
  }
  if (!(cooperation >= 0 && cooperation <= 1)) throw std::invalid_argument("cooperation must be in [0, 1]");
  if (!(sigma >= 0 && sigma <= 1)) throw std::invalid_argument("sigma must be in [0, 1]");
  if (lane_change_rate > 1) throw std::invalid_argument("lane_change_rate must be <= 1");
}

const Vehicle& HighwayWorld::vehicle(std::uint64_t id) const {
  const auto it = std::lower_bound(vehicles.begin(), vehicles.end(), id,
                                   [](const Vehicle& v, std::uint64_t key) { return v.id < key; });
  if (it == vehicles.end() || it->id != id) throw std::out_of_range("no vehicle " + std::to_string(id));
  return *it;
}

Vehicle& HighwayWorld::vehicle(std::uint64_t id) {
  return const_cast<Vehicle&>(std::as_const(*this).vehicle(id));
}

double HighwayWorld::v_desired() const {
  return config.v_desired > 0 ? config.v_desired : 0.9 * agent().driver.max_speed;
}

void HighwayWorld::validate() const {
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    if (i > 0 && vehicles[i - 1].id >= v.id) throw std::logic_error("vehicle ids not strictly increasing");
    if (!(v.position >= 0 && v.position < config.track_length)) throw std::logic_error("position off track");
    if (v.lane < 0 || v.lane >= config.lanes) throw std::logic_error("lane off road");
    if (!(v.speed >= 0 && v.speed <= v.driver.max_speed + 1e-12)) throw std::logic_error("speed out of bounds");
    const auto l = leader_in_lane(*this, v.lane, v.position, v.id);
    if (l && l->gap < -kOverlapTolerance) throw std::logic_error("same-lane vehicles overlap");
  }
}

double krauss_safe_speed(double v_leader, double gap, const SimConfig& cfg) {
  if (gap < 0) throw std::invalid_argument("negative gap");
  if (std::isinf(gap)) return kInf;
  const double bt = cfg.decel_max * cfg.headway;
  return -bt + std::sqrt(bt * bt + v_leader * v_leader + 2.0 * cfg.decel_max * gap);
}

double krauss_speed(double v, double v_leader, double gap, const SimConfig& cfg, const DriverParams& driver,
                    Rng& rng) {
  const double v_safe = krauss_safe_speed(v_leader, gap, cfg);
  const double target = std::min({v + cfg.accel_max * cfg.sim_dt, driver.max_speed, v_safe});
  const double noise = driver.sigma > 0 ? uniform(rng, 0.0, driver.sigma * cfg.accel_max * cfg.sim_dt) : 0.0;
  return std::max(0.0, target - noise);
}

double ring_offset(double from, double to, double track_length) {
  double d = forward_distance(from, to, track_length);
  if (d > 0.5 * track_length) d -= track_length;
  return d;
}

std::optional<Neighbor> leader_in_lane(const HighwayWorld& world, int lane, double position,
                                       std::uint64_t self_id) {
  std::optional<Neighbor> best;
  double best_d = kInf;
  for (const auto& o : world.vehicles) {
    if (o.id == self_id || o.lane != lane) continue;
    const double d = forward_distance(position, o.position, world.config.track_length);
    if (d < best_d) {
      best_d = d;
      best = Neighbor{&o, d - world.config.vehicle_length};
    }
  }
  return best;
}

std::optional<Neighbor> follower_in_lane(const HighwayWorld& world, int lane, double position,
                                         std::uint64_t self_id) {
  std::optional<Neighbor> best;
  double best_d = kInf;
  for (const auto& o : world.vehicles) {
    if (o.id == self_id || o.lane != lane) continue;
    const double d = forward_distance(o.position, position, world.config.track_length);
    if (d < best_d) {
      best_d = d;
      best = Neighbor{&o, d - world.config.vehicle_length};
    }
  }
  return best;
}

Action safety_check(const HighwayWorld& world, std::uint64_t vehicle_id, Action action) {
  if (!is_lane_change(action)) return Action::keep;
  const auto& cfg = world.config;
  const auto& v = world.vehicle(vehicle_id);
  const int target = v.lane + lane_offset(action);
  if (target < 0 || target >= cfg.lanes) return Action::keep;
  if (const auto l = leader_in_lane(world, target, v.position, v.id); l && within_sensor(cfg, *l)) {
    if (!(l->gap > cfg.min_gap)) return Action::keep;
  }
  if (const auto f = follower_in_lane(world, target, v.position, v.id); f && within_sensor(cfg, *f)) {
    if (!(f->gap > cfg.min_gap)) return Action::keep;
    const double v_safe = krauss_safe_speed(v.speed, f->gap - cfg.min_gap, cfg);
    if (v_safe < f->vehicle->speed - cfg.decel_max * cfg.action_dt) return Action::keep;
  }
  return action;
}

double prospective_speed(const HighwayWorld& world, const Vehicle& v, int lane) {
  const auto& cfg = world.config;
  const auto l = leader_in_lane(world, lane, v.position, v.id);
  if (!l || !within_sensor(cfg, *l)) return v.driver.max_speed;
  const double gap = leader_gap(cfg, *l);
  const double v_l = l->vehicle->speed;
  return std::min({v.driver.max_speed, krauss_safe_speed(v_l, gap, cfg), v_l + gap / kLookaheadTime});
}

Action rule_based_lane_decision(const HighwayWorld& world, std::uint64_t vehicle_id, Rng& rng) {
  const auto& v = world.vehicle(vehicle_id);
  const auto& d = v.driver;
  if (d.lane_change_eagerness <= 0.0) return Action::keep;
  const bool rate_capped = d.lane_change_rate >= 0.0;
  if (rate_capped && v.owed_changes <= 0) return Action::keep;

  const double current = prospective_speed(world, v, v.lane);
  const double threshold = (1.0 - d.lane_change_eagerness) * 5.0 + 0.5;
  Action best = Action::keep;
  double best_gain = -kInf;
  for (Action a : {Action::left, Action::right}) {
    if (safety_check(world, vehicle_id, a) == Action::keep) continue;
    const int target = v.lane + lane_offset(a);
    if (uniform01(rng) < d.cooperation && forces_follower_to_brake(world, v, target)) continue;
    const double gain = prospective_speed(world, v, target) - current;
    if (!rate_capped && gain <= threshold) continue;
    if (gain > best_gain || (gain == best_gain && uniform01(rng) < 0.5)) {
      best = a;
      best_gain = gain;
    }
  }
  return best;
}

Action drive_rule_based(HighwayWorld& world, std::uint64_t vehicle_id) {
  auto& v = world.vehicle(vehicle_id);
  if (v.driver.lane_change_rate > 0.0 && uniform01(world.rng) < v.driver.lane_change_rate) {
    v.owed_changes = std::min(v.owed_changes + 1, kMaxOwedChanges);
  }
  return rule_based_lane_decision(world, vehicle_id, world.rng);
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::lane_change: return "lane_change";
    case EventKind::collision: return "collision";
    case EventKind::wraparound: return "wraparound";
    case EventKind::unsafe_override: return "unsafe_override";
    case EventKind::aborted_lane_change: return "aborted_lane_change";
  }
  return "unknown";
}

std::vector<SimEvent> step(HighwayWorld& world, Action agent_action) {
  const auto& cfg = world.config;
  std::vector<SimEvent> events;
  for (auto& v : world.vehicles) {
    Action a;
    if (v.id == world.agent_id) {
      a = agent_action == Action::none ? Action::keep : agent_action;
      if (world.safety_enabled) {
        const Action filtered = safety_check(world, v.id, a);
        if (filtered != a) {
          events.push_back({world.step_count, v.id, EventKind::unsafe_override, v.lane, v.lane + lane_offset(a)});
        }
        a = filtered;
      }
    } else {
      a = drive_rule_based(world, v.id);
    }
    world.vehicle(v.id).pending = a;
    world.vehicle(v.id).lane_change_timer = is_lane_change(a) ? cfg.action_dt : 0.0;
  }

  for (std::size_t k = 0; k < cfg.substeps(); ++k) substep(world, events);

  for (auto& v : world.vehicles) {
    const Action a = v.pending;
    v.pending = Action::keep;
    v.lane_change_timer = 0.0;
    if (!is_lane_change(a)) continue;
    const bool checked = v.id != world.agent_id || world.safety_enabled;
    const int target = v.lane + lane_offset(a);
    if ((checked && safety_check(world, v.id, a) == Action::keep) || target < 0 || target >= cfg.lanes) {
      events.push_back({world.step_count, v.id, EventKind::aborted_lane_change, v.lane, target});
      continue;
    }
    events.push_back({world.step_count, v.id, EventKind::lane_change, v.lane, target});
    v.lane = target;
    if (v.owed_changes > 0) --v.owed_changes;
  }
  check_overlaps(world, events);
  ++world.step_count;
  return events;
}

replay::SceneState observe(const HighwayWorld& world, std::uint64_t ego_id) {
  const auto& ego = world.vehicle(ego_id);
  replay::SceneState scene;
  scene.timestamp = world.time();
  scene.vehicles.push_back({ego.id, 0.0, 0.0, 0, ego.speed, ego.lane, true, false});
  std::vector<replay::VehicleFeatures> others;
  for (const auto& o : world.vehicles) {
    if (o.id == ego_id) continue;
    const double off = ring_offset(ego.position, o.position, world.config.track_length);
    if (std::abs(off) > world.config.sensor_range) continue;
    others.push_back({o.id, off, o.speed - ego.speed, o.lane - ego.lane, o.speed, o.lane, false, false});
  }
  std::sort(others.begin(), others.end(), [](const auto& a, const auto& b) {
    return a.rel_distance != b.rel_distance ? a.rel_distance < b.rel_distance : a.vehicle_id < b.vehicle_id;
  });
  scene.vehicles.insert(scene.vehicles.end(), others.begin(), others.end());
  return scene;
}

replay::FeatureScale feature_scale(const HighwayWorld& world) {
  return {world.config.sensor_range, world.v_desired(), world.config.lanes};
}

DriverParams DriverMix::sample(Rng& rng) const {
  DriverParams d;
  d.max_speed = uniform(rng, max_speed_min, max_speed_max);
  d.lane_change_eagerness = uniform(rng, eagerness_min, eagerness_max);
  d.cooperation = uniform(rng, cooperation_min, cooperation_max);
  d.sigma = sigma;
  d.lane_change_rate = lane_change_rate;
  return d;
}

void DriverMix::validate() const {
  if (!(max_speed_min > 0 && max_speed_max >= max_speed_min)) throw std::invalid_argument("bad max_speed range");
  if (!(eagerness_min >= 0 && eagerness_max >= eagerness_min && eagerness_max <= 1)) {
    throw std::invalid_argument("bad eagerness range");
  }
  if (!(cooperation_min >= 0 && cooperation_max >= cooperation_min && cooperation_max <= 1)) {
    throw std::invalid_argument("bad cooperation range");
  }
  if (!(sigma >= 0 && sigma <= 1)) throw std::invalid_argument("sigma must be in [0, 1]");
  if (lane_change_rate > 1) throw std::invalid_argument("lane_change_rate must be <= 1");
}

HighwayWorld spawn_world(const SimConfig& cfg, std::size_t vehicle_count, const DriverMix& mix,
                         const DriverParams& agent_driver, std::uint64_t seed) {
  cfg.validate();
  mix.validate();
  agent_driver.validate();
  if (vehicle_count < 1) throw std::invalid_argument("need at least the agent");
  const double slot = cfg.vehicle_length + cfg.min_gap + 4.0;
  const auto per_lane = static_cast<std::size_t>(std::floor(cfg.track_length / slot));
  const std::size_t slots = per_lane * static_cast<std::size_t>(cfg.lanes);
  if (vehicle_count > slots) throw std::invalid_argument("too many vehicles for the track");

  HighwayWorld world;
  world.config = cfg;
  world.rng.seed(seed);
  std::vector<std::size_t> order(slots);
  for (std::size_t i = 0; i < slots; ++i) order[i] = i;
  for (std::size_t i = 0; i < vehicle_count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, slots - 1);
    std::swap(order[i], order[pick(world.rng)]);
  }
  const double spacing = cfg.track_length / static_cast<double>(per_lane);
  for (std::size_t i = 0; i < vehicle_count; ++i) {
    Vehicle v;
    v.id = i;
    v.lane = static_cast<int>(order[i] / per_lane);
    v.position = static_cast<double>(order[i] % per_lane) * spacing;
    v.driver = i == 0 ? agent_driver : mix.sample(world.rng);
    v.speed = uniform(world.rng, 0.5, 1.0) * v.driver.max_speed;
    world.vehicles.push_back(v);
  }
  world.agent_id = 0;
  for (std::size_t pass = 0; pass <= vehicle_count; ++pass) {
    bool changed = false;
    for (auto& v : world.vehicles) {
      const auto l = leader_in_lane(world, v.lane, v.position, v.id);
      if (!l) continue;
      const double safe = krauss_safe_speed(l->vehicle->speed, leader_gap(cfg, *l), cfg);
      if (v.speed > safe) {
        v.speed = safe;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return world;
}

void CollectConfig::validate() const {
  sim.validate();
  mix.validate();
  agent_driver.validate();
  if (!(agent_lc_rate >= 0 && agent_lc_rate <= 1)) throw std::invalid_argument("agent_lc_rate must be in [0, 1]");
  if (vehicles_min < 1 || vehicles_max < vehicles_min) throw std::invalid_argument("bad vehicle count range");
  if (episode_steps < 1) throw std::invalid_argument("episode_steps must be >= 1");
}

replay::ReplayBuffer collect_dataset(const CollectConfig& cfg, const std::function<void(const SimEvent&)>& on_event) {
  cfg.validate();
  DriverParams agent = cfg.agent_driver;
  agent.lane_change_rate = cfg.agent_lc_rate;
  if (cfg.agent_lc_rate > 0 && agent.lane_change_eagerness <= 0) agent.lane_change_eagerness = 1.0;

  replay::ReplayBuffer buffer;
  Rng episode_rng(mix_seed(cfg.seed, 0));
  for (std::uint64_t episode = 0; buffer.size() < cfg.transitions; ++episode) {
    std::uniform_int_distribution<std::size_t> count(cfg.vehicles_min, cfg.vehicles_max);
    auto world = spawn_world(cfg.sim, count(episode_rng), cfg.mix, agent, mix_seed(cfg.seed, episode + 1));
    const auto scale = feature_scale(world);
    if (episode == 0) buffer = replay::ReplayBuffer(replay::BufferHeader{scale, cfg.sim.action_dt});
    if (!(buffer.scale() == scale)) throw std::logic_error("feature scale changed between episodes");
    for (std::size_t k = 0; k < cfg.warmup_steps; ++k) step(world, Action::keep);
    for (std::size_t k = 0; k < cfg.episode_steps && buffer.size() < cfg.transitions; ++k) {
      auto s_t = observe(world, world.agent_id);
      const Action a = cfg.agent_lc_rate > 0 ? drive_rule_based(world, world.agent_id) : Action::keep;
      const auto events = step(world, a);
      if (on_event) {
        for (const auto& e : events) on_event(e);
      }
      buffer.append(replay::make_transition(s_t, observe(world, world.agent_id), scale));
    }
  }
  return buffer;
}

void apply_scenario_key(CollectConfig& c, const std::string& key, const std::string& value) {
  auto real = [&](double& field) { field = io::parse_real(key, value); };
  auto count = [&](std::size_t& field) { field = static_cast<std::size_t>(io::parse_count(key, value)); };
  if (key == "sim.track_length") real(c.sim.track_length);
  else if (key == "sim.lanes") c.sim.lanes = static_cast<int>(io::parse_count(key, value));
  else if (key == "sim.sim_dt") real(c.sim.sim_dt);
  else if (key == "sim.action_dt") real(c.sim.action_dt);
  else if (key == "sim.sensor_range") real(c.sim.sensor_range);
  else if (key == "sim.accel_max") real(c.sim.accel_max);
  else if (key == "sim.decel_max") real(c.sim.decel_max);
  else if (key == "sim.vehicle_length") real(c.sim.vehicle_length);
  else if (key == "sim.min_gap") real(c.sim.min_gap);
  else if (key == "sim.headway") real(c.sim.headway);
  else if (key == "sim.v_desired") real(c.sim.v_desired);
  else if (key == "mix.max_speed_min") real(c.mix.max_speed_min);
  else if (key == "mix.max_speed_max") real(c.mix.max_speed_max);
  else if (key == "mix.eagerness_min") real(c.mix.eagerness_min);
  else if (key == "mix.eagerness_max") real(c.mix.eagerness_max);
  else if (key == "mix.cooperation_min") real(c.mix.cooperation_min);
  else if (key == "mix.cooperation_max") real(c.mix.cooperation_max);
  else if (key == "mix.sigma") real(c.mix.sigma);
  else if (key == "mix.lane_change_rate") real(c.mix.lane_change_rate);
  else if (key == "agent.max_speed") real(c.agent_driver.max_speed);
  else if (key == "agent.lane_change_eagerness") real(c.agent_driver.lane_change_eagerness);
  else if (key == "agent.cooperation") real(c.agent_driver.cooperation);
  else if (key == "agent.sigma") real(c.agent_driver.sigma);
  else if (key == "agent_lc_rate") real(c.agent_lc_rate);
  else if (key == "vehicles_min") count(c.vehicles_min);
  else if (key == "vehicles_max") count(c.vehicles_max);
  else if (key == "episode_steps") count(c.episode_steps);
  else if (key == "warmup_steps") count(c.warmup_steps);
  else if (key == "transitions") count(c.transitions);
  else if (key == "seed") c.seed = io::parse_count(key, value);
  else throw FormatError("unknown scenario key '" + key + "'");
}

CollectConfig read_scenario(const std::filesystem::path& path) {
  CollectConfig cfg;
  for (const auto& [key, value] : io::read_key_values(path)) apply_scenario_key(cfg, key, value);
  cfg.validate();
  return cfg;
}

void write_event_header(std::ostream& os) { os << "step,vehicle_id,event,lane_from,lane_to\n"; }

void write_event(std::ostream& os, const SimEvent& e) {
  os << e.step << ',' << e.vehicle_id << ',' << to_string(e.kind) << ',' << e.lane_from << ',' << e.lane_to << '\n';
}

}  // namespace surq::sim
