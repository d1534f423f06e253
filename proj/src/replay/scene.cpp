#include "surq/replay/scene.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "surq/errors.hpp"

namespace surq::replay {

qnet::FeatureRow feature_row(const VehicleFeatures& v, const FeatureScale& scale) {
  // Every row, the agent's included, uses the same self-descriptive features; an agent marker
  // would only ever co-occur with keep-lane in agent-passive data and poison its lane-change outputs.
  return {v.rel_distance / scale.sensor_range,
          v.rel_speed / scale.v_desired,
          static_cast<double>(v.rel_lane),
          v.own_speed / scale.v_desired,
          v.own_lane + 1 < scale.lanes ? 1.0 : 0.0,
          v.own_lane > 0 ? 1.0 : 0.0};
}

std::vector<qnet::FeatureRow> feature_rows(const SceneState& scene, const FeatureScale& scale) {
  std::vector<qnet::FeatureRow> rows;
  rows.reserve(scene.vehicles.size());
  for (const auto& v : scene.vehicles) rows.push_back(feature_row(v, scale));
  return rows;
}

qnet::DeepSetInput deepset_input(const SceneState& scene, const FeatureScale& scale) {
  qnet::DeepSetInput in;
  const auto& agent = scene.agent();
  in.agent = {agent.own_speed / scale.v_desired, agent.own_lane + 1 < scale.lanes ? 1.0 : 0.0,
              agent.own_lane > 0 ? 1.0 : 0.0};
  in.surrounders.reserve(scene.vehicles.size());
  for (std::size_t i = 1; i < scene.vehicles.size(); ++i) {
    const auto& v = scene.vehicles[i];
    in.surrounders.push_back({v.rel_distance / scale.sensor_range, v.rel_speed / scale.v_desired,
                              static_cast<double>(v.rel_lane)});
  }
  return in;
}

void SceneState::validate() const {
  if (vehicles.empty() || !vehicles.front().is_agent) throw DataError("scene has no agent row at index 0");
  std::unordered_set<std::uint64_t> ids;
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    if (i > 0 && vehicles[i].is_agent) throw DataError("scene has more than one agent row");
    if (!ids.insert(vehicles[i].vehicle_id).second) {
      throw DataError("duplicate vehicle id " + std::to_string(vehicles[i].vehicle_id) + " in scene");
    }
  }
}

std::size_t SceneTransition::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void SceneTransition::validate() const {
  s_t.validate();
  s_t1.validate();
  const auto n = s_t.size();
  if (s_t1.size() != n || actions.size() != n || rewards.size() != n || valid.size() != n) {
    throw DataError("transition vectors have inconsistent lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (s_t.vehicles[i].vehicle_id != s_t1.vehicles[i].vehicle_id) {
      throw DataError("transition scenes are not aligned");
    }
    if (valid[i] && (action_index(actions[i]) >= kActionCount || s_t.vehicles[i].is_dummy)) {
      throw DataError("valid participant without a concrete action");
    }
    if (!valid[i] && actions[i] != Action::none) throw DataError("masked participant carries an action");
  }
}

std::optional<Action> infer_action(int lane_t, int lane_t1) {
  if (lane_t < 0 || lane_t1 < 0) throw std::invalid_argument("negative lane index");
  const int delta = lane_t1 - lane_t;
  if (delta == 0) return Action::keep;
  if (delta == 1) return Action::left;
  if (delta == -1) return Action::right;
  return std::nullopt;
}

double label_reward(Action action, double own_speed_t1, double v_desired) {
  if (!(v_desired > 0.0)) throw std::invalid_argument("v_desired must be positive");
  const double penalty = is_lane_change(action) ? kLaneChangePenalty : 0.0;
  return 1.0 - std::abs(own_speed_t1 - v_desired) / v_desired - penalty;
}

namespace {

VehicleFeatures make_dummy(const VehicleFeatures& known, double sensor_range) {
  VehicleFeatures d = known;
  d.rel_distance = known.rel_distance < 0.0 ? -sensor_range : sensor_range;
  d.rel_speed = 0.0;
  d.is_dummy = true;
  d.is_agent = false;
  return d;
}

}  // namespace

AlignedScenes align_vehicles(const SceneState& s_t, const SceneState& s_t1, double sensor_range) {
  if (s_t.vehicles.empty() || !s_t.vehicles.front().is_agent || s_t1.vehicles.empty() ||
      !s_t1.vehicles.front().is_agent) {
    throw DataError("agent missing from scene");
  }
  if (s_t.agent().vehicle_id != s_t1.agent().vehicle_id) throw DataError("agent differs between scenes");

  std::unordered_map<std::uint64_t, std::size_t> next_index;
  for (std::size_t i = 0; i < s_t1.vehicles.size(); ++i) next_index.emplace(s_t1.vehicles[i].vehicle_id, i);
  std::unordered_set<std::uint64_t> in_t;
  for (const auto& v : s_t.vehicles) in_t.insert(v.vehicle_id);

  AlignedScenes out;
  out.s_t.timestamp = s_t.timestamp;
  out.s_t1.timestamp = s_t1.timestamp;
  for (const auto& v : s_t.vehicles) {
    out.s_t.vehicles.push_back(v);
    const auto it = next_index.find(v.vehicle_id);
    if (it != next_index.end()) {
      const auto& w = s_t1.vehicles[it->second];
      out.s_t1.vehicles.push_back(w);
      const bool ok = !v.is_dummy && infer_action(v.own_lane, w.own_lane).has_value();
      out.valid.push_back(ok ? 1 : 0);
    } else {
      out.s_t1.vehicles.push_back(make_dummy(v, sensor_range));
      out.valid.push_back(v.is_dummy ? 0 : 1);
    }
  }
  for (const auto& w : s_t1.vehicles) {
    if (in_t.contains(w.vehicle_id)) continue;
    out.s_t.vehicles.push_back(make_dummy(w, sensor_range));
    out.s_t1.vehicles.push_back(w);
    out.valid.push_back(0);
  }
  return out;
}

SceneTransition make_transition(const SceneState& s_t, const SceneState& s_t1, const FeatureScale& scale) {
  auto aligned = align_vehicles(s_t, s_t1, scale.sensor_range);
  SceneTransition k;
  k.s_t = std::move(aligned.s_t);
  k.s_t1 = std::move(aligned.s_t1);
  k.valid = std::move(aligned.valid);
  const auto n = k.s_t.size();
  k.actions.assign(n, Action::none);
  k.rewards.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!k.valid[i]) continue;
    const auto& now = k.s_t.vehicles[i];
    const auto& next = k.s_t1.vehicles[i];
    const Action a = *infer_action(now.own_lane, next.own_lane);
    k.actions[i] = a;
    k.rewards[i] = label_reward(a, next.own_speed, scale.v_desired);
  }
  return k;
}

std::vector<VirtualSample> project_scene(const SceneTransition& kappa) {
  std::vector<VirtualSample> out;
  out.reserve(kappa.valid_count());
  for (std::size_t p = 0; p < kappa.s_t.size(); ++p) {
    if (!kappa.valid[p]) continue;
    out.push_back(VirtualSample{&kappa, p, kappa.actions[p], kappa.rewards[p]});
  }
  return out;
}

std::vector<VirtualSample> build_virtual_batch(std::span<const SceneTransition* const> minibatch) {
  if (minibatch.empty()) throw std::invalid_argument("virtual batch needs at least one scene transition");
  std::vector<VirtualSample> out;
  for (const auto* kappa : minibatch) {
    const auto part = project_scene(*kappa);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace surq::replay
