#pragma once

// Scene transitions recorded from the agent's point of view, and their projection
// into per-participant ("virtual") samples judged by the agent's reward function.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "surq/action.hpp"
#include "surq/qnet/deepset_qnet.hpp"
#include "surq/qnet/surrogate_qnet.hpp"

namespace surq::replay {

inline constexpr double kLaneChangePenalty = 0.01;

// Normalization constants shared by every scene in a buffer.
struct FeatureScale {
  double sensor_range = 80.0;  // m
  double v_desired = 30.0;     // m/s
  int lanes = 3;

  friend bool operator==(const FeatureScale&, const FeatureScale&) = default;
};

struct VehicleFeatures {
  std::uint64_t vehicle_id = 0;
  double rel_distance = 0.0;  // m, signed ring-shortest, positive = ahead of the agent
  double rel_speed = 0.0;     // m/s, own_speed - agent speed
  int rel_lane = 0;           // own_lane - agent lane
  double own_speed = 0.0;     // m/s
  int own_lane = 0;           // 0 = rightmost
  bool is_agent = false;
  bool is_dummy = false;

  friend bool operator==(const VehicleFeatures&, const VehicleFeatures&) = default;
};

// [rel_distance / sensor_range, rel_speed / v_desired, rel_lane,
//  own_speed / v_desired, left lane exists, right lane exists]
qnet::FeatureRow feature_row(const VehicleFeatures& v, const FeatureScale& scale);

struct SceneState {
  std::vector<VehicleFeatures> vehicles;  // agent first
  double timestamp = 0.0;                 // s

  std::size_t size() const { return vehicles.size(); }
  const VehicleFeatures& agent() const { return vehicles.front(); }
  // Exactly one agent row, at index 0; unique vehicle ids. Throws DataError.
  void validate() const;

  friend bool operator==(const SceneState&, const SceneState&) = default;
};

std::vector<qnet::FeatureRow> feature_rows(const SceneState& scene, const FeatureScale& scale);

// Surrounders: [rel_distance / sensor_range, rel_speed / v_desired, rel_lane].
// Agent: [own_speed / v_desired, left lane exists, right lane exists].
qnet::DeepSetInput deepset_input(const SceneState& scene, const FeatureScale& scale);

struct SceneTransition {
  SceneState s_t;
  SceneState s_t1;
  std::vector<Action> actions;     // per participant of s_t; Action::none where masked
  std::vector<double> rewards;     // per participant; 0 where masked
  std::vector<std::uint8_t> valid; // per participant

  std::size_t valid_count() const;
  // Aligned ids, consistent lengths, masked entries carry Action::none. Throws DataError.
  void validate() const;

  friend bool operator==(const SceneTransition&, const SceneTransition&) = default;
};

// Lane change between two consecutive action steps. More than one lane per step
// is a tracking glitch and yields nullopt.
std::optional<Action> infer_action(int lane_t, int lane_t1);

// 1 - |v - v_desired| / v_desired - 0.01 * [action is a lane change]
double label_reward(Action action, double own_speed_t1, double v_desired);

struct AlignedScenes {
  SceneState s_t;
  SceneState s_t1;
  std::vector<std::uint8_t> valid;
};

// Brings both scenes to the union of their vehicle ids in the same order (s_t order,
// then vehicles that only exist at t+1). Missing vehicles get dummy rows at
// +-sensor_range on their known side with zero relative speed and copied lanes.
// Dummies in s_t and tracking glitches are invalid. Throws DataError if the agent
// is missing or differs between the scenes.
AlignedScenes align_vehicles(const SceneState& s_t, const SceneState& s_t1, double sensor_range);

// Aligns, infers every participant's action and labels it with the agent's reward.
SceneTransition make_transition(const SceneState& s_t, const SceneState& s_t1, const FeatureScale& scale);

struct VirtualSample {
  const SceneTransition* transition = nullptr;
  std::size_t participant = 0;
  Action action = Action::keep;
  double reward = 0.0;
};

// One sample per valid participant (agent included), scene order.
std::vector<VirtualSample> project_scene(const SceneTransition& kappa);

// Concatenation of project_scene over the minibatch; samples of one transition are contiguous.
std::vector<VirtualSample> build_virtual_batch(std::span<const SceneTransition* const> minibatch);

}  // namespace surq::replay
