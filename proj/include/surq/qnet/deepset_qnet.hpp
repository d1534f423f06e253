#pragma once

// DeepSet-Q baseline: a set encoder over the surrounding vehicles only, concatenated
// with static agent features, scored by a single Q-head for the agent.
//
//   Q_DS(s, .) = Q( rho( sum_{x in s \ agent} phi(x) ) || x_agent )

#include <array>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "surq/action.hpp"
#include "surq/nn/mlp.hpp"
#include "surq/qnet/surrogate_qnet.hpp"
#include "surq/random.hpp"

namespace surq::qnet {

inline constexpr std::size_t kDeepSetVehicleWidth = 3;
inline constexpr std::size_t kDeepSetAgentWidth = 3;

using DeepSetVehicleRow = std::array<double, kDeepSetVehicleWidth>;
using DeepSetAgentRow = std::array<double, kDeepSetAgentWidth>;

struct DeepSetInput {
  std::vector<DeepSetVehicleRow> surrounders;  // may be empty
  DeepSetAgentRow agent{};
};

struct DeepSetQNet {
  nn::MlpParams phi;    // 3 -> 20 -> 80
  nn::MlpParams rho;    // 80 -> 80 -> 20
  nn::MlpParams qhead;  // 23 -> 100 -> 100 -> 3

  static DeepSetQNet create(Rng& rng);

  void validate() const;
  std::array<nn::MlpParams*, 3> modules() { return {&phi, &rho, &qhead}; }
  std::array<const nn::MlpParams*, 3> modules() const { return {&phi, &rho, &qhead}; }
  DeepSetQNet zeros_like() const;
  friend bool operator==(const DeepSetQNet&, const DeepSetQNet&) = default;
};

struct DeepSetForward {
  std::vector<nn::MlpCache> phi_caches;
  nn::MlpCache rho_cache;
  nn::MlpCache head_cache;
  QVector q{};
};

DeepSetForward deepset_forward(const DeepSetQNet& net, const DeepSetInput& input);
QVector deepset_q_values(const DeepSetQNet& net, const DeepSetInput& input);
Action deepset_greedy_action(const DeepSetQNet& net, const DeepSetInput& input, const ActionMask& mask = kAnyAction);

// Adds upstream * dQ(action)/dtheta into `grads`.
void deepset_accumulate_gradients(const DeepSetQNet& net, const DeepSetForward& fwd, Action action,
                                  double upstream, DeepSetQNet& grads);

// Checkpoint block: "SQDS", u32 version, then phi, rho, qhead as nn::write_mlp blocks.
void write_deepset(std::ostream& os, const DeepSetQNet& net);
DeepSetQNet read_deepset(std::istream& is);

}  // namespace surq::qnet
