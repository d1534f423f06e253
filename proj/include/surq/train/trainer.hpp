#pragma once

// Offline Deep Surrogate Q-learning on a fixed replay buffer, and the DeepSet-Q
// baseline trained on the same buffer using only the agent's own transitions.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "surq/nn/mlp.hpp"
#include "surq/qnet/deepset_qnet.hpp"
#include "surq/qnet/surrogate_qnet.hpp"
#include "surq/random.hpp"
#include "surq/replay/buffer.hpp"

namespace surq::train {

struct TrainConfig {
  double gamma = 0.99;
  std::size_t batch_size = 64;  // scene transitions per minibatch (m)
  std::size_t gradient_steps = 2'500'000;
  double learning_rate = 1e-4;
  double tau = 1e-4;
  std::uint64_t seed = 0;
  bool clipped_double_q = true;
  bool mask_offroad_actions = true;  // target max skips lane changes into non-existent lanes
  std::size_t eval_interval = 10'000;  // metrics row + checkpoint every this many steps; 0 = only at the end
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path metrics_path;     // empty: no metrics log

  // gamma in [0, 1), batch_size >= 1, tau in (0, 1], learning_rate > 0.
  void validate() const;
};

// Sets one TrainConfig field by its name (e.g. `learning_rate`); FormatError on unknown keys.
void apply_train_key(TrainConfig& config, const std::string& key, const std::string& value);
TrainConfig read_train_config(const std::filesystem::path& path);

using ModuleAdam = std::array<nn::AdamState, 3>;

template <class Net>
ModuleAdam make_module_adam(const Net& net) {
  const auto mods = net.modules();
  return {nn::AdamState::for_params(*mods[0]), nn::AdamState::for_params(*mods[1]),
          nn::AdamState::for_params(*mods[2])};
}

template <class Net>
void adam_step_net(ModuleAdam& adam, Net& net, const Net& grads, double learning_rate) {
  auto mods = net.modules();
  const auto gmods = grads.modules();
  for (std::size_t i = 0; i < mods.size(); ++i) nn::adam_step(adam[i], *mods[i], *gmods[i], learning_rate);
}

template <class Net>
void polyak_net(Net& target, const Net& online, double tau) {
  auto t = target.modules();
  const auto o = online.modules();
  for (std::size_t i = 0; i < t.size(); ++i) nn::polyak_update(*t[i], *o[i], tau);
}

template <class Net>
struct TwinState {
  Net online1;
  Net online2;  // unused without clipped double-Q
  Net target1;
  Net target2;
  ModuleAdam adam1;
  ModuleAdam adam2;
  std::uint64_t step = 0;
  std::vector<double> loss_history;
  Rng rng;
  bool clipped_double_q = true;
};

using TrainerState = TwinState<qnet::SurrogateQNet>;
using DeepSetTrainerState = TwinState<qnet::DeepSetQNet>;

// Online nets are independently initialized; targets start as copies of them.
TrainerState init_trainer(const TrainConfig& config);
DeepSetTrainerState init_deepset_trainer(const TrainConfig& config);

// y = r_p + gamma * min_k max_a Q'_k(s_{t+1}, a | p). Successor scenes are encoded once
// per transition (runs of samples sharing a transition). Without clipped double-Q only
// target1 is used. The task is continuing: there is no terminal masking. With
// `mask_offroad_actions` the max skips lane changes off the road of participant p at t+1.
std::vector<double> compute_targets(const TrainerState& state, std::span<const replay::VirtualSample> batch,
                                    const replay::FeatureScale& scale, double gamma,
                                    bool mask_offroad_actions = true);

struct StepStats {
  double loss = 0.0;    // (1/m) sum_i sum_p (y - Q1)^2, before the update
  double mean_q = 0.0;  // mean Q1 at the taken actions
  std::size_t virtual_batch_size = 0;
};

// Loss of one virtual batch under `net`, normalized by the number of scene transitions m.
// `grads` (may be null) receives d loss / d theta.
double virtual_batch_loss(const qnet::SurrogateQNet& net, std::span<const replay::VirtualSample> batch,
                          std::span<const double> targets, const replay::FeatureScale& scale,
                          std::size_t scene_count, qnet::SurrogateQNet* grads, double* mean_q = nullptr);

StepStats train_step(TrainerState& state, const replay::ReplayBuffer& buffer, const TrainConfig& config);

struct MetricsRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double mean_q = 0.0;
  std::string checkpoint;
};

struct TrainResult {
  TrainerState state;
  std::vector<MetricsRow> metrics;
};

TrainResult train(const TrainConfig& config, const replay::ReplayBuffer& buffer);

StepStats train_deepset_step(DeepSetTrainerState& state, const replay::ReplayBuffer& buffer,
                             const TrainConfig& config);

struct DeepSetTrainResult {
  DeepSetTrainerState state;
  std::vector<MetricsRow> metrics;
};

DeepSetTrainResult train_deepset_baseline(const TrainConfig& config, const replay::ReplayBuffer& buffer);

// Checkpoint container (little-endian):
//   char[4] "SQCK", u32 version (= 1), u8 algorithm (0 surrogate, 1 deepset),
//   u64 step, u8 clipped_double_q,
//   online1, target1, [online2, target2 if clipped] as network blocks
//   (qnet::write_qnet / qnet::write_deepset).
enum class Algorithm : std::uint8_t { surrogate = 0, deepset = 1 };

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state);
void save_checkpoint(const std::filesystem::path& path, const DeepSetTrainerState& state);

struct Checkpoint {
  Algorithm algorithm = Algorithm::surrogate;
  std::uint64_t step = 0;
  qnet::SurrogateQNet surrogate;  // set for Algorithm::surrogate
  qnet::DeepSetQNet deepset;      // set for Algorithm::deepset
};

// Loads the online Q1 network.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace surq::train
