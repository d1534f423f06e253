#include "surq/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include "surq/errors.hpp"
#include "surq/io/binary.hpp"
#include "surq/io/keyvalue.hpp"

namespace surq::train {

namespace {

constexpr std::string_view kMagic = "SQCK";
constexpr std::uint32_t kVersion = 1;

// Half-open ranges of consecutive samples projected from one minibatch entry.
struct Group {
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<Group> group_by_transition(std::span<const replay::VirtualSample> batch) {
  std::vector<Group> groups;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].transition == nullptr) throw std::invalid_argument("virtual sample without transition");
    // A scene sampled twice in a row starts a new run: participant order restarts.
    if (groups.empty() || batch[groups.back().begin].transition != batch[i].transition ||
        batch[i].participant <= batch[i - 1].participant) {
      groups.push_back({i, i + 1});
    } else {
      groups.back().end = i + 1;
    }
  }
  return groups;
}

std::vector<std::size_t> participants_of(std::span<const replay::VirtualSample> batch, const Group& g) {
  std::vector<std::size_t> rows;
  for (std::size_t i = g.begin; i < g.end; ++i) rows.push_back(batch[i].participant);
  return rows;
}

ActionMask target_mask(bool mask_offroad, const replay::VehicleFeatures& v, int lanes) {
  return mask_offroad ? lane_mask(v.own_lane, lanes) : kAnyAction;
}

template <class Net>
TwinState<Net> init_twin(const TrainConfig& config, Net (*create)(Rng&)) {
  config.validate();
  TwinState<Net> s;
  s.rng.seed(config.seed);
  Rng init_rng(mix_seed(config.seed, 1));
  s.online1 = create(init_rng);
  s.online2 = create(init_rng);
  s.target1 = s.online1;
  s.target2 = s.online2;
  s.adam1 = make_module_adam(s.online1);
  s.adam2 = make_module_adam(s.online2);
  s.clipped_double_q = config.clipped_double_q;
  return s;
}

qnet::SurrogateQNet create_surrogate(Rng& rng) { return qnet::SurrogateQNet::create(rng); }
qnet::DeepSetQNet create_deepset(Rng& rng) { return qnet::DeepSetQNet::create(rng); }

void check_loss(double loss, std::uint64_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError("training diverged: non-finite loss at step " + std::to_string(step));
  }
}

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) {
    if (path.empty()) return;
    os_.open(path, std::ios::app);
    if (!os_) throw std::runtime_error("cannot open metrics log " + path.string());
    os_.seekp(0, std::ios::end);
    if (os_.tellp() == 0) os_ << "step,loss,mean_q,checkpoint\n";
  }
  void write(const MetricsRow& row) {
    if (!os_.is_open()) return;
    os_.precision(17);
    os_ << row.step << ',' << row.loss << ',' << row.mean_q << ',' << row.checkpoint << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

template <class State, class StepFn>
std::vector<MetricsRow> run_loop(State& state, const TrainConfig& config, StepFn&& step_fn) {
  MetricsLog log(config.metrics_path);
  std::vector<MetricsRow> rows;
  double loss_sum = 0.0, q_sum = 0.0;
  std::size_t since = 0;
  for (std::size_t i = 0; i < config.gradient_steps; ++i) {
    const auto stats = step_fn();
    loss_sum += stats.loss;
    q_sum += stats.mean_q;
    ++since;
    const bool last = i + 1 == config.gradient_steps;
    const bool periodic = config.eval_interval > 0 && (i + 1) % config.eval_interval == 0;
    if (periodic || last) {
      MetricsRow row{state.step, loss_sum / static_cast<double>(since), q_sum / static_cast<double>(since), ""};
      if (!config.checkpoint_path.empty()) {
        save_checkpoint(config.checkpoint_path, state);
        row.checkpoint = config.checkpoint_path.string();
      }
      log.write(row);
      rows.push_back(row);
      loss_sum = q_sum = 0.0;
      since = 0;
    }
  }
  return rows;
}

template <class Net, class WriteNet>
void write_twin(const std::filesystem::path& path, const TwinState<Net>& state, Algorithm algo,
                WriteNet&& write_net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint " + path.string());
  io::write_magic(os, kMagic);
  io::write_u32(os, kVersion);
  io::write_u8(os, static_cast<std::uint8_t>(algo));
  io::write_u64(os, state.step);
  io::write_u8(os, state.clipped_double_q ? 1 : 0);
  write_net(os, state.online1);
  write_net(os, state.target1);
  if (state.clipped_double_q) {
    write_net(os, state.online2);
    write_net(os, state.target2);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0, 1)");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in (0, 1]");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
}

void apply_train_key(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "gamma") c.gamma = io::parse_real(key, value);
  else if (key == "batch_size") c.batch_size = io::parse_count(key, value);
  else if (key == "gradient_steps") c.gradient_steps = io::parse_count(key, value);
  else if (key == "learning_rate") c.learning_rate = io::parse_real(key, value);
  else if (key == "tau") c.tau = io::parse_real(key, value);
  else if (key == "seed") c.seed = io::parse_count(key, value);
  else if (key == "clipped_double_q") c.clipped_double_q = io::parse_flag(key, value);
  else if (key == "mask_offroad_actions") c.mask_offroad_actions = io::parse_flag(key, value);
  else if (key == "eval_interval") c.eval_interval = io::parse_count(key, value);
  else if (key == "checkpoint_path") c.checkpoint_path = value;
  else if (key == "metrics_path") c.metrics_path = value;
  else throw FormatError("unknown training key '" + key + "'");
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  TrainConfig c;
  for (const auto& [key, value] : io::read_key_values(path)) apply_train_key(c, key, value);
  return c;
}

TrainerState init_trainer(const TrainConfig& config) { return init_twin(config, &create_surrogate); }

DeepSetTrainerState init_deepset_trainer(const TrainConfig& config) {
  return init_twin(config, &create_deepset);
}

std::vector<double> compute_targets(const TrainerState& state, std::span<const replay::VirtualSample> batch,
                                    const replay::FeatureScale& scale, double gamma, bool mask_offroad_actions) {
  std::vector<double> y(batch.size());
  for (const auto& g : group_by_transition(batch)) {
    if (gamma == 0.0) {
      for (std::size_t i = g.begin; i < g.end; ++i) y[i] = batch[i].reward;
      continue;
    }
    const auto& kappa = *batch[g.begin].transition;
    if (kappa.s_t1.size() != kappa.s_t.size()) throw std::logic_error("compute_targets: unaligned transition");
    const auto rows = replay::feature_rows(kappa.s_t1, scale);
    const auto participants = participants_of(batch, g);
    const auto f1 = qnet::forward_participants(state.target1, rows, participants);
    std::vector<double> best(participants.size());
    std::vector<ActionMask> masks(participants.size());
    for (std::size_t j = 0; j < participants.size(); ++j) {
      masks[j] = target_mask(mask_offroad_actions, kappa.s_t1.vehicles[participants[j]], scale.lanes);
      best[j] = qnet::max_q(f1.q[j], masks[j]);
    }
    if (state.clipped_double_q) {
      const auto f2 = qnet::forward_participants(state.target2, rows, participants);
      for (std::size_t j = 0; j < participants.size(); ++j) best[j] = std::min(best[j], qnet::max_q(f2.q[j], masks[j]));
    }
    for (std::size_t i = g.begin; i < g.end; ++i) y[i] = batch[i].reward + gamma * best[i - g.begin];
  }
  return y;
}

double virtual_batch_loss(const qnet::SurrogateQNet& net, std::span<const replay::VirtualSample> batch,
                          std::span<const double> targets, const replay::FeatureScale& scale,
                          std::size_t scene_count, qnet::SurrogateQNet* grads, double* mean_q) {
  if (targets.size() != batch.size()) throw ShapeError("targets and batch sizes differ");
  if (scene_count == 0) throw std::invalid_argument("scene_count must be positive");
  const double inv_m = 1.0 / static_cast<double>(scene_count);
  double loss = 0.0;
  double q_sum = 0.0;
  std::vector<qnet::Selection> selected;
  std::vector<double> upstream;
  for (const auto& g : group_by_transition(batch)) {
    const auto rows = replay::feature_rows(batch[g.begin].transition->s_t, scale);
    const auto participants = participants_of(batch, g);
    const auto fwd = qnet::forward_participants(net, rows, participants);
    selected.clear();
    upstream.clear();
    double group_loss = 0.0;
    for (std::size_t i = g.begin; i < g.end; ++i) {
      const auto& s = batch[i];
      const double q = fwd.q[i - g.begin][action_index(s.action)];
      const double err = q - targets[i];
      group_loss += err * err;
      q_sum += q;
      selected.push_back({s.participant, s.action});
      upstream.push_back(2.0 * err * inv_m);
    }
    loss += group_loss;
    if (grads != nullptr) qnet::accumulate_gradients(net, fwd, selected, upstream, *grads);
  }
  if (mean_q != nullptr) *mean_q = batch.empty() ? 0.0 : q_sum / static_cast<double>(batch.size());
  return loss * inv_m;
}

StepStats train_step(TrainerState& state, const replay::ReplayBuffer& buffer, const TrainConfig& config) {
  const auto minibatch = buffer.sample_minibatch(config.batch_size, state.rng);
  const auto batch = replay::build_virtual_batch(minibatch);
  const auto& scale = buffer.scale();
  const auto y = compute_targets(state, batch, scale, config.gamma, config.mask_offroad_actions);

  StepStats stats;
  stats.virtual_batch_size = batch.size();
  auto grads1 = state.online1.zeros_like();
  stats.loss = virtual_batch_loss(state.online1, batch, y, scale, minibatch.size(), &grads1, &stats.mean_q);
  check_loss(stats.loss, state.step);
  if (state.clipped_double_q) {
    auto grads2 = state.online2.zeros_like();
    check_loss(virtual_batch_loss(state.online2, batch, y, scale, minibatch.size(), &grads2), state.step);
    adam_step_net(state.adam2, state.online2, grads2, config.learning_rate);
  }
  adam_step_net(state.adam1, state.online1, grads1, config.learning_rate);
  polyak_net(state.target1, state.online1, config.tau);
  if (state.clipped_double_q) polyak_net(state.target2, state.online2, config.tau);

  state.step += 1;
  state.loss_history.push_back(stats.loss);
  return stats;
}

TrainResult train(const TrainConfig& config, const replay::ReplayBuffer& buffer) {
  config.validate();
  if (config.gradient_steps > 0 && buffer.empty()) throw StateError("cannot train on an empty replay buffer");
  TrainResult result{init_trainer(config), {}};
  result.metrics = run_loop(result.state, config, [&] { return train_step(result.state, buffer, config); });
  return result;
}

StepStats train_deepset_step(DeepSetTrainerState& state, const replay::ReplayBuffer& buffer,
                             const TrainConfig& config) {
  const auto minibatch = buffer.sample_minibatch(config.batch_size, state.rng);
  const auto& scale = buffer.scale();
  const double inv_m = 1.0 / static_cast<double>(minibatch.size());

  struct Sample {
    qnet::DeepSetInput input;
    Action action;
    double y;
  };
  std::vector<Sample> samples;
  samples.reserve(minibatch.size());
  for (const auto* kappa : minibatch) {
    if (!kappa->valid[0]) continue;  // agent track glitch; no loss term
    Sample s{replay::deepset_input(kappa->s_t, scale), kappa->actions[0], kappa->rewards[0]};
    if (config.gamma > 0.0) {
      const auto next = replay::deepset_input(kappa->s_t1, scale);
      const auto mask = target_mask(config.mask_offroad_actions, kappa->s_t1.agent(), scale.lanes);
      double best = qnet::max_q(qnet::deepset_q_values(state.target1, next), mask);
      if (state.clipped_double_q) {
        best = std::min(best, qnet::max_q(qnet::deepset_q_values(state.target2, next), mask));
      }
      s.y += config.gamma * best;
    }
    samples.push_back(std::move(s));
  }

  StepStats stats;
  stats.virtual_batch_size = samples.size();
  auto run_net = [&](const qnet::DeepSetQNet& net, qnet::DeepSetQNet& grads, double* mean_q) {
    double loss = 0.0, q_sum = 0.0;
    for (const auto& s : samples) {
      const auto fwd = qnet::deepset_forward(net, s.input);
      const double q = fwd.q[action_index(s.action)];
      const double err = q - s.y;
      loss += err * err;
      q_sum += q;
      qnet::deepset_accumulate_gradients(net, fwd, s.action, 2.0 * err * inv_m, grads);
    }
    if (mean_q != nullptr) *mean_q = samples.empty() ? 0.0 : q_sum / static_cast<double>(samples.size());
    return loss * inv_m;
  };

  auto grads1 = state.online1.zeros_like();
  stats.loss = run_net(state.online1, grads1, &stats.mean_q);
  check_loss(stats.loss, state.step);
  if (state.clipped_double_q) {
    auto grads2 = state.online2.zeros_like();
    check_loss(run_net(state.online2, grads2, nullptr), state.step);
    adam_step_net(state.adam2, state.online2, grads2, config.learning_rate);
  }
  adam_step_net(state.adam1, state.online1, grads1, config.learning_rate);
  polyak_net(state.target1, state.online1, config.tau);
  if (state.clipped_double_q) polyak_net(state.target2, state.online2, config.tau);

  state.step += 1;
  state.loss_history.push_back(stats.loss);
  return stats;
}

DeepSetTrainResult train_deepset_baseline(const TrainConfig& config, const replay::ReplayBuffer& buffer) {
  config.validate();
  if (config.gradient_steps > 0 && buffer.empty()) throw StateError("cannot train on an empty replay buffer");
  DeepSetTrainResult result{init_deepset_trainer(config), {}};
  result.metrics =
      run_loop(result.state, config, [&] { return train_deepset_step(result.state, buffer, config); });
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state) {
  write_twin(path, state, Algorithm::surrogate,
             [](std::ostream& os, const qnet::SurrogateQNet& n) { qnet::write_qnet(os, n); });
}

void save_checkpoint(const std::filesystem::path& path, const DeepSetTrainerState& state) {
  write_twin(path, state, Algorithm::deepset,
             [](std::ostream& os, const qnet::DeepSetQNet& n) { qnet::write_deepset(os, n); });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  io::expect_magic(is, kMagic);
  if (io::read_u32(is) != kVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  const auto algo = io::read_u8(is);
  if (algo > 1) throw FormatError("unknown algorithm tag in checkpoint");
  ck.algorithm = static_cast<Algorithm>(algo);
  ck.step = io::read_u64(is);
  io::read_u8(is);
  if (ck.algorithm == Algorithm::surrogate) {
    ck.surrogate = qnet::read_qnet(is);
  } else {
    ck.deepset = qnet::read_deepset(is);
  }
  return ck;
}

}  // namespace surq::train
