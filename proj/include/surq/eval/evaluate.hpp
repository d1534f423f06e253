#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "surq/qnet/deepset_qnet.hpp"
#include "surq/qnet/surrogate_qnet.hpp"
#include "surq/replay/buffer.hpp"
#include "surq/sim/highway.hpp"

namespace surq::eval {

// Greedy action provider for the agent. act() must not touch shared state other than
// the world it is given, so one policy may serve several worker threads.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual Action act(sim::HighwayWorld& world) const = 0;
};

class KeepLanePolicy final : public Policy {
 public:
  std::string name() const override { return "keep-lane"; }
  Action act(sim::HighwayWorld&) const override { return Action::keep; }
};

// The simulator's own driver model applied to the agent (agent driver params).
class RuleBasedPolicy final : public Policy {
 public:
  std::string name() const override { return "rule-based"; }
  Action act(sim::HighwayWorld& world) const override;
};

class SurrogateQPolicy final : public Policy {
 public:
  explicit SurrogateQPolicy(qnet::SurrogateQNet net) : net_(std::move(net)) {}
  std::string name() const override { return "surrogate-q"; }
  Action act(sim::HighwayWorld& world) const override;

 private:
  qnet::SurrogateQNet net_;
};

class DeepSetPolicy final : public Policy {
 public:
  explicit DeepSetPolicy(qnet::DeepSetQNet net) : net_(std::move(net)) {}
  std::string name() const override { return "deepset-q"; }
  Action act(sim::HighwayWorld& world) const override;

 private:
  qnet::DeepSetQNet net_;
};

struct EvalGrid {
  sim::SimConfig sim;
  sim::DriverMix mix;
  sim::DriverParams agent_driver;
  std::vector<std::size_t> vehicle_counts = {30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90};
  std::size_t scenarios_per_count = 20;
  std::size_t episode_length = 400;  // action steps
  std::size_t warmup_steps = 10;     // agent keeps lane, not scored
  double gamma = 0.99;               // discounted return
  bool safety_enabled = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

// Keys: sim.*, mix.*, agent.* as in scenario files, plus vehicle_counts (comma list),
// scenarios_per_count, episode_length, warmup_steps, gamma, safety_enabled, seed, threads.
void apply_grid_key(EvalGrid& grid, const std::string& key, const std::string& value);
EvalGrid read_grid(const std::filesystem::path& path);

// Scenario seed shared by every policy evaluated on the same grid.
std::uint64_t scenario_seed(std::uint64_t base, std::size_t vehicle_count, std::size_t scenario);

struct ScenarioResult {
  std::size_t vehicle_count = 0;
  std::size_t scenario = 0;
  std::uint64_t seed = 0;
  double mean_reward = 0.0;        // undiscounted, per action step
  double discounted_return = 0.0;
  double mean_speed = 0.0;         // m/s, agent, averaged over action steps
  std::size_t lane_changes = 0;    // executed by the agent
  std::size_t collisions = 0;
  std::size_t overrides = 0;       // agent actions replaced by the safety layer

  friend bool operator==(const ScenarioResult&, const ScenarioResult&) = default;
};

struct EvalReport {
  std::string policy;
  std::vector<ScenarioResult> rows;  // sorted by (vehicle_count, scenario)

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for fewer than two rows
};

struct ReportSummary {
  std::size_t scenarios = 0;
  MeanStd mean_reward;
  MeanStd discounted_return;
  MeanStd mean_speed;
  MeanStd lane_changes;
  std::size_t collisions = 0;
  std::size_t overrides = 0;
};

ScenarioResult run_scenario(const Policy& policy, const EvalGrid& grid, std::size_t vehicle_count,
                            std::size_t scenario);
EvalReport evaluate(const Policy& policy, const EvalGrid& grid);
ReportSummary summarize(const EvalReport& report);

// CSV: policy,vehicle_count,scenario,seed,mean_reward,discounted_return,mean_speed,
//      lane_changes,collisions,overrides
void write_report(std::ostream& os, const EvalReport& report);
EvalReport read_report(std::istream& is);
void save_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(const std::filesystem::path& path);

// Per-scenario values of a numeric report column by name.
std::vector<double> report_column(const EvalReport& report, const std::string& column);

}  // namespace surq::eval
