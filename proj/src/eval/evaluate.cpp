#include "surq/eval/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "surq/errors.hpp"
#include "surq/io/keyvalue.hpp"

namespace surq::eval {

namespace {

constexpr const char* kReportHeader =
    "policy,vehicle_count,scenario,seed,mean_reward,discounted_return,mean_speed,lane_changes,collisions,overrides";

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_real(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used == s.size()) return x;
  } catch (const std::exception&) {
  }
  throw FormatError("report line " + std::to_string(line) + ": bad number '" + s + "'");
}

std::uint64_t to_count(const std::string& s, std::size_t line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("report line " + std::to_string(line) + ": bad count '" + s + "'");
  }
  return std::stoull(s);
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return r;
}

}  // namespace

Action RuleBasedPolicy::act(sim::HighwayWorld& world) const { return sim::drive_rule_based(world, world.agent_id); }

Action SurrogateQPolicy::act(sim::HighwayWorld& world) const {
  const auto scene = sim::observe(world, world.agent_id);
  const auto rows = replay::feature_rows(scene, sim::feature_scale(world));
  return qnet::greedy_action(net_, rows, lane_mask(world.agent().lane, world.config.lanes));
}

Action DeepSetPolicy::act(sim::HighwayWorld& world) const {
  const auto scene = sim::observe(world, world.agent_id);
  return qnet::deepset_greedy_action(net_, replay::deepset_input(scene, sim::feature_scale(world)),
                                     lane_mask(world.agent().lane, world.config.lanes));
}

void EvalGrid::validate() const {
  sim.validate();
  mix.validate();
  agent_driver.validate();
  if (vehicle_counts.empty() || scenarios_per_count < 1) throw std::invalid_argument("empty evaluation grid");
  if (episode_length < 1) throw std::invalid_argument("episode_length must be >= 1");
  if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("gamma must be in [0, 1]");
}

void apply_grid_key(EvalGrid& g, const std::string& key, const std::string& value) {
  if (key.starts_with("sim.") || key.starts_with("mix.") || key.starts_with("agent.")) {
    sim::CollectConfig c;
    c.sim = g.sim;
    c.mix = g.mix;
    c.agent_driver = g.agent_driver;
    sim::apply_scenario_key(c, key, value);
    g.sim = c.sim;
    g.mix = c.mix;
    g.agent_driver = c.agent_driver;
  } else if (key == "vehicle_counts") {
    g.vehicle_counts.clear();
    std::istringstream ss(value);
    for (std::string item; std::getline(ss, item, ',');) {
      const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
      if (b == std::string::npos) throw FormatError("key 'vehicle_counts': empty entry");
      g.vehicle_counts.push_back(io::parse_count(key, item.substr(b, e - b + 1)));
    }
  } else if (key == "scenarios_per_count") {
    g.scenarios_per_count = io::parse_count(key, value);
  } else if (key == "episode_length") {
    g.episode_length = io::parse_count(key, value);
  } else if (key == "warmup_steps") {
    g.warmup_steps = io::parse_count(key, value);
  } else if (key == "gamma") {
    g.gamma = io::parse_real(key, value);
  } else if (key == "safety_enabled") {
    g.safety_enabled = io::parse_flag(key, value);
  } else if (key == "seed") {
    g.seed = io::parse_count(key, value);
  } else if (key == "threads") {
    g.threads = io::parse_count(key, value);
  } else {
    throw FormatError("unknown evaluation key '" + key + "'");
  }
}

EvalGrid read_grid(const std::filesystem::path& path) {
  EvalGrid g;
  for (const auto& [key, value] : io::read_key_values(path)) apply_grid_key(g, key, value);
  return g;
}

std::uint64_t scenario_seed(std::uint64_t base, std::size_t vehicle_count, std::size_t scenario) {
  return mix_seed(mix_seed(base, vehicle_count), scenario);
}

ScenarioResult run_scenario(const Policy& policy, const EvalGrid& grid, std::size_t vehicle_count,
                            std::size_t scenario) {
  ScenarioResult r;
  r.vehicle_count = vehicle_count;
  r.scenario = scenario;
  r.seed = scenario_seed(grid.seed, vehicle_count, scenario);
  auto world = sim::spawn_world(grid.sim, vehicle_count, grid.mix, grid.agent_driver, r.seed);
  world.safety_enabled = grid.safety_enabled;
  const double vd = world.v_desired();
  for (std::size_t k = 0; k < grid.warmup_steps; ++k) sim::step(world, Action::keep);

  double reward_sum = 0.0, speed_sum = 0.0, discount = 1.0;
  for (std::size_t k = 0; k < grid.episode_length; ++k) {
    const int lane_before = world.agent().lane;
    const auto events = sim::step(world, policy.act(world));
    for (const auto& e : events) {
      if (e.kind == sim::EventKind::collision) ++r.collisions;
      if (e.vehicle_id != world.agent_id) continue;
      if (e.kind == sim::EventKind::unsafe_override) ++r.overrides;
    }
    const auto& agent = world.agent();
    const Action executed = replay::infer_action(lane_before, agent.lane).value_or(Action::keep);
    if (is_lane_change(executed)) ++r.lane_changes;
    const double reward = replay::label_reward(executed, agent.speed, vd);
    reward_sum += reward;
    r.discounted_return += discount * reward;
    discount *= grid.gamma;
    speed_sum += agent.speed;
  }
  const auto n = static_cast<double>(grid.episode_length);
  r.mean_reward = reward_sum / n;
  r.mean_speed = speed_sum / n;
  return r;
}

EvalReport evaluate(const Policy& policy, const EvalGrid& grid) {
  grid.validate();
  std::vector<std::pair<std::size_t, std::size_t>> keys;
  auto counts = grid.vehicle_counts;
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  for (auto c : counts) {
    for (std::size_t s = 0; s < grid.scenarios_per_count; ++s) keys.emplace_back(c, s);
  }

  EvalReport report;
  report.policy = policy.name();
  report.rows.resize(keys.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < keys.size();) {
      try {
        report.rows[i] = run_scenario(policy, grid, keys[i].first, keys[i].second);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(grid.threads, 1, keys.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

ReportSummary summarize(const EvalReport& report) {
  ReportSummary s;
  s.scenarios = report.rows.size();
  s.mean_reward = mean_std(report_column(report, "mean_reward"));
  s.discounted_return = mean_std(report_column(report, "discounted_return"));
  s.mean_speed = mean_std(report_column(report, "mean_speed"));
  s.lane_changes = mean_std(report_column(report, "lane_changes"));
  for (const auto& r : report.rows) {
    s.collisions += r.collisions;
    s.overrides += r.overrides;
  }
  return s;
}

std::vector<double> report_column(const EvalReport& report, const std::string& column) {
  std::vector<double> out;
  out.reserve(report.rows.size());
  for (const auto& r : report.rows) {
    if (column == "mean_reward") out.push_back(r.mean_reward);
    else if (column == "discounted_return") out.push_back(r.discounted_return);
    else if (column == "mean_speed") out.push_back(r.mean_speed);
    else if (column == "lane_changes") out.push_back(static_cast<double>(r.lane_changes));
    else if (column == "collisions") out.push_back(static_cast<double>(r.collisions));
    else if (column == "overrides") out.push_back(static_cast<double>(r.overrides));
    else throw std::invalid_argument("unknown report column '" + column + "'");
  }
  return out;
}

void write_report(std::ostream& os, const EvalReport& report) {
  if (report.policy.find_first_of(",\n") != std::string::npos) {
    throw std::invalid_argument("policy name must not contain commas or newlines");
  }
  os << kReportHeader << '\n';
  for (const auto& r : report.rows) {
    os << report.policy << ',' << r.vehicle_count << ',' << r.scenario << ',' << r.seed << ','
       << format_real(r.mean_reward) << ',' << format_real(r.discounted_return) << ','
       << format_real(r.mean_speed) << ',' << r.lane_changes << ',' << r.collisions << ',' << r.overrides << '\n';
  }
}

EvalReport read_report(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty report");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kReportHeader) throw FormatError("unexpected report header: " + line);
  EvalReport report;
  bool first = true;
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 10) throw FormatError("report line " + std::to_string(n) + ": expected 10 fields");
    if (first) {
      report.policy = f[0];
      first = false;
    } else if (f[0] != report.policy) {
      throw FormatError("report line " + std::to_string(n) + ": mixed policies");
    }
    ScenarioResult r;
    r.vehicle_count = to_count(f[1], n);
    r.scenario = to_count(f[2], n);
    r.seed = to_count(f[3], n);
    r.mean_reward = to_real(f[4], n);
    r.discounted_return = to_real(f[5], n);
    r.mean_speed = to_real(f[6], n);
    r.lane_changes = to_count(f[7], n);
    r.collisions = to_count(f[8], n);
    r.overrides = to_count(f[9], n);
    report.rows.push_back(r);
  }
  return report;
}

void save_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_report(os, report);
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open report " + path.string());
  return read_report(is);
}

}  // namespace surq::eval
