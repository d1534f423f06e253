// surq: collect | ingest | train | eval | curves | compare
//
// Every subcommand accepts --config FILE with `key = value` lines; a flag named
// --KEY overrides the file. Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "surq/errors.hpp"
#include "surq/eval/evaluate.hpp"
#include "surq/eval/stats.hpp"
#include "surq/highd/ingest.hpp"
#include "surq/io/keyvalue.hpp"
#include "surq/replay/buffer.hpp"
#include "surq/sim/highway.hpp"
#include "surq/train/trainer.hpp"

namespace {

using namespace surq;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

const std::vector<std::string> kSimKeys = {
    "sim.track_length", "sim.lanes",     "sim.sim_dt",         "sim.action_dt",     "sim.sensor_range",
    "sim.accel_max",    "sim.decel_max", "sim.vehicle_length", "sim.min_gap",       "sim.headway",
    "sim.v_desired",    "mix.max_speed_min", "mix.max_speed_max", "mix.eagerness_min", "mix.eagerness_max",
    "mix.cooperation_min", "mix.cooperation_max", "mix.sigma", "mix.lane_change_rate", "agent.max_speed",
    "agent.lane_change_eagerness", "agent.cooperation", "agent.sigma"};

const std::vector<std::string> kCollectKeys = {"agent_lc_rate", "vehicles_min", "vehicles_max", "episode_steps",
                                               "warmup_steps",  "transitions",  "seed"};

const std::vector<std::string> kTrainKeys = {"gamma", "batch_size", "gradient_steps", "learning_rate", "tau",
                                             "seed",  "clipped_double_q", "mask_offroad_actions", "eval_interval",
                                             "metrics_path"};

const std::vector<std::string> kGridKeys = {"vehicle_counts", "scenarios_per_count", "episode_length", "warmup_steps",
                                            "gamma",          "safety_enabled",      "seed",           "threads"};

// Config-file keys, each also exposed as a --KEY flag that takes precedence.
class KeyedOptions {
 public:
  void add(CLI::App& app, const std::vector<std::string>& keys) {
    for (const auto& key : keys) {
      app.add_option("--" + key, flags_[key], "overrides config key '" + key + "'");
    }
  }
  void set_config(CLI::App& app) { app.add_option("--config", config_, "key = value file")->check(CLI::ExistingFile); }

  template <class Apply>
  void apply(Apply&& apply_key) const {
    if (!config_.empty()) {
      for (const auto& [key, value] : io::read_key_values(config_)) apply_key(key, value);
    }
    for (const auto& [key, value] : flags_) {
      if (!value.empty()) apply_key(key, value);
    }
  }

 private:
  std::string config_;
  std::map<std::string, std::string> flags_;
};

void print_stats_header() {
  std::cout << "recording_id,retained,vehicles,lane_changes,chains,dropped_chains,transitions\n";
}

void print_stats(const highd::RecordingStats& s) {
  std::cout << s.recording_id << ',' << (s.retained ? 1 : 0) << ',' << s.vehicles << ',' << s.lane_changes << ','
            << s.chains << ',' << s.dropped_chains << ',' << s.transitions << '\n';
}

void print_summary(const eval::EvalReport& report) {
  const auto s = eval::summarize(report);
  std::fprintf(stderr,
               "%s: %zu scenarios, mean speed %.3f +- %.3f m/s, lane changes/episode %.3f +- %.3f, "
               "mean reward %.4f, collisions %zu, overrides %zu\n",
               report.policy.c_str(), s.scenarios, s.mean_speed.mean, s.mean_speed.stddev, s.lane_changes.mean,
               s.lane_changes.stddev, s.mean_reward.mean, s.collisions, s.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate Q-learning toolkit: simulate, ingest, train, evaluate"};
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "simulate and record a replay buffer");
  KeyedOptions collect_keys;
  collect_keys.set_config(*collect);
  collect_keys.add(*collect, kSimKeys);
  collect_keys.add(*collect, kCollectKeys);
  std::string collect_out, events_out;
  collect->add_option("--out", collect_out, "replay buffer file")->required();
  collect->add_option("--events", events_out, "event log CSV");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "highD recordings to a replay buffer");
  std::string ingest_dir, tracks_path, meta_path, ingest_out;
  highd::ExtractConfig extract;
  auto* dir_opt = ingest->add_option("--dir", ingest_dir, "directory of NN_tracks.csv / NN_recordingMeta.csv");
  auto* tracks_opt = ingest->add_option("--tracks", tracks_path, "single tracks CSV")->excludes(dir_opt);
  ingest->add_option("--meta", meta_path, "recording meta CSV for --tracks")->needs(tracks_opt);
  ingest->add_option("--out", ingest_out, "replay buffer file")->required();
  ingest->add_option("--sensor_range", extract.sensor_range, "m")->capture_default_str();
  ingest->add_option("--v_desired", extract.v_desired, "m/s")->capture_default_str();
  ingest->add_option("--action_dt", extract.action_dt, "s between snapshots")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train on a replay buffer");
  KeyedOptions train_keys;
  train_keys.set_config(*train);
  train_keys.add(*train, kTrainKeys);
  std::string algo = "surrogate", train_buffer, checkpoint_out;
  train->add_option("--algo", algo, "surrogate | deepset")->check(CLI::IsMember({"surrogate", "deepset"}));
  train->add_option("--buffer", train_buffer, "replay buffer file")->required();
  train->add_option("--out", checkpoint_out, "checkpoint file")->required();

  // eval
  auto* evaluate = app.add_subcommand("eval", "evaluate a policy on a scenario grid");
  KeyedOptions grid_keys;
  grid_keys.set_config(*evaluate);
  grid_keys.add(*evaluate, kSimKeys);
  grid_keys.add(*evaluate, kGridKeys);
  std::string policy_name = "checkpoint", checkpoint_in, report_out;
  evaluate->add_option("--policy", policy_name, "checkpoint | rule-based | keep-lane")
      ->check(CLI::IsMember({"checkpoint", "rule-based", "keep-lane"}));
  evaluate->add_option("--checkpoint", checkpoint_in, "trained checkpoint (policy = checkpoint)");
  evaluate->add_option("--out", report_out, "report CSV")->required();

  // curves
  auto* curves = app.add_subcommand("curves", "cumulative lane changes per driving hour");
  std::string curves_buffer, curves_out;
  curves->add_option("--buffer", curves_buffer, "replay buffer file")->required();
  curves->add_option("--out", curves_out, "curve CSV")->required();

  // compare
  auto* compare = app.add_subcommand("compare", "Welch's t-test between two reports");
  std::string report_a, report_b, column = "mean_speed";
  compare->add_option("a", report_a, "first report CSV")->required();
  compare->add_option("b", report_b, "second report CSV")->required();
  compare->add_option("--column", column, "report column")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*collect) {
      sim::CollectConfig cfg;
      collect_keys.apply([&](const std::string& k, const std::string& v) { sim::apply_scenario_key(cfg, k, v); });
      std::ofstream events;
      if (!events_out.empty()) {
        events.open(events_out);
        if (!events) throw std::runtime_error("cannot open " + events_out);
        sim::write_event_header(events);
      }
      const auto buffer = sim::collect_dataset(cfg, [&](const sim::SimEvent& e) {
        if (events.is_open()) sim::write_event(events, e);
      });
      replay::save_buffer(collect_out, buffer);
      std::fprintf(stderr, "collected %zu transitions -> %s\n", buffer.size(), collect_out.c_str());
    } else if (*ingest) {
      std::vector<std::pair<std::filesystem::path, std::filesystem::path>> recordings;
      if (!ingest_dir.empty()) {
        recordings = highd::find_recordings(ingest_dir);
      } else if (!tracks_path.empty()) {
        if (meta_path.empty()) {
          const auto name = std::filesystem::path(tracks_path).filename().string();
          const auto stem = name.substr(0, name.find("_tracks"));
          meta_path = (std::filesystem::path(tracks_path).parent_path() / (stem + "_recordingMeta.csv")).string();
        }
        recordings.emplace_back(tracks_path, meta_path);
      } else {
        throw CLI::ValidationError("ingest", "one of --dir or --tracks is required");
      }
      const replay::FeatureScale scale{extract.sensor_range, extract.v_desired, highd::kRequiredLanes};
      replay::ReplayBuffer merged(replay::BufferHeader{scale, extract.action_dt});
      print_stats_header();
      for (const auto& [tracks, meta] : recordings) {
        const auto result = highd::ingest_recording(tracks, meta, extract);
        for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
        print_stats(result.stats);
        merged.append(result.buffer);
      }
      replay::save_buffer(ingest_out, merged);
      std::fprintf(stderr, "ingested %zu recordings, %zu transitions -> %s\n", recordings.size(), merged.size(),
                   ingest_out.c_str());
    } else if (*train) {
      train::TrainConfig cfg;
      train_keys.apply([&](const std::string& k, const std::string& v) { train::apply_train_key(cfg, k, v); });
      cfg.checkpoint_path = checkpoint_out;
      const auto buffer = replay::load_buffer(train_buffer);
      std::fprintf(stderr, "training %s for %zu steps on %zu transitions\n", algo.c_str(), cfg.gradient_steps,
                   buffer.size());
      const auto& metrics = algo == "surrogate" ? train::train(cfg, buffer).metrics
                                                : train::train_deepset_baseline(cfg, buffer).metrics;
      if (!metrics.empty()) {
        std::fprintf(stderr, "step %llu loss %.6g mean Q %.6g -> %s\n",
                     static_cast<unsigned long long>(metrics.back().step), metrics.back().loss, metrics.back().mean_q,
                     checkpoint_out.c_str());
      }
    } else if (*evaluate) {
      eval::EvalGrid grid;
      grid_keys.apply([&](const std::string& k, const std::string& v) { eval::apply_grid_key(grid, k, v); });
      std::unique_ptr<eval::Policy> policy;
      if (policy_name == "keep-lane") {
        policy = std::make_unique<eval::KeepLanePolicy>();
      } else if (policy_name == "rule-based") {
        policy = std::make_unique<eval::RuleBasedPolicy>();
      } else {
        if (checkpoint_in.empty()) throw CLI::ValidationError("eval", "--checkpoint is required for policy checkpoint");
        auto ck = train::load_checkpoint(checkpoint_in);
        if (ck.algorithm == train::Algorithm::surrogate) {
          policy = std::make_unique<eval::SurrogateQPolicy>(std::move(ck.surrogate));
        } else {
          policy = std::make_unique<eval::DeepSetPolicy>(std::move(ck.deepset));
        }
      }
      const auto report = eval::evaluate(*policy, grid);
      eval::save_report(report_out, report);
      print_summary(report);
    } else if (*curves) {
      const auto buffer = replay::load_buffer(curves_buffer);
      const auto curve = eval::cumulative_lane_change_curve(buffer);
      std::ofstream os(curves_out);
      if (!os) throw std::runtime_error("cannot open " + curves_out);
      eval::write_curve(os, curve);
    } else if (*compare) {
      const auto a = eval::load_report(report_a);
      const auto b = eval::load_report(report_b);
      if (a.rows.size() != b.rows.size() ||
          !std::equal(a.rows.begin(), a.rows.end(), b.rows.begin(),
                      [](const auto& x, const auto& y) { return x.seed == y.seed; })) {
        throw DataError("reports were not evaluated on the same scenarios");
      }
      const auto r = eval::welch_t_test(eval::report_column(a, column), eval::report_column(b, column));
      std::printf("column,policy_a,policy_b,t,df,p\n%s,%s,%s,%.17g,%.17g,%.17g\n", column.c_str(), a.policy.c_str(),
                  b.policy.c_str(), r.t, r.df, r.p);
    }
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const eval::DegenerateSampleError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
