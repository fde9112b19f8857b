#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapstrat/ga.hpp"
#include "lapstrat/mc.hpp"
#include "lapstrat/sdp.hpp"
#include "lapstrat/synth.hpp"

namespace lapstrat::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Resolved run configuration. Loaded from a key = value text file; every
// key has a documented default (see config_to_string) and the common ones
// can be overridden from the command line.
struct RunConfig {
  // input artifacts; empty paths fall back to this run's synth outputs
  std::string sector_times;
  std::string geometry;
  std::string vehicle_params;
  std::string reference_speed;
  std::string reference_sectors;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;  // mandatory for stochastic stages
  int jobs = 1;
  std::vector<std::string> stages;  // run_stages order; empty = full flow

  // lap cleaning and competitor statistics
  double eps_s = 2.0;
  int min_pts = 5;
  double free_gap_m = 100.0;
  double proximity_m = 10.0;

  // traffic simulation
  int mc_sims = 200;
  double mc_dt = 0.1;
  int mc_horizon_laps = 2;
  double mc_influence_m = 100.0;

  // strategy search
  int ga_population = 400;
  int ga_generations = 25;
  int ego_car = 0;  // 0 picks the fastest cleaned LMP1 entry

  // strategy evaluation and stint planning
  std::size_t baseline_strategy = 0;
  int stint_laps = 5;
  int stint_runs = 20;
  int stint_sims = 0;  // 0 falls back to mc_sims

  synth::SynthConfig synth;  // its seed is overridden by the global seed
};

RunConfig config_from_string(const std::string& text, const std::string& name);
RunConfig load_config(const std::string& path);

// canonical dump of every key, suitable as a starting config file
std::string config_to_string(const RunConfig& cfg);

struct StageResult {
  std::string stage;
  std::vector<std::string> artifacts;  // paths written; the manifest is last
  std::vector<std::string> warnings;
};

StageResult cmd_synth(const RunConfig& cfg);
StageResult cmd_ingest(const RunConfig& cfg);
StageResult cmd_stats(const RunConfig& cfg);
StageResult cmd_optimize(const RunConfig& cfg);
StageResult cmd_simulate(const RunConfig& cfg);
StageResult cmd_evaluate(const RunConfig& cfg);
StageResult cmd_stint(const RunConfig& cfg);

// Runs cfg.stages in pipeline order; an empty list means the full flow,
// with synth included only when no sector-times input is configured.
std::vector<StageResult> run_stages(const RunConfig& cfg);

}  // namespace lapstrat::pipeline
