#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapstrat/ga.hpp"
#include "lapstrat/mc.hpp"
#include "lapstrat/stats.hpp"
#include "lapstrat/vehicle.hpp"

namespace lapstrat::sdp {

struct SdpError : std::runtime_error {
  explicit SdpError(const std::string& what) : std::runtime_error(what) {}
};

// One node of a probability/cost tree. `branch_prob` is the probability of
// the edge into this node and `branch_cost` the time loss collected on it;
// the value recursion is f = branch_cost + alpha * sum(p_child * f_child).
// `state` counts outstanding passes as a non-positive number: a successful
// pass raises it by one, zero means none are left.
struct DecisionNode {
  int stage = 0;
  int state = 0;
  double branch_prob = 1.0;
  double branch_cost = 0.0;
  std::vector<DecisionNode> children;
};

// Expected time loss at the root. Throws when a node's children carry
// probabilities that do not sum to one (tolerance 1e-9).
double backward_pass(const DecisionNode& root, double alpha = 1.0);

struct TreeOptions {
  // catch distance that opens an encounter, and discount of the recursion
  double proximity_m = 10.0;
  double alpha = 1.0;
  // hard cap on tree nodes, guards against pathological scenarios
  std::size_t max_nodes = 200000;
};

struct BuildResult {
  DecisionNode root;
  std::vector<std::string> warnings;
};

// Lays the candidate lap over one traffic forecast. Walking sections in
// order on the lap's own timeline: when the lap would close to within
// proximity of a slower competitor, the tree branches on the pass
// probability for that section; the follow branch carries the time lost
// pinned behind until the section ends and retries at the next boundary,
// while the branch for an eventual pass carries the time lost
// re-accelerating onto the candidate profile. Delays accumulate along
// follow branches and shift every later catch test.
BuildResult build_tree(const vehicle::LapResult& ego, ingest::CarClass ego_class,
                       const mc::SimTrace& trace, const stats::OvertakingProbabilityTable& table,
                       const vehicle::PreparedTrack& trk, const TreeOptions& opt = {});

struct StrategyEvaluation {
  std::string name;
  double lap_time = 0.0;  // traffic-free
  double mean_f0 = 0.0;
  double win_rate = 0.0;  // fraction of traces where this strategy is best
  std::vector<double> per_trace_f0;
};

struct EvaluationResult {
  std::vector<StrategyEvaluation> evaluations;  // input order
  std::size_t best_index = 0;
  std::vector<std::string> warnings;
};

// Scores every strategy against every trace and averages; the winner is
// the lowest mean expected loss, ties broken by the faster traffic-free
// lap. A strategy failing on some traces is scored on the rest with a
// coverage warning.
EvaluationResult evaluate_strategies(const std::vector<ga::EnergyStrategy>& strategies,
                                     const std::vector<mc::SimTrace>& traces,
                                     const stats::OvertakingProbabilityTable& table,
                                     const vehicle::PreparedTrack& trk,
                                     ingest::CarClass ego_class = ingest::CarClass::LMP1,
                                     const TreeOptions& opt = {}, int jobs = 1);

// "strategy,lap_time_s,f0_s,win_rate" rows in input order
std::string evaluation_table(const EvaluationResult& result);

// indented dump of a probability/cost tree for inspection
std::string tree_to_string(const DecisionNode& root);

struct StintConfig {
  int n_laps = 5;
  int n_sims = 200;
  // repeated end-to-end runs backing the confidence interval
  int n_runs = 20;
  std::uint64_t seed = 1;
  std::size_t baseline_index = 0;
  int jobs = 1;
  mc::SimOptions mc_opt;
  TreeOptions tree_opt;
};

struct StintLap {
  int lap = 0;
  std::string chosen;
  double lap_time = 0.0;     // chosen strategy, traffic-free
  double expected_f0 = 0.0;  // chosen strategy, mean over the lap's batch
  double gain_vs_baseline = 0.0;
  double cumulative_gain = 0.0;
};

struct StintReport {
  std::vector<StintLap> laps;  // first run, lap by lap
  double total_gain = 0.0;     // first run
  double mean_gain = 0.0;      // across runs
  double ci_low = 0.0;         // 90% interval across runs
  double ci_high = 0.0;
  std::vector<double> run_gains;
  std::vector<std::string> warnings;
};

// Lap-by-lap strategy picking over a stint: each lap forecasts traffic
// from the current grid, picks the best strategy, advances the clock by
// that strategy's expected lap duration and every competitor to its mean
// forecast position. Gains are expected total-time differences against
// the baseline strategy evaluated on the same forecasts. The whole stint
// is repeated n_runs times on distinct seeds; the interval is the 5th to
// 95th percentile of the cumulative gains.
StintReport evaluate_stint(const std::vector<ga::EnergyStrategy>& strategies,
                           const mc::RaceState& grid,
                           const std::vector<stats::FreeSectorDistribution>& dists,
                           const stats::OvertakingProbabilityTable& table,
                           const stats::ReferenceProfile& ref, const vehicle::PreparedTrack& trk,
                           ingest::CarClass ego_class, const StintConfig& cfg);

// per-lap rows plus a summary row with the interval
std::string stint_csv(const StintReport& report);

}  // namespace lapstrat::sdp
