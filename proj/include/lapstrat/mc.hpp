#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapstrat/ingest.hpp"
#include "lapstrat/stats.hpp"
#include "lapstrat/track.hpp"

namespace lapstrat::mc {

struct McError : std::runtime_error {
  explicit McError(const std::string& what) : std::runtime_error(what) {}
};

// Snapshot of the field at one instant. Positions are cumulative arc
// lengths (they keep growing across laps); `lap` is informational and
// derived from the position when left at zero.
struct CompetitorState {
  int car_number = 0;
  ingest::CarClass car_class = ingest::CarClass::LMP1;
  double position_m = 0.0;
  int lap = 0;
};

struct RaceState {
  double t = 0.0;
  std::vector<CompetitorState> cars;

  // distinct car numbers, distinct positions
  void validate() const;
};

enum class EncounterOutcome { Overtake, Follow };

// One decision of the interaction model. `s` is the wrapped arc position
// of the section boundary where the draw happened; `section` is the
// section being entered (the one the probability was looked up for).
struct EncounterEvent {
  double t = 0.0;
  double s = 0.0;
  int section = 0;
  int follower = 0;
  int leader = 0;
  EncounterOutcome outcome = EncounterOutcome::Follow;
  double drawn_u = 0.0;
  double p_used = 0.0;
};

struct SimTrace {
  double t0 = 0.0;
  double dt = 0.1;
  std::uint64_t seed = 0;
  std::vector<int> car_numbers;
  std::vector<ingest::CarClass> car_classes;
  // positions[i][k] = cumulative position of car i at t0 + k*dt
  std::vector<std::vector<double>> positions;
  std::vector<EncounterEvent> events;
  std::vector<std::string> warnings;

  std::size_t car_index(int car_number) const;
  std::size_t n_steps() const { return positions.empty() ? 0 : positions.front().size(); }
};

struct SimOptions {
  int horizon_laps = 2;
  double dt = 0.1;
  // a trailing car reacts to its leader once it is this close
  double influence_m = 100.0;
  // minimum gap a follower keeps behind a car it has not passed
  double follow_gap_m = 10.0;
  // gap granted ahead of the old leader after a successful pass
  double swap_gap_m = 10.0;
};

// One independent with-replacement draw per sector. Throws when a sector
// multiset is empty, naming the car and sector.
std::array<double, 3> sample_free_lap(const stats::FreeSectorDistribution& competitor,
                                      std::mt19937_64& rng);

// Advances every competitor along its own resampled free profile on a
// shared clock until all of them have covered `horizon_laps` laps from
// their starting positions. Interactions use on-track (wrapped) distance,
// so lapping encounters between classes count. A car closes on the one
// ahead at its own pace but is never allowed nearer than the follow gap.
// Being held up there opens an episode that lasts until the car passes or
// falls out of influence range; while it is open, every section boundary
// the car crosses draws against the overtaking table: a success places it
// `swap_gap_m` ahead of the old leader, a failure leaves it pinned behind
// at the leader's pace for that section. Cars never swap on-track order
// without a logged Overtake event. Missing table entries count as zero
// probability and add one warning per missing key.
SimTrace simulate(const RaceState& initial, const std::vector<stats::FreeSectorDistribution>& dists,
                  const stats::OvertakingProbabilityTable& table,
                  const stats::ReferenceProfile& ref, const track::TrackGeometry& g,
                  std::uint64_t seed, const SimOptions& opt = {});

// n_sims independent traces, trace i seeded seed ^ i; output order is the
// index order no matter how the work is scheduled.
std::vector<SimTrace> run_batch(const RaceState& initial,
                                const std::vector<stats::FreeSectorDistribution>& dists,
                                const stats::OvertakingProbabilityTable& table,
                                const stats::ReferenceProfile& ref, const track::TrackGeometry& g,
                                int n_sims, std::uint64_t base_seed, const SimOptions& opt = {},
                                int jobs = 1);

// "t,car,s" rows, one per car per time sample
std::string positions_csv(const SimTrace& trace);
// one row per logged decision
std::string events_csv(const SimTrace& trace);
SimTrace trace_from_csv(const std::string& positions_text, const std::string& events_text,
                        const std::string& name);

}  // namespace lapstrat::mc
