#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lapstrat/ingest.hpp"
#include "lapstrat/track.hpp"
#include "lapstrat/vehicle.hpp"

namespace lapstrat::stats {

// One lap of the reference car: speed samples on the uniform grid, first
// sample at s=0 and last at s=length (the same physical point), plus the
// reference sector times the scaling operation divides by.
struct ReferenceProfile {
  std::vector<double> s;
  std::vector<double> v;
  std::array<double, 3> sector_times{};

  // speeds positive, positions uniform from 0 to track length, and the
  // lethargy integral of each sector within 1% of its stored time
  void validate(const track::TrackGeometry& g) const;
};

ReferenceProfile profile_from_lap(const vehicle::LapResult& lap, const track::TrackGeometry& g);
ReferenceProfile load_profile(const std::string& samples_path, const std::string& sectors_path);
void save_profile(const ReferenceProfile& p, const std::string& samples_path,
                  const std::string& sectors_path);

// Per-sector linear speed scaling: within sector i the output speed is
// ref.v * ref.sector_times[i] / times[i], so a larger sector time yields a
// proportionally lower speed. Output sampling equals the reference's.
std::vector<double> reconstruct_speed(const ReferenceProfile& ref,
                                      const std::array<double, 3>& times,
                                      const track::TrackGeometry& g);

// Trapezoidal lethargy integration of a sampled profile, split by sector.
// Boundary samples are re-evaluated with the owning sector's scale factor,
// so scaling one sector time scales exactly one output component.
std::array<double, 3> lethargy_sector_times(const ReferenceProfile& ref,
                                            const std::array<double, 3>& times,
                                            const track::TrackGeometry& g);

// Arc position of one car sampled on the common race clock. Sample k holds
// the cumulative distance (laps unrolled, not wrapped) at time t0 + k*dt;
// NaN marks times where the car has no retained coverage.
struct PositionTrace {
  int car_number = 0;
  ingest::CarClass car_class = ingest::CarClass::LMP1;
  double t0 = 0.0;
  double dt = 0.1;
  std::vector<double> pos;

  bool valid_at(std::size_t k) const;
  // linear interpolation between samples; NaN outside covered spans
  double position_at(double t) const;
  // index of the first sample at or after t (validity not checked)
  std::size_t index_of(double t) const;
};

// Chains per-lap speed reconstruction over each car's retained laps and
// samples the resulting motion on a shared clock starting at t=0. Per-lap
// interval times are normalized so each sector is traversed in exactly the
// recorded sector time, anchored at the recorded elapsed race time.
std::vector<PositionTrace> build_position_traces(
    const std::vector<ingest::SectorTimeRecord>& retained, const ReferenceProfile& ref,
    const track::TrackGeometry& g, double dt = 0.1);

struct FreeSectorDistribution {
  int car_number = 0;
  std::array<std::vector<double>, 3> times;  // free traversal durations per sector
};

struct FreeSectorResult {
  std::vector<FreeSectorDistribution> cars;
  std::vector<std::string> flags;  // cars with an empty sector multiset
};

// A sector traversal is free when, at every clock sample inside it, the
// nearest vehicle ahead (along the arc, modulo lap) is at least
// gap_threshold meters away.
FreeSectorResult extract_free_sector_times(const std::vector<PositionTrace>& traces,
                                           const track::TrackGeometry& g,
                                           double gap_threshold = 100.0);

struct OvertakeCounts {
  long xi = 0;   // completed passes
  long phi = 0;  // proximity opportunities
};

struct OvertakingProbabilityTable {
  // key: follower class, leader class, 1-based section
  std::map<std::tuple<ingest::CarClass, ingest::CarClass, int>, OvertakeCounts> counts;

  // xi/phi, or empty when the pair/section was never observed (phi = 0)
  std::optional<double> probability(ingest::CarClass follower, ingest::CarClass leader,
                                    int section) const;
  std::string to_string() const;
};

OvertakingProbabilityTable parse_probability_table(const std::string& text,
                                                   const std::string& name);

// Counts one opportunity per continuous proximity episode (follower within
// proximity_threshold behind leader) per section the follower visits during
// the episode, at most once per (follower, leader, lap, section). A pass is
// credited to the section containing the crossing point.
OvertakingProbabilityTable compute_overtaking_probabilities(
    const std::vector<PositionTrace>& traces, const track::TrackGeometry& g,
    double proximity_threshold = 10.0);

}  // namespace lapstrat::stats
