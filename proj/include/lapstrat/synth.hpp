#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapstrat/ingest.hpp"
#include "lapstrat/stats.hpp"
#include "lapstrat/track.hpp"
#include "lapstrat/vehicle.hpp"

namespace lapstrat::synth {

struct SynthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Desk-scale race data generator: per-car sector times drawn around class
// paces, planted cleaning rejections, and an optional scripted two-car
// catch-and-pass storyline with a known per-section pass frequency.
struct SynthConfig {
  std::string preset = "oval-1km";
  double delta_s = 2.0;
  std::array<int, 4> cars_per_class{2, 2, 2, 2};  // LMP1, LMP2, LMGTE Pro, LMGTE Am
  int laps = 40;
  double sector_noise_s = 0.12;
  int outliers_per_car = 2;
  int stop_laps_per_car = 1;
  std::uint64_t seed = 1;

  // when > 0, adds cars 7 (LMP1) and 44 (LMGTE Am) running the scripted
  // routine: this many proximity episodes at planted_section, a fraction
  // planted_pass_rate of them ending in a pass inside that section
  int planted_episodes = 0;
  double planted_pass_rate = 0.5;
  int planted_section = 5;
};

struct CarTruth {
  int car_number = 0;
  ingest::CarClass car_class = ingest::CarClass::LMP1;
  std::array<double, 3> base_times{};  // per-sector centers, s
  std::vector<int> outlier_laps;
  std::vector<int> stop_laps;
};

struct PlantedTruth {
  int follower = 0;
  int leader = 0;
  int section = 0;
  long episodes = 0;
  long passes = 0;
};

struct SynthDataset {
  track::TrackGeometry geometry;
  vehicle::VehicleParams params;
  stats::ReferenceProfile reference;
  std::vector<ingest::SectorTimeRecord> records;  // ordered by race time
  std::vector<CarTruth> cars;
  std::optional<PlantedTruth> planted;
};

SynthDataset generate_synthetic(const SynthConfig& cfg);

std::string truth_to_json(const SynthDataset& ds);

// Writes sector_times.csv, geometry.csv, vehicle_params.csv,
// reference_speed.csv, reference_sectors.csv and truth.json into dir,
// creating it if missing. Returns the sector-times path.
std::string write_dataset(const SynthDataset& ds, const std::string& dir);

}  // namespace lapstrat::synth
