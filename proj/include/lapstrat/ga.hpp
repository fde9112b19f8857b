#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lapstrat/track.hpp"
#include "lapstrat/vehicle.hpp"

namespace lapstrat::ga {

// per-region energy allowances, integer-gridded: kJ of electrical energy and
// grams of fuel
struct Genome {
  std::vector<int> e_el_kj;
  std::vector<int> fuel_g;

  bool operator==(const Genome&) const = default;
};

inline constexpr int kEElGeneMaxKj = 2300;
inline constexpr int kFuelGeneMaxG = 1381;

struct KersBan {
  int straight_id = 1;  // 1-based, in lap order
  double from_m = 0.0;  // relative to the straight's start
  double to_m = 100.0;
};

struct StrategyConstraint {
  std::string name = "No constraints";
  std::vector<KersBan> bans;
};

// grid-point electric ban mask implied by the constraint
std::vector<std::uint8_t> ban_mask(const StrategyConstraint& c, const track::TrackGeometry& g,
                                   std::vector<std::string>* warnings = nullptr);

vehicle::StrategyBudgets decode(const Genome& genome, const StrategyConstraint& c,
                                const track::TrackGeometry& g);

struct FitnessResult {
  double value = 0.0;  // lap time plus penalties, seconds
  double lap_time = 0.0;
  bool feasible = false;  // regulation-compliant per the simulation ledger
  bool simulated = false;
};

FitnessResult fitness(const Genome& genome, const StrategyConstraint& c,
                      const vehicle::PreparedTrack& trk,
                      const vehicle::RegulationLimits& reg = {});

struct GaConfig {
  int population = 2000;
  int generations = 60;
  double crossover_rate = 0.9;
  double mutation_rate = 1.0 / 16.0;
  int tournament = 4;
  int elitism = 20;
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct EnergyStrategy {
  std::string name;
  Genome genome;
  StrategyConstraint constraints;
  double lap_time = 0.0;
  double fitness = 0.0;
  vehicle::LapResult lap;
  std::vector<std::string> warnings;
};

struct GaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

EnergyStrategy run_ga(const GaConfig& config, const StrategyConstraint& c,
                      const vehicle::PreparedTrack& trk,
                      const vehicle::RegulationLimits& reg = {},
                      const std::optional<Genome>& hot_start = std::nullopt);

struct StrategySet {
  std::vector<EnergyStrategy> strategies;  // ascending lap time
  std::vector<std::string> warnings;
};

StrategySet generate_strategy_set(const std::vector<StrategyConstraint>& specs,
                                  const GaConfig& config, const vehicle::PreparedTrack& trk,
                                  const vehicle::RegulationLimits& reg = {});

// the stock 15-entry constraint list used by the demo pipeline; ban targets
// wrap around the straights the geometry actually has
std::vector<StrategyConstraint> table_strategy_specs(const track::TrackGeometry& g);

// genome built from a reference lap's per-region consumption
Genome hot_start_from_lap(const vehicle::LapResult& lap, const track::TrackGeometry& g);

std::string strategy_to_string(const EnergyStrategy& s);
EnergyStrategy strategy_from_string(const std::string& text, const std::string& name);
std::string strategy_index_table(const std::vector<EnergyStrategy>& set);

}  // namespace lapstrat::ga
