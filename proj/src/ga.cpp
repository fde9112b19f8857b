#include "lapstrat/ga.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "lapstrat/common.hpp"

namespace lapstrat::ga {

namespace {

using nlohmann::json;

void check_genome(const Genome& g, const track::TrackGeometry& geom) {
  auto m = static_cast<std::size_t>(geom.n_regions);
  if (g.e_el_kj.size() != m || g.fuel_g.size() != m)
    throw std::invalid_argument("genome has " + std::to_string(g.e_el_kj.size()) + "+" +
                                std::to_string(g.fuel_g.size()) + " genes, track has " +
                                std::to_string(m) + " regions");
  for (int v : g.e_el_kj)
    if (v < 0 || v > kEElGeneMaxKj) throw std::invalid_argument("electric gene out of range");
  for (int v : g.fuel_g)
    if (v < 0 || v > kFuelGeneMaxG) throw std::invalid_argument("fuel gene out of range");
}

double genome_over_units(const Genome& g, const vehicle::RegulationLimits& reg) {
  long el = 0, fuel = 0;
  for (int v : g.e_el_kj) el += v;
  for (int v : g.fuel_g) fuel += v;
  double over = std::max(0.0, static_cast<double>(el) - reg.e_el_used_max_j / 1e3);
  over += std::max(0.0, static_cast<double>(fuel) - reg.fuel_max_kg * 1e3);
  return over;
}

double ledger_over_units(const vehicle::LapResult& lap, const vehicle::RegulationLimits& reg) {
  double over = std::max(0.0, (lap.e_el_used_j - reg.e_el_used_max_j) / 1e3);
  over += std::max(0.0, (lap.fuel_kg - reg.fuel_max_kg) * 1e3);
  over += std::max(0.0, (lap.e_el_used_j - lap.e_el_rec_kers_j - reg.e_rec_hers_j) / 1e3);
  return over;
}

}  // namespace

std::vector<std::uint8_t> ban_mask(const StrategyConstraint& c, const track::TrackGeometry& g,
                                   std::vector<std::string>* warnings) {
  std::vector<std::uint8_t> mask;
  if (c.bans.empty()) return mask;
  mask.assign(g.size(), 0);
  for (const auto& ban : c.bans) {
    if (ban.straight_id < 1 || ban.straight_id > g.n_straights)
      throw std::invalid_argument("ban references straight " + std::to_string(ban.straight_id) +
                                  ", track has " + std::to_string(g.n_straights));
    double len = ban.to_m - ban.from_m;
    if (len < 50.0)
      throw std::invalid_argument("ban on straight " + std::to_string(ban.straight_id) +
                                  " is shorter than 50 m");
    if (len < 100.0 && warnings)
      warnings->push_back("ban on straight " + std::to_string(ban.straight_id) + " covers " +
                          fmt_double(len) + " m, below the intended 100 m minimum");
    double s0 = g.straight_start(ban.straight_id);
    for (std::size_t k = 0; k < g.size(); ++k) {
      double rel = std::fmod(g.points[k].s - s0 + g.length, g.length);
      if (rel >= ban.from_m - 1e-9 && rel < ban.to_m - 1e-9) mask[k] = 1;
    }
  }
  return mask;
}

vehicle::StrategyBudgets decode(const Genome& genome, const StrategyConstraint& c,
                                const track::TrackGeometry& g) {
  check_genome(genome, g);
  vehicle::StrategyBudgets b;
  for (int v : genome.e_el_kj) b.e_el_j.push_back(1e3 * v);
  for (int v : genome.fuel_g) b.fuel_kg.push_back(v / 1e3);
  b.banned_el = ban_mask(c, g, nullptr);
  return b;
}

FitnessResult fitness(const Genome& genome, const StrategyConstraint& c,
                      const vehicle::PreparedTrack& trk, const vehicle::RegulationLimits& reg) {
  FitnessResult r;
  double genome_over = genome_over_units(genome, reg);
  if (genome_over > 0) {
    // obviously infeasible: skip the simulation entirely
    r.value = 1000.0 + 10.0 * genome_over;
    return r;
  }
  vehicle::SimOptions opts;
  opts.integrator = trk.envelope_integrator;
  vehicle::LapResult lap;
  try {
    lap = vehicle::simulate_lap(trk, decode(genome, c, trk.geometry), opts);
  } catch (const vehicle::SimulationError&) {
    r.value = std::numeric_limits<double>::infinity();
    return r;
  }
  r.simulated = true;
  r.lap_time = lap.lap_time;
  double over = ledger_over_units(lap, reg);
  r.feasible = over <= 1e-6;
  r.value = lap.lap_time + (r.feasible ? 0.0 : 1000.0 + 10.0 * over);
  return r;
}

namespace {

struct Evaluator {
  const StrategyConstraint& c;
  const vehicle::PreparedTrack& trk;
  const vehicle::RegulationLimits& reg;
  int jobs;
  std::map<std::pair<std::vector<int>, std::vector<int>>, FitnessResult> memo;

  void evaluate(const std::vector<Genome>& pop, std::vector<FitnessResult>& out) {
    out.resize(pop.size());
    std::vector<std::size_t> fresh;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      auto key = std::make_pair(pop[i].e_el_kj, pop[i].fuel_g);
      auto it = memo.find(key);
      if (it != memo.end())
        out[i] = it->second;
      else
        fresh.push_back(i);
    }
    // deduplicate unevaluated genomes so parallel workers never race on a key
    std::vector<std::size_t> unique;
    std::map<std::pair<std::vector<int>, std::vector<int>>, std::size_t> seen;
    for (auto i : fresh) {
      auto key = std::make_pair(pop[i].e_el_kj, pop[i].fuel_g);
      if (seen.emplace(key, i).second) unique.push_back(i);
    }
    std::vector<FitnessResult> results(unique.size());
    parallel_for(unique.size(), jobs, [&](std::size_t u) {
      results[u] = fitness(pop[unique[u]], c, trk, reg);
    });
    for (std::size_t u = 0; u < unique.size(); ++u) {
      const auto& g = pop[unique[u]];
      memo[{g.e_el_kj, g.fuel_g}] = results[u];
    }
    for (auto i : fresh) out[i] = memo.at({pop[i].e_el_kj, pop[i].fuel_g});
  }
};

}  // namespace

EnergyStrategy run_ga(const GaConfig& config, const StrategyConstraint& c,
                      const vehicle::PreparedTrack& trk, const vehicle::RegulationLimits& reg,
                      const std::optional<Genome>& hot_start) {
  const auto& geom = trk.geometry;
  auto m = static_cast<std::size_t>(geom.n_regions);
  if (config.population < 2) throw std::invalid_argument("population must be at least 2");
  if (config.generations < 1) throw std::invalid_argument("need at least one generation");

  std::vector<std::string> warnings;
  if (config.population < 23 * static_cast<int>(2 * m))
    warnings.push_back("population " + std::to_string(config.population) +
                       " is below 23 genes x " + std::to_string(2 * m) + " = " +
                       std::to_string(46 * m) + " individuals");

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> el_gene(0, kEElGeneMaxKj);
  std::uniform_int_distribution<int> fuel_gene(0, kFuelGeneMaxG);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto scale_to_caps = [&](Genome& g) {
    long el = 0, fuel = 0;
    for (int v : g.e_el_kj) el += v;
    for (int v : g.fuel_g) fuel += v;
    double el_cap = reg.e_el_used_max_j / 1e3, fuel_cap = reg.fuel_max_kg * 1e3;
    if (static_cast<double>(el) > el_cap)
      for (int& v : g.e_el_kj)
        v = static_cast<int>(std::floor(v * el_cap / static_cast<double>(el)));
    if (static_cast<double>(fuel) > fuel_cap)
      for (int& v : g.fuel_g)
        v = static_cast<int>(std::floor(v * fuel_cap / static_cast<double>(fuel)));
  };

  auto pop_n = static_cast<std::size_t>(config.population);
  std::vector<Genome> pop(pop_n);
  for (auto& g : pop) {
    g.e_el_kj.resize(m);
    g.fuel_g.resize(m);
    for (auto& v : g.e_el_kj) v = el_gene(rng);
    for (auto& v : g.fuel_g) v = fuel_gene(rng);
    scale_to_caps(g);
  }
  if (hot_start) {
    check_genome(*hot_start, geom);
    pop[0] = *hot_start;
  }

  Evaluator ev{c, trk, reg, config.jobs, {}};
  std::vector<FitnessResult> fit;
  ev.evaluate(pop, fit);

  Genome best_genome;
  FitnessResult best{};
  bool have_best = false;
  auto consider = [&](const Genome& g, const FitnessResult& f) {
    bool better = !have_best || std::make_pair(!f.feasible, f.value) <
                                    std::make_pair(!best.feasible, best.value);
    if (better) {
      best_genome = g;
      best = f;
      have_best = true;
    }
  };
  for (std::size_t i = 0; i < pop_n; ++i) consider(pop[i], fit[i]);

  auto tournament = [&]() -> std::size_t {
    std::uniform_int_distribution<std::size_t> pick(0, pop_n - 1);
    std::size_t winner = pick(rng);
    for (int t = 1; t < config.tournament; ++t) {
      std::size_t cand = pick(rng);
      if (fit[cand].value < fit[winner].value) winner = cand;
    }
    return winner;
  };

  auto mutate = [&](Genome& g) {
    for (auto& v : g.e_el_kj)
      if (u01(rng) < config.mutation_rate) v = el_gene(rng);
    for (auto& v : g.fuel_g)
      if (u01(rng) < config.mutation_rate) v = fuel_gene(rng);
  };

  for (int gen = 0; gen < config.generations; ++gen) {
    std::vector<std::size_t> order(pop_n);
    for (std::size_t i = 0; i < pop_n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fit[a].value < fit[b].value; });

    std::vector<Genome> next;
    next.reserve(pop_n);
    for (int e = 0; e < config.elitism && next.size() < pop_n; ++e)
      next.push_back(pop[order[static_cast<std::size_t>(e)]]);
    while (next.size() < pop_n) {
      Genome c1 = pop[tournament()];
      Genome c2 = pop[tournament()];
      if (u01(rng) < config.crossover_rate) {
        for (std::size_t j = 0; j < m; ++j) {
          if (u01(rng) < 0.5) std::swap(c1.e_el_kj[j], c2.e_el_kj[j]);
          if (u01(rng) < 0.5) std::swap(c1.fuel_g[j], c2.fuel_g[j]);
        }
      }
      mutate(c1);
      mutate(c2);
      next.push_back(std::move(c1));
      if (next.size() < pop_n) next.push_back(std::move(c2));
    }
    pop = std::move(next);
    ev.evaluate(pop, fit);
    for (std::size_t i = 0; i < pop_n; ++i) consider(pop[i], fit[i]);
  }

  if (!have_best || !best.feasible)
    throw GaError("no regulation-compliant individual found in " +
                  std::to_string(config.generations) + " generations; best fitness " +
                  (have_best ? fmt_double(best.value) : std::string("n/a")) +
                  (best.simulated ? " (simulated)" : " (never simulated)"));

  EnergyStrategy s;
  s.name = c.name;
  s.genome = best_genome;
  s.constraints = c;
  s.fitness = best.value;
  s.warnings = warnings;
  vehicle::SimOptions opts;
  opts.integrator = trk.envelope_integrator;
  s.lap = vehicle::simulate_lap(trk, decode(best_genome, c, geom), opts);
  s.lap_time = s.lap.lap_time;
  ban_mask(c, geom, &s.warnings);  // surface short-ban warnings on the result
  return s;
}

StrategySet generate_strategy_set(const std::vector<StrategyConstraint>& specs,
                                  const GaConfig& config, const vehicle::PreparedTrack& trk,
                                  const vehicle::RegulationLimits& reg) {
  if (specs.empty()) throw std::invalid_argument("no strategy specs given");
  StrategySet out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    GaConfig ci = config;
    ci.seed = config.seed + i;
    try {
      out.strategies.push_back(run_ga(ci, specs[i], trk, reg));
    } catch (const GaError& e) {
      out.warnings.push_back(specs[i].name + ": " + e.what());
    }
  }
  std::stable_sort(out.strategies.begin(), out.strategies.end(),
                   [](const EnergyStrategy& a, const EnergyStrategy& b) {
                     return a.lap_time < b.lap_time;
                   });
  return out;
}

std::vector<StrategyConstraint> table_strategy_specs(const track::TrackGeometry& g) {
  if (g.n_straights < 1) throw std::invalid_argument("track has no straights");
  auto sid = [&](int want) { return (want - 1) % g.n_straights + 1; };
  auto ban = [&](int want, double to) {
    return KersBan{sid(want), 0.0, to};
  };
  auto whole = [&](int want) {
    int id = sid(want);
    return KersBan{id, 0.0, g.straight_length(id)};
  };
  auto name_for = [&](const std::vector<KersBan>& bans) {
    std::string n = "No KERS ";
    for (std::size_t i = 0; i < bans.size(); ++i) {
      if (i) n += " + ";
      const auto& b = bans[i];
      if (b.to_m >= g.straight_length(b.straight_id) - 1e-9 && b.from_m == 0.0)
        n += "straight " + std::to_string(b.straight_id);
      else
        n += "first " + std::to_string(llround(b.to_m - b.from_m)) + " m straight " +
             std::to_string(b.straight_id);
    }
    return n;
  };

  std::vector<std::vector<KersBan>> bans = {
      {},
      {ban(1, 100)},
      {ban(8, 100)},
      {ban(1, 200)},
      {whole(1)},
      {ban(1, 100), ban(8, 100)},
      {ban(1, 300)},
      {ban(4, 100)},
      {ban(2, 110)},
      {ban(6, 140)},
      {ban(3, 70)},
      {ban(2, 100), ban(5, 100)},
      {ban(8, 200)},
      {ban(1, 100), ban(4, 100), ban(8, 100)},
      {ban(7, 140)},
  };
  std::vector<StrategyConstraint> specs;
  for (const auto& b : bans) {
    StrategyConstraint c;
    c.bans = b;
    // clamp bans that outrun a short straight, keeping the 50 m floor
    for (auto& kb : c.bans) {
      double len = g.straight_length(kb.straight_id);
      if (kb.to_m > len) kb.to_m = std::max(len, kb.from_m + 50.0);
    }
    c.name = c.bans.empty() ? "No constraints" : name_for(c.bans);
    specs.push_back(std::move(c));
  }
  return specs;
}

Genome hot_start_from_lap(const vehicle::LapResult& lap, const track::TrackGeometry& g) {
  if (lap.points.size() != g.size())
    throw std::invalid_argument("lap and track grids differ");
  auto m = static_cast<std::size_t>(g.n_regions);
  std::vector<double> el(m, 0.0), fuel(m, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    auto r = static_cast<std::size_t>(g.points[k].region) - 1;
    el[r] += lap.points[k].e_used_j;
    fuel[r] += lap.points[k].fuel_kg;
  }
  Genome out;
  for (std::size_t r = 0; r < m; ++r) {
    out.e_el_kj.push_back(std::clamp(static_cast<int>(std::floor(el[r] / 1e3)), 0, kEElGeneMaxKj));
    out.fuel_g.push_back(std::clamp(static_cast<int>(std::floor(fuel[r] * 1e3)), 0, kFuelGeneMaxG));
  }
  return out;
}

std::string strategy_to_string(const EnergyStrategy& s) {
  json j;
  j["name"] = s.name;
  j["genome"]["e_el_kj"] = s.genome.e_el_kj;
  j["genome"]["fuel_g"] = s.genome.fuel_g;
  j["bans"] = json::array();
  for (const auto& b : s.constraints.bans)
    j["bans"].push_back({{"straight_id", b.straight_id}, {"from_m", b.from_m}, {"to_m", b.to_m}});
  j["lap_time_s"] = s.lap_time;
  j["fitness_s"] = s.fitness;
  j["fuel_kg"] = s.lap.fuel_kg;
  j["e_el_used_j"] = s.lap.e_el_used_j;
  j["e_el_rec_kers_j"] = s.lap.e_el_rec_kers_j;
  return j.dump(2) + "\n";
}

EnergyStrategy strategy_from_string(const std::string& text, const std::string& name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
  EnergyStrategy s;
  try {
    s.name = j.at("name").get<std::string>();
    s.genome.e_el_kj = j.at("genome").at("e_el_kj").get<std::vector<int>>();
    s.genome.fuel_g = j.at("genome").at("fuel_g").get<std::vector<int>>();
    s.constraints.name = s.name;
    for (const auto& b : j.at("bans")) {
      s.constraints.bans.push_back({b.at("straight_id").get<int>(), b.at("from_m").get<double>(),
                                    b.at("to_m").get<double>()});
    }
    s.lap_time = j.at("lap_time_s").get<double>();
    s.fitness = j.value("fitness_s", s.lap_time);
    s.lap.lap_time = s.lap_time;
    s.lap.fuel_kg = j.value("fuel_kg", 0.0);
    s.lap.e_el_used_j = j.value("e_el_used_j", 0.0);
    s.lap.e_el_rec_kers_j = j.value("e_el_rec_kers_j", 0.0);
  } catch (const json::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
  return s;
}

std::string strategy_index_table(const std::vector<EnergyStrategy>& set) {
  std::string out = "rank,name,lap_time_s,gap_s,e_el_used_kj,fuel_g,bans\n";
  double best = set.empty() ? 0.0 : set.front().lap_time;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& s = set[i];
    std::string bans;
    for (std::size_t b = 0; b < s.constraints.bans.size(); ++b) {
      if (b) bans += ";";
      const auto& kb = s.constraints.bans[b];
      bans += std::to_string(kb.straight_id) + ":" + fmt_double(kb.from_m) + "-" +
              fmt_double(kb.to_m);
    }
    out += std::to_string(i + 1) + "," + s.name + "," + fmt_fixed(s.lap_time, 3) + "," +
           fmt_fixed(s.lap_time - best, 3) + "," + fmt_fixed(s.lap.e_el_used_j / 1e3, 1) + "," +
           fmt_fixed(s.lap.fuel_kg * 1e3, 1) + "," + bans + "\n";
  }
  return out;
}

}  // namespace lapstrat::ga
