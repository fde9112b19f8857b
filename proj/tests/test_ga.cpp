#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lapstrat/ga.hpp"

using namespace lapstrat;
using namespace lapstrat::ga;

namespace {

struct Fixture {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  vehicle::VehicleParams p = vehicle::default_params();
  vehicle::PreparedTrack trk = vehicle::prepare(g, p);
  vehicle::RegulationLimits reg;
};

Genome flat(const track::TrackGeometry& g, int el_kj, int fuel_g) {
  Genome gen;
  gen.e_el_kj.assign(static_cast<std::size_t>(g.n_regions), el_kj);
  gen.fuel_g.assign(static_cast<std::size_t>(g.n_regions), fuel_g);
  return gen;
}

vehicle::LapResult run(const Fixture& f, const Genome& gen, const StrategyConstraint& c = {}) {
  return vehicle::simulate_lap(f.trk, decode(gen, c, f.g));
}

}  // namespace

TEST_CASE("ban mask covers exactly the banned meters and the motor stays off there") {
  Fixture f;
  StrategyConstraint c;
  c.name = "No KERS first 100 m straight 1";
  c.bans = {{1, 0.0, 100.0}};
  auto mask = ban_mask(c, f.g);
  REQUIRE(mask.size() == f.g.size());
  std::size_t banned = 0;
  for (auto b : mask) banned += b;
  CHECK(banned == 50);  // 100 m at 2 m spacing
  double s0 = f.g.straight_start(1);
  for (std::size_t k = 0; k < f.g.size(); ++k) {
    double rel = std::fmod(f.g.points[k].s - s0 + f.g.length, f.g.length);
    CHECK(static_cast<bool>(mask[k]) == (rel < 100.0 - 1e-9));
  }

  auto lap = run(f, flat(f.g, 800, 300), c);
  for (std::size_t k = 0; k < lap.points.size(); ++k)
    if (mask[k]) CHECK(lap.points[k].e_used_j == 0.0);

  std::vector<std::string> warnings;
  StrategyConstraint short_ban;
  short_ban.bans = {{1, 0.0, 70.0}};
  ban_mask(short_ban, f.g, &warnings);
  CHECK(warnings.size() == 1);
  StrategyConstraint too_short;
  too_short.bans = {{1, 0.0, 30.0}};
  CHECK_THROWS(ban_mask(too_short, f.g));
  StrategyConstraint bad_id;
  bad_id.bans = {{9, 0.0, 100.0}};
  CHECK_THROWS(ban_mask(bad_id, f.g));
}

TEST_CASE("zero electric genome never engages the hybrid mode") {
  Fixture f;
  auto lap = run(f, flat(f.g, 0, 400));
  for (const auto& pt : lap.points) {
    CHECK(pt.mode != vehicle::PowertrainMode::Both);
    CHECK(pt.e_used_j == 0.0);
  }
}

TEST_CASE("a budget worth exactly k points is consumed on the first k eligible points") {
  Fixture f;
  auto full = run(f, flat(f.g, 2300, 690));
  // region 1 starts at the first straight; accumulate its first 10 deploying
  // points
  std::vector<std::size_t> deploying;
  for (std::size_t k = 0; k < full.points.size() && deploying.size() < 10; ++k)
    if (f.g.points[k].region == 1 && full.points[k].e_used_j > 0) deploying.push_back(k);
  REQUIRE(deploying.size() == 10);
  double budget_j = 0.0;
  for (auto k : deploying) budget_j += full.points[k].e_used_j;

  Genome gen = flat(f.g, 0, 690);
  gen.e_el_kj[0] = static_cast<int>(std::floor(budget_j / 1e3));
  auto lap = run(f, gen);
  double spent = 0.0;
  std::size_t last_deploy = 0;
  for (std::size_t k = 0; k < lap.points.size(); ++k) {
    if (f.g.points[k].region != 1) continue;
    spent += lap.points[k].e_used_j;
    if (lap.points[k].e_used_j > 0) last_deploy = k;
  }
  CHECK(spent == doctest::Approx(1e3 * gen.e_el_kj[0]).epsilon(1e-9));
  // consumption is frontloaded: nothing after the first handful of points
  CHECK(last_deploy <= deploying.back() + 1);
}

TEST_CASE("fitness equals the simulated lap time for a compliant genome") {
  Fixture f;
  Genome gen = flat(f.g, 400, 300);
  auto r = fitness(gen, {}, f.trk, f.reg);
  auto lap = run(f, gen);
  CHECK(r.feasible);
  CHECK(r.value == lap.lap_time);
  CHECK(r.lap_time == lap.lap_time);
}

TEST_CASE("more electric allowance on a straight region never hurts") {
  Fixture f;
  Genome poor = flat(f.g, 300, 400);
  Genome rich = poor;
  rich.e_el_kj[0] += 100;
  auto fp = fitness(poor, {}, f.trk, f.reg);
  auto fr = fitness(rich, {}, f.trk, f.reg);
  CHECK(fr.value <= fp.value + 1e-12);
}

TEST_CASE("cap-breaking genomes sink below every compliant one") {
  Fixture f;
  Genome over = flat(f.g, 0, 0);
  over.fuel_g.assign(over.fuel_g.size(), 691);  // 1382 g total, 1 g over
  auto r = fitness(over, {}, f.trk, f.reg);
  CHECK_FALSE(r.feasible);
  CHECK_FALSE(r.simulated);  // linear pre-screen, no simulation spent
  CHECK(r.value >= 1000.0);
  auto ok = fitness(flat(f.g, 400, 300), {}, f.trk, f.reg);
  CHECK(r.value > ok.value);
}

TEST_CASE("the optimizer is deterministic and respects the elitism floor") {
  Fixture f;
  GaConfig cfg;
  cfg.population = 60;
  cfg.generations = 4;
  cfg.elitism = 4;
  cfg.seed = 99;

  auto a = run_ga(cfg, {}, f.trk, f.reg);
  auto b = run_ga(cfg, {}, f.trk, f.reg);
  CHECK(a.genome == b.genome);
  CHECK(a.lap_time == b.lap_time);
  CHECK_FALSE(a.warnings.empty());  // population below the advised floor

  // hot start with a strong genome: the result can only match or beat it
  auto hot = hot_start_from_lap(run(f, flat(f.g, 2300, 690)), f.g);
  auto c = run_ga(cfg, {}, f.trk, f.reg, hot);
  auto hot_fit = fitness(hot, {}, f.trk, f.reg);
  CHECK(c.fitness <= hot_fit.value + 1e-12);
}

TEST_CASE("the optimizer reports failure when no compliant genome exists") {
  Fixture f;
  vehicle::RegulationLimits impossible;
  impossible.fuel_max_kg = 1e-4;  // under the integer fuel grid resolution
  impossible.e_el_used_max_j = 0.0;
  GaConfig cfg;
  cfg.population = 20;
  cfg.generations = 2;
  cfg.seed = 5;
  CHECK_THROWS_AS(run_ga(cfg, {}, f.trk, impossible), GaError);
}

TEST_CASE("optimizer lands within half a percent of a coarse brute-force sweep") {
  Fixture f;
  REQUIRE(f.g.n_regions == 2);
  double best_brute = std::numeric_limits<double>::infinity();
  for (int e1 = 0; e1 <= 2300; e1 += 500)
    for (int e2 = 0; e2 <= 2300; e2 += 500)
      for (int f1 = 0; f1 <= 1381; f1 += 500)
        for (int f2 = 0; f2 <= 1381; f2 += 500) {
          Genome gen;
          gen.e_el_kj = {e1, e2};
          gen.fuel_g = {f1, f2};
          auto r = fitness(gen, {}, f.trk, f.reg);
          if (r.feasible) best_brute = std::min(best_brute, r.value);
        }
  GaConfig cfg;
  cfg.population = 200;
  cfg.generations = 12;
  cfg.seed = 3;
  auto s = run_ga(cfg, {}, f.trk, f.reg);
  CHECK(s.lap_time <= best_brute * 1.005);
}

TEST_CASE("adding a ban never buys lap time beyond optimizer noise") {
  Fixture f;
  GaConfig cfg;
  cfg.population = 120;
  cfg.generations = 8;
  cfg.seed = 11;
  auto open = run_ga(cfg, {}, f.trk, f.reg);
  StrategyConstraint banned;
  banned.name = "No KERS straight 1";
  banned.bans = {{1, 0.0, 300.0}};
  auto shut = run_ga(cfg, banned, f.trk, f.reg);
  CHECK(shut.lap_time >= open.lap_time - 0.001 * open.lap_time);
}

TEST_CASE("stock strategy list adapts to the track and stays well formed") {
  Fixture f;
  auto specs = table_strategy_specs(f.g);
  REQUIRE(specs.size() == 15);
  CHECK(specs.front().name == "No constraints");
  CHECK(specs.front().bans.empty());
  for (const auto& c : specs) {
    for (const auto& b : c.bans) {
      CHECK(b.straight_id >= 1);
      CHECK(b.straight_id <= f.g.n_straights);
      CHECK(b.to_m - b.from_m >= 50.0);
    }
  }
  auto road = track::make_preset("road-2km", 2.0);
  auto road_specs = table_strategy_specs(road);
  bool uses_high_straight = false;
  for (const auto& c : road_specs)
    for (const auto& b : c.bans) uses_high_straight = uses_high_straight || b.straight_id == 8;
  CHECK(uses_high_straight);
}

TEST_CASE("strategy files and the index table round-trip the results") {
  Fixture f;
  GaConfig cfg;
  cfg.population = 40;
  cfg.generations = 2;
  cfg.seed = 21;
  StrategyConstraint c;
  c.name = "No KERS first 100 m straight 2";
  c.bans = {{2, 0.0, 100.0}};
  auto s = run_ga(cfg, c, f.trk, f.reg);
  auto back = strategy_from_string(strategy_to_string(s), "mem");
  CHECK(back.name == s.name);
  CHECK(back.genome == s.genome);
  CHECK(back.lap_time == s.lap_time);
  REQUIRE(back.constraints.bans.size() == 1);
  CHECK(back.constraints.bans[0].straight_id == 2);
  CHECK_THROWS(strategy_from_string("{", "mem"));
  CHECK_THROWS(strategy_from_string("{}", "mem"));

  auto table = strategy_index_table({s});
  CHECK(table.find("rank,name,") == 0);
  CHECK(table.find(s.name) != std::string::npos);
}

TEST_CASE("strategy sets come back sorted with the open strategy on top") {
  Fixture f;
  GaConfig cfg;
  cfg.population = 80;
  cfg.generations = 5;
  cfg.seed = 7;
  std::vector<StrategyConstraint> specs(3);
  specs[0].name = "No constraints";
  specs[1].name = "No KERS straight 1";
  specs[1].bans = {{1, 0.0, 300.0}};
  specs[2].name = "No KERS first 100 m straight 2";
  specs[2].bans = {{2, 0.0, 100.0}};
  auto set = generate_strategy_set(specs, cfg, f.trk, f.reg);
  REQUIRE(set.strategies.size() == 3);
  for (std::size_t i = 1; i < set.strategies.size(); ++i)
    CHECK(set.strategies[i - 1].lap_time <= set.strategies[i].lap_time);
  CHECK(set.strategies.front().lap_time <=
        set.strategies.back().lap_time + 1e-9);
  for (const auto& s : set.strategies) {
    CHECK(s.lap.e_el_used_j <= f.reg.e_el_used_max_j + 1e-6);
    CHECK(s.lap.fuel_kg <= f.reg.fuel_max_kg + 1e-12);
    CHECK(s.lap.e_el_used_j - s.lap.e_el_rec_kers_j <= f.reg.e_rec_hers_j + 1e-6);
  }
}
