#include "lapstrat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lapstrat/common.hpp"

namespace fs = std::filesystem;

namespace lapstrat::pipeline {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw PipelineError(msg); }

std::array<int, 4>& per_class(synth::SynthConfig& s) { return s.cars_per_class; }

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value,
               const std::string& where) {
  auto as_double = [&] { return parse_double(value, where + " key " + key); };
  auto as_long = [&] { return parse_long(value, where + " key " + key); };
  if (key == "sector_times") cfg.sector_times = value;
  else if (key == "geometry") cfg.geometry = value;
  else if (key == "vehicle_params") cfg.vehicle_params = value;
  else if (key == "reference_speed") cfg.reference_speed = value;
  else if (key == "reference_sectors") cfg.reference_sectors = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_long());
  else if (key == "jobs") cfg.jobs = static_cast<int>(as_long());
  else if (key == "stages") {
    cfg.stages.clear();
    for (auto& s : split(value, ','))
      if (auto t = trim(s); !t.empty()) cfg.stages.push_back(t);
  } else if (key == "eps_s") cfg.eps_s = as_double();
  else if (key == "min_pts") cfg.min_pts = static_cast<int>(as_long());
  else if (key == "free_gap_m") cfg.free_gap_m = as_double();
  else if (key == "proximity_m") cfg.proximity_m = as_double();
  else if (key == "mc_sims") cfg.mc_sims = static_cast<int>(as_long());
  else if (key == "mc_dt") cfg.mc_dt = as_double();
  else if (key == "mc_horizon_laps") cfg.mc_horizon_laps = static_cast<int>(as_long());
  else if (key == "mc_influence_m") cfg.mc_influence_m = as_double();
  else if (key == "ga_population") cfg.ga_population = static_cast<int>(as_long());
  else if (key == "ga_generations") cfg.ga_generations = static_cast<int>(as_long());
  else if (key == "ego_car") cfg.ego_car = static_cast<int>(as_long());
  else if (key == "baseline_strategy") cfg.baseline_strategy = static_cast<std::size_t>(as_long());
  else if (key == "stint_laps") cfg.stint_laps = static_cast<int>(as_long());
  else if (key == "stint_runs") cfg.stint_runs = static_cast<int>(as_long());
  else if (key == "stint_sims") cfg.stint_sims = static_cast<int>(as_long());
  else if (key == "synth.preset") cfg.synth.preset = value;
  else if (key == "synth.delta_s") cfg.synth.delta_s = as_double();
  else if (key == "synth.cars_lmp1") per_class(cfg.synth)[0] = static_cast<int>(as_long());
  else if (key == "synth.cars_lmp2") per_class(cfg.synth)[1] = static_cast<int>(as_long());
  else if (key == "synth.cars_gtepro") per_class(cfg.synth)[2] = static_cast<int>(as_long());
  else if (key == "synth.cars_gteam") per_class(cfg.synth)[3] = static_cast<int>(as_long());
  else if (key == "synth.laps") cfg.synth.laps = static_cast<int>(as_long());
  else if (key == "synth.noise_s") cfg.synth.sector_noise_s = as_double();
  else if (key == "synth.outliers_per_car") cfg.synth.outliers_per_car = static_cast<int>(as_long());
  else if (key == "synth.stop_laps_per_car") cfg.synth.stop_laps_per_car = static_cast<int>(as_long());
  else if (key == "synth.planted_episodes") cfg.synth.planted_episodes = static_cast<int>(as_long());
  else if (key == "synth.planted_pass_rate") cfg.synth.planted_pass_rate = as_double();
  else if (key == "synth.planted_section") cfg.synth.planted_section = static_cast<int>(as_long());
  else fail("unknown config key '" + key + "' in " + where);
}

}  // namespace

RunConfig config_from_string(const std::string& text, const std::string& name) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      fail("malformed config line " + std::to_string(lineno) + " in " + name +
           " (expected key = value)");
    apply_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)),
              name + ":" + std::to_string(lineno));
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  if (!file_exists(path)) fail("config file not found: " + path);
  return config_from_string(read_text_file(path), path);
}

std::string config_to_string(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# input artifacts (empty falls back to this run's synth outputs)\n";
  out << "sector_times = " << cfg.sector_times << "\n";
  out << "geometry = " << cfg.geometry << "\n";
  out << "vehicle_params = " << cfg.vehicle_params << "\n";
  out << "reference_speed = " << cfg.reference_speed << "\n";
  out << "reference_sectors = " << cfg.reference_sectors << "\n";
  out << "out_dir = " << cfg.out_dir << "\n";
  out << "# explicit seed is required by synth, optimize, simulate and stint\n";
  out << "seed = " << (cfg.seed ? std::to_string(*cfg.seed) : "") << "\n";
  out << "jobs = " << cfg.jobs << "\n";
  out << "stages = ";
  for (std::size_t i = 0; i < cfg.stages.size(); ++i)
    out << (i ? "," : "") << cfg.stages[i];
  out << "\n";
  out << "# lap cleaning and competitor statistics\n";
  out << "eps_s = " << fmt_double(cfg.eps_s) << "\n";
  out << "min_pts = " << cfg.min_pts << "\n";
  out << "free_gap_m = " << fmt_double(cfg.free_gap_m) << "\n";
  out << "proximity_m = " << fmt_double(cfg.proximity_m) << "\n";
  out << "# traffic simulation\n";
  out << "mc_sims = " << cfg.mc_sims << "\n";
  out << "mc_dt = " << fmt_double(cfg.mc_dt) << "\n";
  out << "mc_horizon_laps = " << cfg.mc_horizon_laps << "\n";
  out << "mc_influence_m = " << fmt_double(cfg.mc_influence_m) << "\n";
  out << "# strategy search\n";
  out << "ga_population = " << cfg.ga_population << "\n";
  out << "ga_generations = " << cfg.ga_generations << "\n";
  out << "ego_car = " << cfg.ego_car << "\n";
  out << "# strategy evaluation and stint planning\n";
  out << "baseline_strategy = " << cfg.baseline_strategy << "\n";
  out << "stint_laps = " << cfg.stint_laps << "\n";
  out << "stint_runs = " << cfg.stint_runs << "\n";
  out << "stint_sims = " << cfg.stint_sims << "\n";
  out << "# synthetic data generation\n";
  out << "synth.preset = " << cfg.synth.preset << "\n";
  out << "synth.delta_s = " << fmt_double(cfg.synth.delta_s) << "\n";
  out << "synth.cars_lmp1 = " << cfg.synth.cars_per_class[0] << "\n";
  out << "synth.cars_lmp2 = " << cfg.synth.cars_per_class[1] << "\n";
  out << "synth.cars_gtepro = " << cfg.synth.cars_per_class[2] << "\n";
  out << "synth.cars_gteam = " << cfg.synth.cars_per_class[3] << "\n";
  out << "synth.laps = " << cfg.synth.laps << "\n";
  out << "synth.noise_s = " << fmt_double(cfg.synth.sector_noise_s) << "\n";
  out << "synth.outliers_per_car = " << cfg.synth.outliers_per_car << "\n";
  out << "synth.stop_laps_per_car = " << cfg.synth.stop_laps_per_car << "\n";
  out << "synth.planted_episodes = " << cfg.synth.planted_episodes << "\n";
  out << "synth.planted_pass_rate = " << fmt_double(cfg.synth.planted_pass_rate) << "\n";
  out << "synth.planted_section = " << cfg.synth.planted_section << "\n";
  return out.str();
}

namespace {

struct LockGuard {
  fs::path path;
  bool owned = false;

  explicit LockGuard(const std::string& out_dir) {
    fs::create_directories(out_dir);
    path = fs::path(out_dir) / ".lock";
    if (fs::exists(path))
      fail("output directory " + out_dir + " is locked by another run; remove " + path.string() +
           " if that run is gone");
    write_text_file(path.string(), "locked\n");
    owned = true;
  }
  ~LockGuard() {
    if (owned) {
      std::error_code ec;
      fs::remove(path, ec);
    }
  }
  LockGuard(const LockGuard&) = delete;
  LockGuard& operator=(const LockGuard&) = delete;
};

std::string stage_path(const RunConfig& cfg, const std::string& stage, const std::string& name) {
  return (fs::path(cfg.out_dir) / stage / name).string();
}

std::string write_artifact(const RunConfig& cfg, const std::string& stage, const std::string& name,
                           const std::string& content, StageResult& result) {
  auto path = stage_path(cfg, stage, name);
  fs::create_directories(fs::path(path).parent_path());
  write_text_file(path, content);
  result.artifacts.push_back(path);
  return path;
}

void write_manifest(const RunConfig& cfg, const std::string& stage,
                    const std::map<std::string, std::string>& inputs, StageResult& result,
                    bool seeded) {
  nlohmann::json m;
  m["stage"] = stage;
  m["version"] = kToolVersion;
  m["config_digest"] = content_hash(config_to_string(cfg));
  if (seeded) m["seed"] = *cfg.seed;
  m["inputs"] = inputs;
  nlohmann::json outputs;
  for (const auto& p : result.artifacts) outputs[fs::path(p).filename().string()] = file_hash(p);
  m["outputs"] = std::move(outputs);
  m["warnings"] = result.warnings;
  auto path = stage_path(cfg, stage, "manifest.json");
  write_text_file(path, m.dump(2) + "\n");
  result.artifacts.push_back(path);
}

void require_seed(const RunConfig& cfg, const std::string& stage) {
  if (!cfg.seed) fail("stage '" + stage + "' is stochastic; set an explicit seed");
}

std::string upstream(const RunConfig& cfg, const std::string& stage, const std::string& name,
                     const std::string& prior_cmd) {
  auto path = stage_path(cfg, stage, name);
  if (!file_exists(path)) fail("missing " + path + "; run " + prior_cmd + " first");
  return path;
}

// configured input path, or this run's synth artifact as the fallback
std::string resolve_input(const RunConfig& cfg, const std::string& configured,
                          const std::string& synth_name, const std::string& key) {
  if (!configured.empty()) {
    if (!file_exists(configured)) fail("configured " + key + " not found: " + configured);
    return configured;
  }
  auto fallback = stage_path(cfg, "synth", synth_name);
  if (file_exists(fallback)) return fallback;
  fail("no " + key + " available; set '" + key + "' in the config or run synth first");
}

track::TrackGeometry load_geometry_input(const RunConfig& cfg) {
  return track::load_geometry(resolve_input(cfg, cfg.geometry, "geometry.csv", "geometry"));
}

vehicle::VehicleParams load_params_input(const RunConfig& cfg) {
  if (cfg.vehicle_params.empty() && !file_exists(stage_path(cfg, "synth", "vehicle_params.csv")))
    return vehicle::default_params();
  return vehicle::load_params(
      resolve_input(cfg, cfg.vehicle_params, "vehicle_params.csv", "vehicle_params"));
}

stats::ReferenceProfile load_reference_input(const RunConfig& cfg, const track::TrackGeometry& g,
                                             const vehicle::VehicleParams& p,
                                             std::vector<std::string>* warnings,
                                             std::map<std::string, std::string>* inputs) {
  bool have_files = !cfg.reference_speed.empty() ||
                    file_exists(stage_path(cfg, "synth", "reference_speed.csv"));
  if (have_files) {
    auto speed = resolve_input(cfg, cfg.reference_speed, "reference_speed.csv", "reference_speed");
    auto sectors =
        resolve_input(cfg, cfg.reference_sectors, "reference_sectors.csv", "reference_sectors");
    if (inputs) {
      (*inputs)[speed] = file_hash(speed);
      (*inputs)[sectors] = file_hash(sectors);
    }
    auto ref = stats::load_profile(speed, sectors);
    ref.validate(g);
    return ref;
  }
  if (warnings)
    warnings->push_back("no reference profile configured; derived one from a flat-out lap");
  return stats::profile_from_lap(
      vehicle::simulate_lap(g, p, vehicle::StrategyBudgets::unlimited(g)), g);
}

std::vector<ingest::SectorTimeRecord> load_retained(const RunConfig& cfg) {
  auto path = upstream(cfg, "ingest", "retained.csv", "ingest");
  return ingest::parse_sector_times(path);
}

struct EgoChoice {
  int car_number = 0;
  ingest::CarClass car_class = ingest::CarClass::LMP1;
  std::array<double, 3> best_times{};
};

EgoChoice resolve_ego(const RunConfig& cfg, const std::vector<ingest::SectorTimeRecord>& retained) {
  EgoChoice ego;
  double best = 0.0;
  bool found = false;
  for (const auto& r : retained) {
    if (cfg.ego_car != 0 ? r.car_number != cfg.ego_car
                         : r.car_class != ingest::CarClass::LMP1)
      continue;
    if (!found || r.lap_time() < best) {
      best = r.lap_time();
      ego.car_number = r.car_number;
      ego.car_class = r.car_class;
      ego.best_times = {r.s1, r.s2, r.s3};
      found = true;
    }
  }
  if (!found)
    fail(cfg.ego_car != 0
             ? "ego car " + std::to_string(cfg.ego_car) + " has no cleaned laps"
             : "no cleaned LMP1 laps to pick an ego car from; set ego_car explicitly");
  return ego;
}

std::string free_sectors_csv(const stats::FreeSectorResult& free) {
  std::ostringstream out;
  out << "car,sector,time_s\n";
  for (const auto& car : free.cars)
    for (std::size_t s = 0; s < 3; ++s)
      for (double t : car.times[s])
        out << car.car_number << "," << (s + 1) << "," << fmt_double(t) << "\n";
  return out.str();
}

std::vector<stats::FreeSectorDistribution> load_free_sectors(const std::string& path) {
  auto table = read_delimited(path);
  int c_car = table.require_column("car");
  int c_sec = table.require_column("sector");
  int c_time = table.require_column("time_s");
  std::map<int, stats::FreeSectorDistribution> by_car;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    auto where = path + " row " + std::to_string(i + 1);
    int car = static_cast<int>(parse_long(row[static_cast<std::size_t>(c_car)], where));
    long sec = parse_long(row[static_cast<std::size_t>(c_sec)], where);
    if (sec < 1 || sec > 3) throw PipelineError("sector out of range in " + where);
    auto& d = by_car[car];
    d.car_number = car;
    d.times[static_cast<std::size_t>(sec - 1)].push_back(
        parse_double(row[static_cast<std::size_t>(c_time)], where));
  }
  std::vector<stats::FreeSectorDistribution> out;
  out.reserve(by_car.size());
  for (auto& [car, d] : by_car) out.push_back(std::move(d));
  return out;
}

std::string grid_csv(const mc::RaceState& grid) {
  std::ostringstream out;
  out << "car,class,position_m\n";
  for (const auto& c : grid.cars)
    out << c.car_number << "," << ingest::to_string(c.car_class) << ","
        << fmt_double(c.position_m) << "\n";
  return out.str();
}

mc::RaceState load_grid(const std::string& path) {
  auto table = read_delimited(path);
  int c_car = table.require_column("car");
  int c_cls = table.require_column("class");
  int c_pos = table.require_column("position_m");
  mc::RaceState grid;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    auto where = path + " row " + std::to_string(i + 1);
    mc::CompetitorState c;
    c.car_number = static_cast<int>(parse_long(row[static_cast<std::size_t>(c_car)], where));
    c.car_class = ingest::car_class_from_string(row[static_cast<std::size_t>(c_cls)]);
    c.position_m = parse_double(row[static_cast<std::size_t>(c_pos)], where);
    grid.cars.push_back(c);
  }
  return grid;
}

mc::SimOptions sim_options(const RunConfig& cfg) {
  mc::SimOptions opt;
  opt.horizon_laps = cfg.mc_horizon_laps;
  opt.dt = cfg.mc_dt;
  opt.influence_m = cfg.mc_influence_m;
  opt.follow_gap_m = cfg.proximity_m;
  opt.swap_gap_m = cfg.proximity_m;
  return opt;
}

// strategies reloaded from disk carry no lap ledger; rebuild it on the
// current track and refuse silently drifted inputs
std::vector<ga::EnergyStrategy> load_strategies(const RunConfig& cfg,
                                                const vehicle::PreparedTrack& trk) {
  auto path = upstream(cfg, "optimize", "strategies.json", "optimize");
  auto doc = nlohmann::json::parse(read_text_file(path));
  if (!doc.is_array() || doc.empty()) fail("no strategies in " + path + "; run optimize first");
  std::vector<ga::EnergyStrategy> out;
  for (const auto& item : doc) {
    auto s = ga::strategy_from_string(item.dump(), path);
    auto budgets = ga::decode(s.genome, s.constraints, trk.geometry);
    s.lap = vehicle::simulate_lap(trk, budgets, {});
    if (std::abs(s.lap.lap_time - s.lap_time) > 1e-6)
      fail("stored strategy '" + s.name +
           "' does not reproduce on the current track and parameters; rerun optimize");
    out.push_back(std::move(s));
  }
  return out;
}

struct SimSetup {
  track::TrackGeometry g;
  vehicle::VehicleParams params;
  stats::ReferenceProfile ref;
  stats::OvertakingProbabilityTable table;
  std::vector<stats::FreeSectorDistribution> dists;
  mc::RaceState grid;
  EgoChoice ego;
};

SimSetup load_sim_setup(const RunConfig& cfg, StageResult& result,
                        std::map<std::string, std::string>& inputs) {
  SimSetup s;
  s.g = load_geometry_input(cfg);
  s.params = load_params_input(cfg);
  s.ref = load_reference_input(cfg, s.g, s.params, &result.warnings, &inputs);

  auto table_path = upstream(cfg, "stats", "overtaking.csv", "stats");
  auto free_path = upstream(cfg, "stats", "free_sectors.csv", "stats");
  auto grid_path = upstream(cfg, "stats", "grid.csv", "stats");
  inputs[table_path] = file_hash(table_path);
  inputs[free_path] = file_hash(free_path);
  inputs[grid_path] = file_hash(grid_path);

  s.table = stats::parse_probability_table(read_text_file(table_path), table_path);
  s.dists = load_free_sectors(free_path);
  auto full_grid = load_grid(grid_path);
  s.ego = resolve_ego(cfg, load_retained(cfg));

  std::set<int> covered;
  for (const auto& d : s.dists)
    if (!d.times[0].empty() && !d.times[1].empty() && !d.times[2].empty())
      covered.insert(d.car_number);
  for (const auto& c : full_grid.cars) {
    if (c.car_number == s.ego.car_number) continue;
    if (!covered.count(c.car_number)) {
      result.warnings.push_back("car " + std::to_string(c.car_number) +
                                " lacks free-lap coverage; excluded from traffic");
      continue;
    }
    s.grid.cars.push_back(c);
  }
  if (s.grid.cars.empty()) fail("no competitors left for the traffic grid");
  return s;
}

std::string batch_digest(const std::vector<mc::SimTrace>& traces) {
  std::string acc;
  for (const auto& t : traces) {
    acc += content_hash(mc::positions_csv(t));
    acc += content_hash(mc::events_csv(t));
  }
  return content_hash(acc);
}

}  // namespace

StageResult cmd_synth(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  require_seed(cfg, "synth");
  StageResult result{"synth", {}, {}};
  auto synth_cfg = cfg.synth;
  synth_cfg.seed = *cfg.seed;
  auto ds = synth::generate_synthetic(synth_cfg);
  auto dir = (fs::path(cfg.out_dir) / "synth").string();
  synth::write_dataset(ds, dir);
  for (const char* name : {"sector_times.csv", "geometry.csv", "vehicle_params.csv",
                           "reference_speed.csv", "reference_sectors.csv", "truth.json"})
    result.artifacts.push_back(stage_path(cfg, "synth", name));
  write_manifest(cfg, "synth", {}, result, true);
  return result;
}

StageResult cmd_ingest(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  StageResult result{"ingest", {}, {}};
  auto src = resolve_input(cfg, cfg.sector_times, "sector_times.csv", "sector_times");
  auto records = ingest::parse_sector_times(src);
  ingest::CleaningConfig clean_cfg;
  clean_cfg.eps_s = cfg.eps_s;
  clean_cfg.min_pts = cfg.min_pts;
  auto cleaned = ingest::clean_laps(records, clean_cfg);
  result.warnings = cleaned.warnings;
  write_artifact(cfg, "ingest", "retained.csv",
                 ingest::sector_times_to_string(cleaned.retained), result);
  write_artifact(cfg, "ingest", "rejections.csv",
                 ingest::rejections_to_string(cleaned.rejected), result);
  write_manifest(cfg, "ingest", {{src, file_hash(src)}}, result, false);
  return result;
}

StageResult cmd_stats(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  StageResult result{"stats", {}, {}};
  std::map<std::string, std::string> inputs;
  auto retained_path = upstream(cfg, "ingest", "retained.csv", "ingest");
  inputs[retained_path] = file_hash(retained_path);
  auto retained = ingest::parse_sector_times(retained_path);
  if (retained.empty()) fail("no cleaned laps in " + retained_path + "; run ingest first");

  auto g = load_geometry_input(cfg);
  auto params = load_params_input(cfg);
  auto ref = load_reference_input(cfg, g, params, &result.warnings, &inputs);

  auto traces = stats::build_position_traces(retained, ref, g);
  auto free = stats::extract_free_sector_times(traces, g, cfg.free_gap_m);
  for (const auto& flag : free.flags) result.warnings.push_back(flag);
  auto table = stats::compute_overtaking_probabilities(traces, g, cfg.proximity_m);

  // common epoch where every car has coverage; cars already retired get
  // dropped with a note
  double epoch = 0.0;
  for (const auto& t : traces)
    for (std::size_t k = 0; k < t.pos.size(); ++k)
      if (t.valid_at(k)) {
        epoch = std::max(epoch, t.t0 + (static_cast<double>(k) + 1.0) * t.dt);
        break;
      }
  mc::RaceState grid;
  grid.t = 0.0;
  for (const auto& t : traces) {
    double pos = t.position_at(epoch);
    if (std::isnan(pos)) {
      result.warnings.push_back("car " + std::to_string(t.car_number) +
                                " has no coverage at the grid epoch; excluded");
      continue;
    }
    mc::CompetitorState c;
    c.car_number = t.car_number;
    c.car_class = t.car_class;
    c.position_m = pos - g.length * std::floor(pos / g.length);
    grid.cars.push_back(c);
  }
  std::sort(grid.cars.begin(), grid.cars.end(),
            [](const auto& a, const auto& b) { return a.position_m < b.position_m; });
  for (std::size_t i = 1; i < grid.cars.size(); ++i)
    if (grid.cars[i].position_m <= grid.cars[i - 1].position_m)
      grid.cars[i].position_m = grid.cars[i - 1].position_m + 0.01;

  write_artifact(cfg, "stats", "free_sectors.csv", free_sectors_csv(free), result);
  write_artifact(cfg, "stats", "overtaking.csv", table.to_string(), result);
  write_artifact(cfg, "stats", "grid.csv", grid_csv(grid), result);
  write_manifest(cfg, "stats", inputs, result, false);
  return result;
}

StageResult cmd_optimize(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  require_seed(cfg, "optimize");
  StageResult result{"optimize", {}, {}};
  std::map<std::string, std::string> inputs;
  auto g = load_geometry_input(cfg);
  auto params = load_params_input(cfg);
  auto trk = vehicle::prepare(g, params);

  ga::GaConfig ga_cfg;
  ga_cfg.population = cfg.ga_population;
  ga_cfg.generations = cfg.ga_generations;
  ga_cfg.seed = *cfg.seed;
  ga_cfg.jobs = cfg.jobs;
  auto set = ga::generate_strategy_set(ga::table_strategy_specs(g), ga_cfg, trk);
  result.warnings = set.warnings;

  nlohmann::json doc = nlohmann::json::array();
  for (const auto& s : set.strategies) doc.push_back(nlohmann::json::parse(ga::strategy_to_string(s)));
  write_artifact(cfg, "optimize", "strategies.json", doc.dump(2) + "\n", result);
  write_artifact(cfg, "optimize", "strategy_index.csv", ga::strategy_index_table(set.strategies),
                 result);
  write_manifest(cfg, "optimize", inputs, result, true);
  return result;
}

StageResult cmd_simulate(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  require_seed(cfg, "simulate");
  StageResult result{"simulate", {}, {}};
  std::map<std::string, std::string> inputs;
  auto setup = load_sim_setup(cfg, result, inputs);

  auto traces = mc::run_batch(setup.grid, setup.dists, setup.table, setup.ref, setup.g,
                              cfg.mc_sims, *cfg.seed, sim_options(cfg), cfg.jobs);

  std::map<std::string, std::array<long, 2>> by_key;  // overtakes, follows
  std::set<std::string> trace_warnings;
  for (const auto& t : traces) {
    for (const auto& w : t.warnings) trace_warnings.insert(w);
    for (const auto& ev : t.events) {
      auto fi = t.car_index(ev.follower);
      auto li = t.car_index(ev.leader);
      std::ostringstream key;
      key << ev.section << "," << ingest::to_string(t.car_classes[fi]) << ","
          << ingest::to_string(t.car_classes[li]);
      auto& cell = by_key[key.str()];
      if (ev.outcome == mc::EncounterOutcome::Overtake) ++cell[0];
      else ++cell[1];
    }
  }
  for (const auto& w : trace_warnings) result.warnings.push_back(w);

  std::ostringstream summary;
  summary << "section,follower_class,leader_class,overtakes,follows\n";
  for (const auto& [key, cell] : by_key)
    summary << key << "," << cell[0] << "," << cell[1] << "\n";
  write_artifact(cfg, "simulate", "events_summary.csv", summary.str(), result);

  nlohmann::json sim;
  sim["seed"] = *cfg.seed;
  sim["n_sims"] = cfg.mc_sims;
  sim["dt"] = cfg.mc_dt;
  sim["horizon_laps"] = cfg.mc_horizon_laps;
  sim["influence_m"] = cfg.mc_influence_m;
  sim["proximity_m"] = cfg.proximity_m;
  sim["ego_car"] = setup.ego.car_number;
  sim["traces_digest"] = batch_digest(traces);
  nlohmann::json grid_json = nlohmann::json::array();
  for (const auto& c : setup.grid.cars)
    grid_json.push_back({{"car", c.car_number},
                         {"class", ingest::to_string(c.car_class)},
                         {"position_m", c.position_m}});
  sim["grid"] = std::move(grid_json);
  write_artifact(cfg, "simulate", "simulation.json", sim.dump(2) + "\n", result);
  write_manifest(cfg, "simulate", inputs, result, true);
  return result;
}

StageResult cmd_evaluate(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  StageResult result{"evaluate", {}, {}};
  std::map<std::string, std::string> inputs;

  auto sim_path = upstream(cfg, "simulate", "simulation.json", "simulate");
  inputs[sim_path] = file_hash(sim_path);
  auto sim = nlohmann::json::parse(read_text_file(sim_path));

  auto setup = load_sim_setup(cfg, result, inputs);
  auto trk = vehicle::prepare(setup.g, setup.params);
  auto strategies = load_strategies(cfg, trk);
  auto strategies_path = stage_path(cfg, "optimize", "strategies.json");
  inputs[strategies_path] = file_hash(strategies_path);

  // replay the recorded batch; a digest mismatch means the stats artifacts
  // or the configuration moved underneath it
  auto traces = mc::run_batch(setup.grid, setup.dists, setup.table, setup.ref, setup.g,
                              sim.at("n_sims").get<int>(), sim.at("seed").get<std::uint64_t>(),
                              sim_options(cfg), cfg.jobs);
  if (batch_digest(traces) != sim.at("traces_digest").get<std::string>())
    fail("simulation artifacts do not match the current inputs; rerun simulate");

  sdp::TreeOptions opt;
  opt.proximity_m = cfg.proximity_m;
  auto eval = sdp::evaluate_strategies(strategies, traces, setup.table, trk,
                                       setup.ego.car_class, opt, cfg.jobs);
  for (const auto& w : eval.warnings) result.warnings.push_back(w);

  write_artifact(cfg, "evaluate", "evaluation.csv", sdp::evaluation_table(eval), result);
  const auto& best = eval.evaluations[eval.best_index];
  nlohmann::json best_json{{"name", best.name},
                           {"lap_time_s", best.lap_time},
                           {"f0_s", best.mean_f0},
                           {"win_rate", best.win_rate},
                           {"ego_car", setup.ego.car_number}};
  write_artifact(cfg, "evaluate", "best_strategy.json", best_json.dump(2) + "\n", result);
  write_manifest(cfg, "evaluate", inputs, result, false);
  return result;
}

StageResult cmd_stint(const RunConfig& cfg) {
  LockGuard lock(cfg.out_dir);
  require_seed(cfg, "stint");
  StageResult result{"stint", {}, {}};
  std::map<std::string, std::string> inputs;
  auto setup = load_sim_setup(cfg, result, inputs);
  auto trk = vehicle::prepare(setup.g, setup.params);
  auto strategies = load_strategies(cfg, trk);
  auto strategies_path = stage_path(cfg, "optimize", "strategies.json");
  inputs[strategies_path] = file_hash(strategies_path);

  if (cfg.baseline_strategy >= strategies.size())
    fail("baseline_strategy index " + std::to_string(cfg.baseline_strategy) +
         " out of range for " + std::to_string(strategies.size()) + " strategies");

  sdp::StintConfig stint_cfg;
  stint_cfg.n_laps = cfg.stint_laps;
  stint_cfg.n_sims = cfg.stint_sims > 0 ? cfg.stint_sims : cfg.mc_sims;
  stint_cfg.n_runs = cfg.stint_runs;
  stint_cfg.seed = *cfg.seed;
  stint_cfg.baseline_index = cfg.baseline_strategy;
  stint_cfg.jobs = cfg.jobs;
  stint_cfg.mc_opt = sim_options(cfg);
  stint_cfg.tree_opt.proximity_m = cfg.proximity_m;

  auto report = sdp::evaluate_stint(strategies, setup.grid, setup.dists, setup.table, setup.ref,
                                    trk, setup.ego.car_class, stint_cfg);
  for (const auto& w : report.warnings) result.warnings.push_back(w);

  write_artifact(cfg, "stint", "stint.csv", sdp::stint_csv(report), result);
  nlohmann::json rep{{"total_gain_s", report.total_gain},
                     {"mean_gain_s", report.mean_gain},
                     {"ci90_low_s", report.ci_low},
                     {"ci90_high_s", report.ci_high},
                     {"runs", report.run_gains.size()}};
  write_artifact(cfg, "stint", "stint.json", rep.dump(2) + "\n", result);
  write_manifest(cfg, "stint", inputs, result, true);
  return result;
}

std::vector<StageResult> run_stages(const RunConfig& cfg) {
  std::vector<std::string> stages = cfg.stages;
  if (stages.empty()) {
    if (cfg.sector_times.empty()) stages.push_back("synth");
    stages.insert(stages.end(), {"ingest", "stats", "optimize", "simulate", "evaluate", "stint"});
  }
  std::vector<StageResult> out;
  for (const auto& stage : stages) {
    if (stage == "synth") out.push_back(cmd_synth(cfg));
    else if (stage == "ingest") out.push_back(cmd_ingest(cfg));
    else if (stage == "stats") out.push_back(cmd_stats(cfg));
    else if (stage == "optimize") out.push_back(cmd_optimize(cfg));
    else if (stage == "simulate") out.push_back(cmd_simulate(cfg));
    else if (stage == "evaluate") out.push_back(cmd_evaluate(cfg));
    else if (stage == "stint") out.push_back(cmd_stint(cfg));
    else fail("unknown stage '" + stage + "'");
  }
  return out;
}

}  // namespace lapstrat::pipeline
