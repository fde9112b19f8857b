#include "lapstrat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <json.hpp>

#include "lapstrat/common.hpp"

namespace lapstrat::synth {

namespace {

// unobstructed time-at-position map of the reference lap, normalized per
// sector so the totals equal the stored sector times (the same convention
// the trace reconstruction uses)
std::vector<double> reference_time_map(const stats::ReferenceProfile& ref,
                                       const track::TrackGeometry& g) {
  std::vector<double> t(ref.s.size(), 0.0);
  for (std::size_t k = 1; k < ref.s.size(); ++k) {
    double ds = ref.s[k] - ref.s[k - 1];
    t[k] = t[k - 1] + ds * 0.5 * (1.0 / ref.v[k] + 1.0 / ref.v[k - 1]);
  }
  // scale each sector span onto the recorded sector times
  std::vector<double> out(t.size(), 0.0);
  double base_in = 0.0, base_out = 0.0;
  for (int sec = 1; sec <= 3; ++sec) {
    double s_end = sec == 3 ? g.length : g.sector_start(sec + 1);
    auto t_at = [&](double s) {
      auto it = std::lower_bound(ref.s.begin(), ref.s.end(), s);
      auto k = static_cast<std::size_t>(std::distance(ref.s.begin(), it));
      if (k == 0) return t[0];
      double w = (s - ref.s[k - 1]) / (ref.s[k] - ref.s[k - 1]);
      return t[k - 1] + w * (t[k] - t[k - 1]);
    };
    double raw = t_at(s_end) - base_in;
    double scale = ref.sector_times[static_cast<std::size_t>(sec - 1)] / raw;
    for (std::size_t k = 0; k < ref.s.size(); ++k)
      if (ref.s[k] > (sec == 1 ? -1.0 : g.sector_start(sec)) && ref.s[k] <= s_end + 1e-9)
        out[k] = base_out + (t[k] - base_in) * scale;
    base_in = t_at(s_end);
    base_out += ref.sector_times[static_cast<std::size_t>(sec - 1)];
  }
  return out;
}

double interp_time_at(const stats::ReferenceProfile& ref, const std::vector<double>& tmap,
                      double s) {
  auto it = std::lower_bound(ref.s.begin(), ref.s.end(), s);
  auto k = static_cast<std::size_t>(std::distance(ref.s.begin(), it));
  if (k == 0) return tmap[0];
  if (k >= tmap.size()) return tmap.back();
  double w = (s - ref.s[k - 1]) / (ref.s[k] - ref.s[k - 1]);
  return tmap[k - 1] + w * (tmap[k] - tmap[k - 1]);
}

struct LapPlan {
  std::array<double, 3> times{};
  std::string stop_flag;
};

std::vector<int> pick_distinct(std::mt19937_64& rng, int count, int laps,
                               std::set<int>& taken) {
  std::vector<int> out;
  std::uniform_int_distribution<int> pick(1, laps);
  while (static_cast<int>(out.size()) < count) {
    int lap = pick(rng);
    if (taken.insert(lap).second) out.push_back(lap);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SynthDataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.laps < cfg.outliers_per_car + cfg.stop_laps_per_car + 5)
    throw SynthError("laps too few to leave a clusterable core per car");
  if (cfg.sector_noise_s < 0) throw SynthError("negative noise level");
  if (cfg.outliers_per_car < 0 || cfg.stop_laps_per_car < 0)
    throw SynthError("negative rejection counts");
  if (cfg.planted_pass_rate < 0 || cfg.planted_pass_rate > 1)
    throw SynthError("planted pass rate must lie in [0, 1]");
  int total = 0;
  for (int n : cfg.cars_per_class) {
    if (n < 0) throw SynthError("negative car count");
    total += n;
  }
  if (total == 0 && cfg.planted_episodes <= 0) throw SynthError("no cars requested");

  SynthDataset ds;
  ds.geometry = track::make_preset(cfg.preset, cfg.delta_s);
  ds.params = vehicle::default_params();
  ds.reference = stats::profile_from_lap(
      vehicle::simulate_lap(ds.geometry, ds.params, vehicle::StrategyBudgets::unlimited(ds.geometry)),
      ds.geometry);
  const auto& g = ds.geometry;
  const auto& ref = ds.reference;

  if (cfg.planted_episodes > 0 &&
      (cfg.planted_section < 1 || cfg.planted_section > g.n_sections))
    throw SynthError("planted section outside the track");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  struct Row {
    double elapsed;
    ingest::SectorTimeRecord rec;
  };
  std::vector<Row> rows;

  auto emit_car = [&](int number, ingest::CarClass cls, double offset,
                      const std::vector<LapPlan>& plan, CarTruth truth) {
    double elapsed = offset;
    int lap = 0;
    for (const auto& lp : plan) {
      ++lap;
      ingest::SectorTimeRecord rec;
      rec.car_number = number;
      rec.lap = lap;
      rec.stop_flag = lp.stop_flag;
      rec.s1 = lp.times[0];
      rec.s2 = lp.times[1];
      rec.s3 = lp.times[2];
      elapsed += rec.lap_time();
      rec.elapsed = elapsed;
      rec.car_class = cls;
      rec.group = ingest::to_string(cls);
      rec.team = "synthetic";
      rows.push_back({elapsed, rec});
    }
    ds.cars.push_back(std::move(truth));
  };

  // independent field: class paces off the reference lap plus per-car spread
  const std::array<double, 4> class_factor{1.02, 1.08, 1.15, 1.21};
  const std::array<int, 4> first_number{1, 31, 61, 91};
  int grid_slot = 0;
  for (int ci = 0; ci < 4; ++ci) {
    auto cls = static_cast<ingest::CarClass>(ci);
    for (int k = 0; k < cfg.cars_per_class[static_cast<std::size_t>(ci)]; ++k) {
      int number = first_number[static_cast<std::size_t>(ci)] + k;
      double factor = class_factor[static_cast<std::size_t>(ci)] + 0.02 * u01(rng);
      CarTruth truth;
      truth.car_number = number;
      truth.car_class = cls;
      for (std::size_t s = 0; s < 3; ++s) truth.base_times[s] = ref.sector_times[s] * factor;

      std::set<int> taken;
      truth.outlier_laps = pick_distinct(rng, cfg.outliers_per_car, cfg.laps, taken);
      truth.stop_laps = pick_distinct(rng, cfg.stop_laps_per_car, cfg.laps, taken);

      std::vector<LapPlan> plan(static_cast<std::size_t>(cfg.laps));
      for (int lap = 1; lap <= cfg.laps; ++lap) {
        auto& lp = plan[static_cast<std::size_t>(lap - 1)];
        for (std::size_t s = 0; s < 3; ++s) {
          double noise = std::clamp(gauss(rng) * cfg.sector_noise_s, -3.0 * cfg.sector_noise_s,
                                    3.0 * cfg.sector_noise_s);
          lp.times[s] = truth.base_times[s] + noise;
        }
      }
      for (int lap : truth.outlier_laps) {
        auto sector = static_cast<std::size_t>(rng() % 3);
        plan[static_cast<std::size_t>(lap - 1)].times[sector] += 8.0 + 10.0 * u01(rng);
      }
      for (int lap : truth.stop_laps) {
        auto& lp = plan[static_cast<std::size_t>(lap - 1)];
        lp.stop_flag = "B";
        lp.times[2] += 25.0 + 15.0 * u01(rng);
      }
      emit_car(number, cls, 30.0 + 9.0 * grid_slot, plan, std::move(truth));
      ++grid_slot;
    }
  }

  // scripted storyline: cars 7 and 44 run at reference pace; on every
  // episode lap the pair compresses below proximity inside the planted
  // section, and on pass laps car 7 crosses at the section midpoint
  if (cfg.planted_episodes > 0) {
    auto tmap = reference_time_map(ref, g);
    double s_lo = g.section_start(cfg.planted_section);
    double s_hi = cfg.planted_section == g.n_sections ? g.length
                                                      : g.section_start(cfg.planted_section + 1);
    double v_min = ref.v[0];
    bool seen = false;
    for (std::size_t k = 0; k < ref.s.size(); ++k)
      if (ref.s[k] >= s_lo && ref.s[k] <= s_hi) {
        v_min = seen ? std::min(v_min, ref.v[k]) : ref.v[k];
        seen = true;
      }
    double tau0 = std::clamp(8.0 / v_min, 0.05, 0.60);
    double s_star = 0.5 * (s_lo + s_hi);
    double t_star = interp_time_at(ref, tmap, s_star);
    int jsec = 3;
    for (int sec = 1; sec < 3; ++sec)
      if (s_star < g.sector_start(sec + 1)) {
        jsec = sec;
        break;
      }
    int rsec = jsec == 3 ? 1 : 3;
    double noise_s = std::min(cfg.sector_noise_s, 0.01);

    long passes_planned = std::lround(cfg.planted_episodes * cfg.planted_pass_rate);
    std::vector<LapPlan> leader_plan, follower_plan;
    double tau = tau0;
    long passes_done = 0;
    for (long ep = 0; ep < cfg.planted_episodes; ++ep) {
      bool pass = (ep + 1) * passes_planned / cfg.planted_episodes > passes_done;
      LapPlan lead;
      for (std::size_t s = 0; s < 3; ++s)
        lead.times[s] = ref.sector_times[s] +
                        std::clamp(gauss(rng) * noise_s, -2.0 * noise_s, 2.0 * noise_s);
      if (!pass) {
        LapPlan fol = lead;
        double fix = (tau0 - tau) / 3.0;
        for (auto& t : fol.times) t += fix;
        leader_plan.push_back(lead);
        follower_plan.push_back(fol);
        tau = tau0;
        continue;
      }
      ++passes_done;
      double eps = tau / t_star;
      LapPlan fol = lead;
      for (int s = 0; s < jsec; ++s) fol.times[static_cast<std::size_t>(s)] *= 1.0 - eps;
      leader_plan.push_back(lead);
      follower_plan.push_back(fol);
      for (std::size_t s = 0; s < 3; ++s) tau += fol.times[s] - lead.times[s];

      // hand the place back well away from the planted section
      LapPlan lead2;
      for (std::size_t s = 0; s < 3; ++s)
        lead2.times[s] = ref.sector_times[s] +
                         std::clamp(gauss(rng) * noise_s, -2.0 * noise_s, 2.0 * noise_s);
      LapPlan fol2 = lead2;
      fol2.times[static_cast<std::size_t>(rsec - 1)] += tau0 - tau;
      leader_plan.push_back(lead2);
      follower_plan.push_back(fol2);
      tau = tau0;
    }

    CarTruth lead_truth;
    lead_truth.car_number = 44;
    lead_truth.car_class = ingest::CarClass::LMGTE_Am;
    lead_truth.base_times = ref.sector_times;
    CarTruth fol_truth;
    fol_truth.car_number = 7;
    fol_truth.car_class = ingest::CarClass::LMP1;
    fol_truth.base_times = ref.sector_times;
    emit_car(44, ingest::CarClass::LMGTE_Am, 0.0, leader_plan, std::move(lead_truth));
    emit_car(7, ingest::CarClass::LMP1, tau0, follower_plan, std::move(fol_truth));

    PlantedTruth planted;
    planted.follower = 7;
    planted.leader = 44;
    planted.section = cfg.planted_section;
    planted.episodes = cfg.planted_episodes;
    planted.passes = passes_done;
    ds.planted = planted;
  }

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.elapsed < b.elapsed; });
  ds.records.reserve(rows.size());
  for (auto& r : rows) ds.records.push_back(std::move(r.rec));
  return ds;
}

std::string truth_to_json(const SynthDataset& ds) {
  nlohmann::json j;
  j["cars"] = nlohmann::json::array();
  for (const auto& car : ds.cars) {
    nlohmann::json c;
    c["car"] = car.car_number;
    c["class"] = ingest::to_string(car.car_class);
    c["base_times"] = car.base_times;
    c["outlier_laps"] = car.outlier_laps;
    c["stop_laps"] = car.stop_laps;
    j["cars"].push_back(std::move(c));
  }
  if (ds.planted) {
    j["planted"] = {{"follower", ds.planted->follower},
                    {"leader", ds.planted->leader},
                    {"section", ds.planted->section},
                    {"episodes", ds.planted->episodes},
                    {"passes", ds.planted->passes}};
  }
  return j.dump(2);
}

std::string write_dataset(const SynthDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  std::string sector_path = path("sector_times.csv");
  write_text_file(sector_path, ingest::sector_times_to_string(ds.records));
  track::save_geometry(ds.geometry, path("geometry.csv"));
  vehicle::save_params(ds.params, path("vehicle_params.csv"));
  stats::save_profile(ds.reference, path("reference_speed.csv"), path("reference_sectors.csv"));
  write_text_file(path("truth.json"), truth_to_json(ds));
  return sector_path;
}

}  // namespace lapstrat::synth
