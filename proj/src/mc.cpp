#include "lapstrat/mc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "lapstrat/common.hpp"

namespace lapstrat::mc {

void RaceState::validate() const {
  std::set<int> numbers;
  std::set<double> positions;
  for (const auto& car : cars) {
    if (!numbers.insert(car.car_number).second)
      throw McError("duplicate car number " + std::to_string(car.car_number));
    if (!positions.insert(car.position_m).second)
      throw McError("cars share position " + fmt_double(car.position_m));
  }
}

std::size_t SimTrace::car_index(int car_number) const {
  for (std::size_t i = 0; i < car_numbers.size(); ++i)
    if (car_numbers[i] == car_number) return i;
  throw McError("car " + std::to_string(car_number) + " not in trace");
}

std::array<double, 3> sample_free_lap(const stats::FreeSectorDistribution& competitor,
                                      std::mt19937_64& rng) {
  std::array<double, 3> out{};
  for (int s = 0; s < 3; ++s) {
    const auto& pool = competitor.times[static_cast<std::size_t>(s)];
    if (pool.empty())
      throw McError("car " + std::to_string(competitor.car_number) + " has no free times for sector " +
                    std::to_string(s + 1));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out[static_cast<std::size_t>(s)] = pool[pick(rng)];
  }
  return out;
}

namespace {

struct CarSim {
  int number = 0;
  ingest::CarClass cls = ingest::CarClass::LMP1;
  double pos = 0.0;
  double start_pos = 0.0;
  const stats::FreeSectorDistribution* dist = nullptr;
  // per absolute lap index, speed scale factor per sector
  std::vector<std::array<double, 3>> factors;
  // true from the moment the car is held up by the one ahead until it
  // either passes or drops out of influence range
  bool episode = false;
};

double ref_speed(const stats::ReferenceProfile& ref, double wrapped) {
  double ds = ref.s[1] - ref.s[0];
  auto k = static_cast<std::size_t>(wrapped / ds);
  if (k + 1 >= ref.s.size()) k = ref.s.size() - 2;
  double w = (wrapped - ref.s[k]) / ds;
  return ref.v[k] * (1.0 - w) + ref.v[k + 1] * w;
}

}  // namespace

SimTrace simulate(const RaceState& initial, const std::vector<stats::FreeSectorDistribution>& dists,
                  const stats::OvertakingProbabilityTable& table,
                  const stats::ReferenceProfile& ref, const track::TrackGeometry& g,
                  std::uint64_t seed, const SimOptions& opt) {
  initial.validate();
  if (initial.cars.empty()) throw McError("no cars to simulate");
  if (opt.horizon_laps < 1) throw McError("horizon must cover at least one lap");
  ref.validate(g);

  std::mt19937_64 rng(seed);
  const double L = g.length;

  std::vector<CarSim> cars(initial.cars.size());
  for (std::size_t i = 0; i < cars.size(); ++i) {
    cars[i].number = initial.cars[i].car_number;
    cars[i].cls = initial.cars[i].car_class;
    cars[i].pos = initial.cars[i].position_m;
    cars[i].start_pos = cars[i].pos;
    for (const auto& d : dists)
      if (d.car_number == cars[i].number) cars[i].dist = &d;
    if (!cars[i].dist)
      throw McError("no free sector distribution for car " + std::to_string(cars[i].number));
  }

  auto ensure_lap = [&](CarSim& car, std::size_t lap_idx) {
    while (car.factors.size() <= lap_idx) {
      auto times = sample_free_lap(*car.dist, rng);
      std::array<double, 3> f{};
      for (int s = 0; s < 3; ++s) {
        if (times[static_cast<std::size_t>(s)] <= 0)
          throw McError("car " + std::to_string(car.number) + " drew a non-positive sector time");
        f[static_cast<std::size_t>(s)] =
            ref.sector_times[static_cast<std::size_t>(s)] / times[static_cast<std::size_t>(s)];
      }
      car.factors.push_back(f);
    }
  };

  auto speed_at = [&](CarSim& car, double pos) {
    double wrapped = pos - L * std::floor(pos / L);
    auto lap_idx = static_cast<std::size_t>(std::floor(pos / L));
    ensure_lap(car, lap_idx);
    auto sec = static_cast<std::size_t>(g.sector_at(wrapped) - 1);
    return ref_speed(ref, wrapped) * car.factors[lap_idx][sec];
  };

  SimTrace trace;
  trace.t0 = initial.t;
  trace.dt = opt.dt;
  trace.seed = seed;
  trace.positions.resize(cars.size());
  for (const auto& car : cars) {
    trace.car_numbers.push_back(car.number);
    trace.car_classes.push_back(car.cls);
  }
  for (std::size_t i = 0; i < cars.size(); ++i) trace.positions[i].push_back(cars[i].pos);

  std::set<std::tuple<ingest::CarClass, ingest::CarClass, int>> missing;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  double worst_lap = 0.0;
  for (const auto& car : cars) {
    double lap_t = 0.0;
    for (int s = 0; s < 3; ++s) {
      const auto& pool = car.dist->times[static_cast<std::size_t>(s)];
      if (pool.empty())
        throw McError("car " + std::to_string(car.number) + " has no free times for sector " +
                      std::to_string(s + 1));
      lap_t += *std::max_element(pool.begin(), pool.end());
    }
    worst_lap = std::max(worst_lap, lap_t);
  }
  auto max_steps =
      static_cast<std::size_t>(std::ceil(3.0 * (opt.horizon_laps + 2) * worst_lap / opt.dt));

  auto wrap = [&](double p) { return p - L * std::floor(p / L); };
  // on-track distance from `from` forward to `to`, in [0, L)
  auto wgap = [&](double from, double to) {
    double d = std::fmod(to - from, L);
    if (d < 0) d += L;
    return d;
  };

  {
    std::set<double> on_track;
    for (const auto& car : cars)
      if (!on_track.insert(wrap(car.pos)).second)
        throw McError("two cars share the same on-track position " + fmt_double(wrap(car.pos)));
  }

  std::vector<std::size_t> order(cars.size());
  std::vector<double> new_pos(cars.size());
  const std::size_t n = cars.size();
  double goal = opt.horizon_laps * L;

  for (std::size_t step = 0; step < max_steps; ++step) {
    bool done = true;
    for (const auto& car : cars) done = done && car.pos - car.start_pos >= goal;
    if (done) break;

    // ring of cars in on-track order; each one's leader is the next around
    // the ring, so lapping encounters between classes are seen too. The
    // update chain is broken at the widest gap, where interaction is
    // weakest, and walks backward so every follower reacts to an already
    // moved leader.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return wrap(cars[a].pos) < wrap(cars[b].pos);
    });
    std::size_t start_rank = 0;
    double widest = -1.0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      double gap = wgap(cars[order[rank]].pos, cars[order[(rank + 1) % n]].pos);
      if (gap > widest) {
        widest = gap;
        start_rank = rank;
      }
    }

    double t_next = trace.t0 + static_cast<double>(step + 1) * opt.dt;
    for (std::size_t back = 0; back < n; ++back) {
      auto rank = (start_rank + n - back) % n;
      auto i = order[rank];
      CarSim& car = cars[i];

      int sec_old = g.section_at(wrap(car.pos));
      double advance = speed_at(car, car.pos) * opt.dt;
      if (back == 0 || n == 1) {
        new_pos[i] = car.pos + advance;
        continue;
      }

      auto j = order[(rank + 1) % n];
      double gap = wgap(car.pos, cars[j].pos);
      if (car.episode && gap > opt.influence_m) car.episode = false;
      // a car never slips past the one ahead without a logged pass; while
      // held at the follow gap it moves at the leader's realized pace
      double allowed = std::max(0.0, wgap(car.pos, new_pos[j]) - opt.follow_gap_m);
      if (advance > allowed) car.episode = true;
      double candidate = car.pos + std::min(advance, allowed);
      int sec_new = g.section_at(wrap(candidate));

      if (sec_new != sec_old && car.episode) {
        double u = u01(rng);
        auto p = table.probability(car.cls, cars[j].cls, sec_new);
        if (!p && missing.emplace(car.cls, cars[j].cls, sec_new).second)
          trace.warnings.push_back("no overtaking data for " + ingest::to_string(car.cls) +
                                   " behind " + ingest::to_string(cars[j].cls) + " in section " +
                                   std::to_string(sec_new) + "; treating as zero");
        EncounterEvent ev;
        ev.t = t_next;
        ev.s = g.section_start(sec_new);
        ev.section = sec_new;
        ev.follower = car.number;
        ev.leader = cars[j].number;
        ev.drawn_u = u;
        ev.p_used = p.value_or(0.0);
        if (u < ev.p_used) {
          ev.outcome = EncounterOutcome::Overtake;
          candidate = car.pos + wgap(car.pos, new_pos[j]) + opt.swap_gap_m;
          car.episode = false;
        } else {
          ev.outcome = EncounterOutcome::Follow;
        }
        trace.events.push_back(ev);
      }
      new_pos[i] = candidate;
    }

    for (std::size_t i = 0; i < cars.size(); ++i) {
      cars[i].pos = new_pos[i];
      trace.positions[i].push_back(cars[i].pos);
    }
  }

  for (const auto& car : cars)
    if (car.pos - car.start_pos < goal)
      throw McError("car " + std::to_string(car.number) + " did not reach the horizon within " +
                    std::to_string(max_steps) + " steps");
  return trace;
}

std::vector<SimTrace> run_batch(const RaceState& initial,
                                const std::vector<stats::FreeSectorDistribution>& dists,
                                const stats::OvertakingProbabilityTable& table,
                                const stats::ReferenceProfile& ref, const track::TrackGeometry& g,
                                int n_sims, std::uint64_t base_seed, const SimOptions& opt,
                                int jobs) {
  if (n_sims < 1) throw McError("n_sims must be at least 1");
  std::vector<SimTrace> traces(static_cast<std::size_t>(n_sims));
  std::vector<std::string> errors(static_cast<std::size_t>(n_sims));
  parallel_for(static_cast<std::size_t>(n_sims), jobs, [&](std::size_t i) {
    try {
      traces[i] = simulate(initial, dists, table, ref, g, base_seed ^ i, opt);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw McError("simulation " + std::to_string(i) + " failed: " + errors[i]);
  return traces;
}

std::string positions_csv(const SimTrace& trace) {
  std::ostringstream out;
  out << "# seed " << trace.seed << "\n";
  out << "# t0 " << fmt_double(trace.t0) << "\n";
  out << "# dt " << fmt_double(trace.dt) << "\n";
  for (std::size_t i = 0; i < trace.car_numbers.size(); ++i)
    out << "# class " << trace.car_numbers[i] << " " << ingest::to_string(trace.car_classes[i])
        << "\n";
  out << "t,car,s\n";
  for (std::size_t k = 0; k < trace.n_steps(); ++k) {
    double t = trace.t0 + static_cast<double>(k) * trace.dt;
    for (std::size_t i = 0; i < trace.car_numbers.size(); ++i)
      out << fmt_double(t) << "," << trace.car_numbers[i] << ","
          << fmt_double(trace.positions[i][k]) << "\n";
  }
  return out.str();
}

std::string events_csv(const SimTrace& trace) {
  std::ostringstream out;
  out << "t,s,section,follower,leader,outcome,drawn_u,p_used\n";
  for (const auto& ev : trace.events)
    out << fmt_double(ev.t) << "," << fmt_double(ev.s) << "," << ev.section << "," << ev.follower
        << "," << ev.leader << ","
        << (ev.outcome == EncounterOutcome::Overtake ? "overtake" : "follow") << ","
        << fmt_double(ev.drawn_u) << "," << fmt_double(ev.p_used) << "\n";
  return out.str();
}

SimTrace trace_from_csv(const std::string& positions_text, const std::string& events_text,
                        const std::string& name) {
  auto tab = read_delimited_string(positions_text, name);
  SimTrace trace;
  std::map<int, ingest::CarClass> classes;
  for (const auto& line : tab.preamble) {
    auto parts = split(trim(line), ' ');
    if (parts.size() == 2 && parts[0] == "seed")
      trace.seed = static_cast<std::uint64_t>(std::stoull(parts[1]));
    else if (parts.size() == 2 && parts[0] == "t0")
      trace.t0 = parse_double(parts[1], name + " t0");
    else if (parts.size() == 2 && parts[0] == "dt")
      trace.dt = parse_double(parts[1], name + " dt");
    else if (parts.size() >= 3 && parts[0] == "class") {
      std::string cls = parts[2];
      for (std::size_t p = 3; p < parts.size(); ++p) cls += " " + parts[p];
      classes[static_cast<int>(parse_long(parts[1], name + " class car"))] =
          ingest::car_class_from_string(cls);
    }
  }
  tab.require_column("t");
  int cc = tab.require_column("car");
  int cs = tab.require_column("s");
  std::map<int, std::size_t> index;
  for (const auto& row : tab.rows) {
    int car = static_cast<int>(parse_long(row[static_cast<std::size_t>(cc)], name + " car"));
    auto it = index.find(car);
    if (it == index.end()) {
      it = index.emplace(car, trace.car_numbers.size()).first;
      trace.car_numbers.push_back(car);
      auto cls = classes.find(car);
      trace.car_classes.push_back(cls == classes.end() ? ingest::CarClass::LMP1 : cls->second);
      trace.positions.emplace_back();
    }
    trace.positions[it->second].push_back(
        parse_double(row[static_cast<std::size_t>(cs)], name + " s"));
  }
  std::size_t steps = trace.positions.empty() ? 0 : trace.positions.front().size();
  for (const auto& series : trace.positions)
    if (series.size() != steps) throw McError(name + ": ragged position series");

  if (!events_text.empty()) {
    auto ev_tab = read_delimited_string(events_text, name + " events");
    int et = ev_tab.require_column("t");
    int es = ev_tab.require_column("s");
    int esec = ev_tab.require_column("section");
    int ef = ev_tab.require_column("follower");
    int el = ev_tab.require_column("leader");
    int eo = ev_tab.require_column("outcome");
    int eu = ev_tab.require_column("drawn_u");
    int ep = ev_tab.require_column("p_used");
    for (const auto& row : ev_tab.rows) {
      EncounterEvent ev;
      ev.t = parse_double(row[static_cast<std::size_t>(et)], name + " event t");
      ev.s = parse_double(row[static_cast<std::size_t>(es)], name + " event s");
      ev.section = static_cast<int>(parse_long(row[static_cast<std::size_t>(esec)], name + " event section"));
      ev.follower = static_cast<int>(parse_long(row[static_cast<std::size_t>(ef)], name + " follower"));
      ev.leader = static_cast<int>(parse_long(row[static_cast<std::size_t>(el)], name + " leader"));
      const auto& outcome = row[static_cast<std::size_t>(eo)];
      if (outcome == "overtake")
        ev.outcome = EncounterOutcome::Overtake;
      else if (outcome == "follow")
        ev.outcome = EncounterOutcome::Follow;
      else
        throw McError(name + ": unknown outcome '" + outcome + "'");
      ev.drawn_u = parse_double(row[static_cast<std::size_t>(eu)], name + " drawn_u");
      ev.p_used = parse_double(row[static_cast<std::size_t>(ep)], name + " p_used");
      trace.events.push_back(ev);
    }
  }
  return trace;
}

}  // namespace lapstrat::mc
