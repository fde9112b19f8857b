#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "lapstrat/stats.hpp"

using namespace lapstrat;
using namespace lapstrat::stats;
using ingest::CarClass;

namespace {

// piecewise-constant reference: three sectors at constant speed, chosen so
// the sector times land on round values
ReferenceProfile three_speed_profile(const track::TrackGeometry& g, double t1, double t2,
                                     double t3) {
  ReferenceProfile p;
  double b1 = g.sector_start(2), b2 = g.sector_start(3);
  double v1 = b1 / t1, v2 = (b2 - b1) / t2, v3 = (g.length - b2) / t3;
  for (double s = 0.0; s <= g.length + 1e-9; s += g.delta_s) {
    p.s.push_back(s);
    p.v.push_back(s < b1 ? v1 : s < b2 ? v2 : v3);
  }
  p.sector_times = {t1, t2, t3};
  return p;
}

PositionTrace scripted(int car, CarClass cls, const std::vector<double>& pos, double dt = 0.1) {
  PositionTrace t;
  t.car_number = car;
  t.car_class = cls;
  t.t0 = 0.0;
  t.dt = dt;
  t.pos = pos;
  return t;
}

ingest::SectorTimeRecord lap_record(int car, int lap, double s1, double s2, double s3,
                                    double elapsed) {
  ingest::SectorTimeRecord r;
  r.car_number = car;
  r.lap = lap;
  r.s1 = s1;
  r.s2 = s2;
  r.s3 = s3;
  r.elapsed = elapsed;
  r.car_class = CarClass::LMP1;
  return r;
}

}  // namespace

TEST_CASE("speed scaling: identity, linearity, and the printed-ratio direction") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  ReferenceProfile ref = three_speed_profile(g, 33.978, 40.0, 30.0);
  ref.validate(g);

  auto same = reconstruct_speed(ref, ref.sector_times, g);
  CHECK(same == ref.v);

  std::array<double, 3> twice = {2 * 33.978, 80.0, 60.0};
  auto half = reconstruct_speed(ref, twice, g);
  for (std::size_t k = 0; k < half.size(); ++k)
    CHECK(half[k] == doctest::Approx(0.5 * ref.v[k]).epsilon(1e-12));
  auto t_half = lethargy_sector_times(ref, twice, g);
  for (int i = 0; i < 3; ++i)
    CHECK(t_half[static_cast<std::size_t>(i)] ==
          doctest::Approx(2.0 * lethargy_sector_times(ref, ref.sector_times,
                                                      g)[static_cast<std::size_t>(i)])
              .epsilon(1e-12));

  // a slower competitor must come out slower
  std::array<double, 3> competitor = {40.246, 40.0, 30.0};
  auto scaled = reconstruct_speed(ref, competitor, g);
  for (std::size_t k = 0; k < scaled.size(); ++k) {
    if (g.sector_at(ref.s[k]) == 1)
      CHECK(scaled[k] / ref.v[k] == doctest::Approx(33.978 / 40.246).epsilon(1e-12));
    else
      CHECK(scaled[k] == ref.v[k]);
  }
  CHECK(33.978 / 40.246 == doctest::Approx(0.8443).epsilon(2e-4));
}

TEST_CASE("scaling round-trip reproduces arbitrary sector times within 1 percent") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  ReferenceProfile ref = three_speed_profile(g, 33.978, 40.0, 30.0);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> scale(0.6, 1.8);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<double, 3> times = {33.978 * scale(rng), 40.0 * scale(rng), 30.0 * scale(rng)};
    auto integ = lethargy_sector_times(ref, times, g);
    for (int i = 0; i < 3; ++i) {
      auto u = static_cast<std::size_t>(i);
      CHECK(std::abs(integ[u] - times[u]) <= 0.01 * times[u]);
    }
  }
  CHECK_THROWS(reconstruct_speed(ref, {0.0, 40.0, 30.0}, g));
  CHECK_THROWS(reconstruct_speed(ref, {30.0, -1.0, 30.0}, g));
}

TEST_CASE("profile validation rejects inconsistent sector times") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  ReferenceProfile ref = three_speed_profile(g, 30.0, 40.0, 30.0);
  ref.sector_times[0] = 35.0;  // 16% off the integral of sector 1
  CHECK_THROWS(ref.validate(g));
  ReferenceProfile ok = three_speed_profile(g, 30.0, 40.0, 30.0);
  CHECK_NOTHROW(ok.validate(g));
  ok.v[5] = -1.0;
  CHECK_THROWS(ok.validate(g));
}

TEST_CASE("position traces anchor laps at the recorded elapsed times") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  ReferenceProfile ref = three_speed_profile(g, 20.0, 15.0, 15.0);  // constant 20 m/s
  std::vector<ingest::SectorTimeRecord> recs = {
      lap_record(7, 1, 20.0, 15.0, 25.0, 60.0),
      lap_record(7, 2, 20.0, 15.0, 25.0, 120.0),
      lap_record(7, 3, 20.0, 15.0, 25.0, 180.0),
  };
  auto traces = build_position_traces(recs, ref, g, 0.1);
  REQUIRE(traces.size() == 1);
  const auto& tr = traces[0];
  CHECK(tr.car_number == 7);

  CHECK(tr.position_at(0.0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(tr.position_at(60.0) == doctest::Approx(1000.0).epsilon(1e-9));
  CHECK(tr.position_at(120.0) == doctest::Approx(2000.0).epsilon(1e-9));
  // sector boundaries hit at the per-sector times
  CHECK(tr.position_at(20.0) == doctest::Approx(400.0).epsilon(1e-9));
  CHECK(tr.position_at(35.0) == doctest::Approx(700.0).epsilon(1e-9));
  // sector 3 runs at 300 m / 25 s = 12 m/s
  CHECK(tr.position_at(50.0) - tr.position_at(40.0) == doctest::Approx(120.0).epsilon(1e-6));
  // monotone
  for (std::size_t k = 1; k < tr.pos.size(); ++k)
    if (tr.valid_at(k) && tr.valid_at(k - 1)) CHECK(tr.pos[k] > tr.pos[k - 1]);
}

TEST_CASE("a missing lap leaves a hole in the trace") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  ReferenceProfile ref = three_speed_profile(g, 20.0, 15.0, 15.0);
  std::vector<ingest::SectorTimeRecord> recs = {
      lap_record(7, 1, 20.0, 15.0, 15.0, 50.0),
      lap_record(7, 3, 20.0, 15.0, 15.0, 150.0),
  };
  auto traces = build_position_traces(recs, ref, g, 0.1);
  const auto& tr = traces[0];
  CHECK(tr.valid_at(100));               // t=10, inside lap 1
  CHECK_FALSE(tr.valid_at(700));         // t=70, inside the removed lap 2
  CHECK(tr.valid_at(1100));              // t=110, inside lap 3
  CHECK(tr.position_at(110.0) == doctest::Approx(2200.0).epsilon(1e-6));
}

TEST_CASE("free sectors: a lone car is always free") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  ReferenceProfile ref = three_speed_profile(g, 20.0, 15.0, 15.0);
  std::vector<ingest::SectorTimeRecord> recs;
  for (int lap = 1; lap <= 4; ++lap)
    recs.push_back(lap_record(7, lap, 20.0, 15.0, 15.0, 50.0 * lap));
  auto traces = build_position_traces(recs, ref, g, 0.1);
  auto result = extract_free_sector_times(traces, g);
  REQUIRE(result.cars.size() == 1);
  for (int sec = 0; sec < 3; ++sec) {
    const auto& times = result.cars[0].times[static_cast<std::size_t>(sec)];
    CHECK(times.size() >= 3);  // edge laps may lack interpolable boundaries
    double want = sec == 0 ? 20.0 : 15.0;
    for (double t : times) CHECK(t == doctest::Approx(want).epsilon(1e-6));
  }
  CHECK(result.flags.empty());
}

TEST_CASE("free sectors: a follower locked 50 m behind is never free") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  std::vector<double> leader, follower;
  for (int k = 0; k <= 3000; ++k) {
    double t = 0.1 * k;
    leader.push_back(50.0 + 20.0 * t);
    follower.push_back(0.0 + 20.0 * t);
  }
  auto traces = std::vector<PositionTrace>{scripted(1, CarClass::LMP1, leader),
                                           scripted(2, CarClass::LMP1, follower)};
  auto result = extract_free_sector_times(traces, g);
  REQUIRE(result.cars.size() == 2);
  std::size_t leader_total = 0, follower_total = 0;
  for (int sec = 0; sec < 3; ++sec) {
    leader_total += result.cars[0].times[static_cast<std::size_t>(sec)].size();
    follower_total += result.cars[1].times[static_cast<std::size_t>(sec)].size();
  }
  CHECK(leader_total > 10);  // nearest car ahead is 950 m away
  CHECK(follower_total == 0);
  CHECK(result.flags.size() == 3);
}

TEST_CASE("free sectors match a brute-force sample scan on random traffic") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  std::mt19937 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PositionTrace> traces;
    std::uniform_real_distribution<double> v0(18.0, 42.0), start(0.0, 900.0);
    for (int c = 0; c < 3; ++c) {
      std::vector<double> pos;
      double p = start(rng), v = v0(rng);
      for (int k = 0; k <= 4000; ++k) {
        pos.push_back(p);
        if (k % 200 == 0) v = v0(rng);
        p += v * 0.1;
      }
      traces.push_back(scripted(c + 1, CarClass::LMP1, pos));
    }
    auto result = extract_free_sector_times(traces, g, 100.0);

    // oracle: classify each (lap, sector) run of samples, skipping runs the
    // trace does not fully enclose (no interpolable entry or exit boundary)
    for (std::size_t i = 0; i < traces.size(); ++i) {
      std::map<std::pair<long, int>, bool> oracle;
      for (std::size_t k = 0; k < traces[i].pos.size(); ++k) {
        double p = traces[i].pos[k];
        long lap = static_cast<long>(std::floor(p / g.length));
        double s = p - static_cast<double>(lap) * g.length;
        double gap = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < traces.size(); ++j) {
          if (j == i) continue;
          double d = std::fmod(traces[j].pos[k] - p, g.length);
          if (d < 0) d += g.length;
          gap = std::min(gap, d);
        }
        auto [it, fresh] = oracle.try_emplace(std::make_pair(lap, g.sector_at(s)), true);
        it->second = it->second && gap >= 100.0;
      }
      double p_first = traces[i].pos.front(), p_last = traces[i].pos.back();
      std::array<std::size_t, 3> want{};
      for (const auto& [key, free] : oracle) {
        double base = static_cast<double>(key.first) * g.length;
        double a = base + g.sector_start(key.second);
        double b = key.second == 3 ? base + g.length : base + g.sector_start(key.second + 1);
        if (a < p_first || b > p_last) continue;
        if (free) want[static_cast<std::size_t>(key.second - 1)]++;
      }
      for (int sec = 0; sec < 3; ++sec)
        CHECK(result.cars[i].times[static_cast<std::size_t>(sec)].size() ==
              want[static_cast<std::size_t>(sec)]);
    }
  }
}

TEST_CASE("raising the gap threshold never adds free traversals") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  std::mt19937 rng(9);
  std::vector<PositionTrace> traces;
  std::uniform_real_distribution<double> v0(18.0, 42.0), start(0.0, 900.0);
  for (int c = 0; c < 4; ++c) {
    std::vector<double> pos;
    double p = start(rng), v = v0(rng);
    for (int k = 0; k <= 3000; ++k) {
      pos.push_back(p);
      if (k % 150 == 0) v = v0(rng);
      p += v * 0.1;
    }
    traces.push_back(scripted(c + 1, CarClass::LMP1, pos));
  }
  auto loose = extract_free_sector_times(traces, g, 60.0);
  auto tight = extract_free_sector_times(traces, g, 140.0);
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (int sec = 0; sec < 3; ++sec)
      CHECK(tight.cars[i].times[static_cast<std::size_t>(sec)].size() <=
            loose.cars[i].times[static_cast<std::size_t>(sec)].size());
}

namespace {

// B cruises at 10 m/s; A sits gap(t) behind. Episodes are placed in section
// 3 of the oval ([166.7, 250) m). pass=true scripts the gap through zero.
std::vector<PositionTrace> episode_traces(int episodes, int passes) {
  std::vector<double> pa, pb;
  for (int k = 0;; ++k) {
    double t = 0.1 * k;
    auto block = static_cast<int>(t / 100.0);
    if (block >= episodes) break;
    double tb = t - 100.0 * block;
    double gap = 11.0;
    bool pass = block < passes;
    if (tb >= 18.0 && tb <= 23.0) {
      if (pass) {
        gap = tb <= 21.5 ? 11.0 - 13.0 * (tb - 18.0) / 3.5 : -2.0 + 13.0 * (tb - 21.5) / 1.5;
      } else {
        gap = tb <= 20.5 ? 11.0 - 5.0 * (tb - 18.0) / 2.5 : 6.0 + 5.0 * (tb - 20.5) / 2.5;
      }
    }
    pb.push_back(10.0 * t);
    pa.push_back(10.0 * t - gap);
  }
  return {scripted(1, CarClass::LMP1, pa), scripted(2, CarClass::LMP2, pb)};
}

}  // namespace

TEST_CASE("overtaking table: 7 passes in 10 scripted episodes give 0.7") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  auto traces = episode_traces(10, 7);
  auto table = compute_overtaking_probabilities(traces, g, 10.0);
  auto p = table.probability(CarClass::LMP1, CarClass::LMP2, 3);
  REQUIRE(p.has_value());
  CHECK(*p == doctest::Approx(0.7).epsilon(1e-12));
  auto c = table.counts.at({CarClass::LMP1, CarClass::LMP2, 3});
  CHECK(c.xi == 7);
  CHECK(c.phi == 10);
  // sections without opportunities stay no-data
  CHECK_FALSE(table.probability(CarClass::LMP1, CarClass::LMP2, 7).has_value());
  CHECK_FALSE(table.probability(CarClass::LMGTE_Am, CarClass::LMP1, 3).has_value());
  for (const auto& [key, counts] : table.counts) {
    CHECK(counts.xi >= 0);
    CHECK(counts.xi <= counts.phi);
  }
}

TEST_CASE("a pass is credited to the section containing the crossing point") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  // section boundary between 3 and 4 sits at 250 m
  for (double cross_at : {249.0, 251.0}) {
    std::vector<double> pa, pb;
    for (int k = 0; k <= 600; ++k) {
      double t = 0.1 * k;
      pb.push_back(200.0 + 10.0 * t);
      // gap hits zero exactly where the leader sits at cross_at
      double gap = std::max(std::min(cross_at - pb.back(), 5.0), -3.0);
      pa.push_back(pb.back() - gap);
    }
    auto traces = std::vector<PositionTrace>{scripted(1, CarClass::LMP1, pa),
                                             scripted(2, CarClass::LMP2, pb)};
    auto table = compute_overtaking_probabilities(traces, g, 10.0);
    int want_section = g.section_at(cross_at);
    auto c = table.counts.find({CarClass::LMP1, CarClass::LMP2, want_section});
    REQUIRE(c != table.counts.end());
    CHECK(c->second.xi == 1);
    int other = cross_at < 250.0 ? 4 : 3;
    auto o = table.counts.find({CarClass::LMP1, CarClass::LMP2, other});
    if (o != table.counts.end()) CHECK(o->second.xi == 0);
  }
}

TEST_CASE("raising the proximity threshold never removes opportunities") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  auto traces = episode_traces(10, 4);
  auto narrow = compute_overtaking_probabilities(traces, g, 6.0);
  auto wide = compute_overtaking_probabilities(traces, g, 14.0);
  for (const auto& [key, c] : narrow.counts) {
    auto it = wide.counts.find(key);
    REQUIRE(it != wide.counts.end());
    CHECK(it->second.phi >= c.phi);
  }
}

TEST_CASE("probability table serialization round-trips") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  auto table = compute_overtaking_probabilities(episode_traces(6, 3), g, 10.0);
  auto again = parse_probability_table(table.to_string(), "mem");
  REQUIRE(again.counts.size() == table.counts.size());
  for (const auto& [key, c] : table.counts) {
    auto it = again.counts.find(key);
    REQUIRE(it != again.counts.end());
    CHECK(it->second.xi == c.xi);
    CHECK(it->second.phi == c.phi);
  }
  CHECK_THROWS(parse_probability_table("follower,leader,section,xi,phi,p\nLMP1,LMP2,3,5,2,\n",
                                       "bad"));
}
