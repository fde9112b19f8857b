#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "lapstrat/ingest.hpp"

using namespace lapstrat;
using namespace lapstrat::ingest;

namespace {

// Reference density-based clustering: reachability closure over core points,
// written independently of the production routine. Noise = -1; clusters are
// relabeled canonically for comparison.
std::vector<int> reference_clustering(const std::vector<double>& pts, double eps, int min_pts) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::vector<int>> nbr(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (std::abs(pts[i] - pts[j]) <= eps) nbr[i].push_back(j);
  std::vector<bool> core(n);
  for (int i = 0; i < n; ++i) core[i] = static_cast<int>(nbr[i].size()) >= min_pts;

  // union-find over density-connected core points
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i) parent[i] = i;
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int i = 0; i < n; ++i)
    if (core[i])
      for (int j : nbr[i])
        if (core[j]) parent[find(i)] = find(j);

  std::vector<int> label(n, -1);
  // border points attach to some reachable core point; membership (not the
  // specific tie-break) is what we compare
  for (int i = 0; i < n; ++i) {
    if (core[i]) {
      label[i] = find(i);
    } else {
      for (int j : nbr[i])
        if (core[j]) {
          label[i] = find(j);
          break;
        }
    }
  }
  return label;
}

// canonical form: relabel clusters by first appearance
std::vector<int> canon(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    auto [it, fresh] = remap.try_emplace(l, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

SectorTimeRecord rec(int car, int lap, double s1, double s2, double s3, bool stop = false) {
  SectorTimeRecord r;
  r.car_number = car;
  r.lap = lap;
  r.stop_flag = stop ? "B" : "";
  r.s1 = s1;
  r.s2 = s2;
  r.s3 = s3;
  r.elapsed = 100.0 * lap;
  r.car_class = CarClass::LMP1;
  return r;
}

bool was_rejected(const CleanedLapSet& res, int car, int lap, RejectReason why) {
  for (const auto& r : res.rejected)
    if (r.car_number == car && r.lap == lap && r.reason == why) return true;
  return false;
}

}  // namespace

TEST_CASE("clustering flags isolated points as noise") {
  std::vector<double> pts = {30.0, 30.1, 30.2, 29.9, 30.05, 45.0};
  auto labels = dbscan(pts, 2.0, 5);
  for (int i = 0; i < 5; ++i) CHECK(labels[i] == 0);
  CHECK(labels[5] == -1);
}

TEST_CASE("clustering needs min_pts neighbors to form a cluster") {
  std::vector<double> pts = {10.0, 10.1, 10.2, 10.3};
  CHECK(dbscan(pts, 2.0, 5) == std::vector<int>(4, -1));
  // with min_pts 4 the same points form one cluster
  auto labels = dbscan(pts, 2.0, 4);
  CHECK(labels == std::vector<int>(4, 0));
}

TEST_CASE("clustering matches the reference implementation on random data") {
  std::mt19937 rng(20260814);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> n_dist(1, 60);
    std::uniform_real_distribution<double> mode_dist(25.0, 40.0);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::uniform_real_distribution<double> wide(20.0, 120.0);
    int n = n_dist(rng);
    std::vector<double> pts;
    double m1 = mode_dist(rng), m2 = mode_dist(rng) + 15.0;
    for (int i = 0; i < n; ++i) {
      int kind = std::uniform_int_distribution<int>(0, 5)(rng);
      if (kind <= 2)
        pts.push_back(m1 + jitter(rng));
      else if (kind <= 4)
        pts.push_back(m2 + jitter(rng));
      else
        pts.push_back(wide(rng));
    }
    double eps = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
    int min_pts = std::uniform_int_distribution<int>(1, 7)(rng);
    auto got = dbscan(pts, eps, min_pts);
    auto want = reference_clustering(pts, eps, min_pts);

    REQUIRE(got.size() == want.size());
    // noise sets must agree exactly
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK((got[i] < 0) == (want[i] < 0));
    // cluster partitions must agree up to relabeling
    auto gc = canon(got);
    std::map<int, std::set<std::size_t>> by_got, by_want;
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i] >= 0) by_got[gc[i]].insert(i);
      if (want[i] >= 0) by_want[canon(want)[i]].insert(i);
    }
    REQUIRE(by_got.size() == by_want.size());
    std::set<std::set<std::size_t>> sg, sw;
    for (auto& [k, v] : by_got) sg.insert(v);
    for (auto& [k, v] : by_want) sw.insert(v);
    CHECK(sg == sw);
  }
}

TEST_CASE("clustering validates inputs") {
  CHECK_THROWS(dbscan({1.0}, 0.0, 5));
  CHECK_THROWS(dbscan({1.0}, 2.0, 0));
  CHECK(dbscan({}, 2.0, 5).empty());
}

TEST_CASE("lap cleaning keeps laps whose three sectors sit in the fastest clusters") {
  std::vector<SectorTimeRecord> recs;
  // 8 normal laps around (30, 40, 28)
  for (int lap = 1; lap <= 8; ++lap)
    recs.push_back(rec(7, lap, 30.0 + 0.05 * lap, 40.0 - 0.03 * lap, 28.0 + 0.02 * lap));
  // a stop lap inside the normal spread
  recs.push_back(rec(7, 9, 30.2, 40.0, 28.1, true));
  // an outlier lap: s2 far away from everything
  recs.push_back(rec(7, 10, 30.1, 95.0, 28.0));

  CleaningConfig cfg;
  auto res = clean_laps(recs, cfg);
  CHECK(res.retained.size() == 8);
  CHECK(res.rejected.size() == 2);
  for (int lap = 1; lap <= 8; ++lap) {
    bool found = false;
    for (const auto& r : res.retained) found |= (r.lap == lap);
    CHECK(found);
  }
  CHECK(was_rejected(res, 7, 9, RejectReason::StopLap));
  CHECK(was_rejected(res, 7, 10, RejectReason::Outlier));
}

TEST_CASE("lap cleaning separates traffic laps into a slower cluster") {
  std::vector<SectorTimeRecord> recs;
  for (int lap = 1; lap <= 6; ++lap)
    recs.push_back(rec(3, lap, 30.0 + 0.01 * lap, 40.0, 28.0));
  // 6 laps consistently ~6s slower in s1 (own dense cluster, not noise)
  for (int lap = 7; lap <= 12; ++lap)
    recs.push_back(rec(3, lap, 36.0 + 0.01 * lap, 40.0, 28.0));

  auto res = clean_laps(recs, {});
  CHECK(res.retained.size() == 6);
  for (const auto& r : res.retained) CHECK(r.lap <= 6);
  for (int lap = 7; lap <= 12; ++lap)
    CHECK(was_rejected(res, 3, lap, RejectReason::NonFastestCluster));
}

TEST_CASE("cars with too few laps are rejected entirely") {
  std::vector<SectorTimeRecord> recs;
  for (int lap = 1; lap <= 3; ++lap) recs.push_back(rec(5, lap, 30, 40, 28));
  auto res = clean_laps(recs, {});
  CHECK(res.retained.empty());
  CHECK(res.rejected.size() == 3);
  for (const auto& r : res.rejected) CHECK(r.reason == RejectReason::Outlier);
  CHECK(res.warnings.size() == 1);
}

TEST_CASE("sector table parses and round-trips") {
  std::string text =
      "car,lap,stop,s1,s2,s3,elapsed,class,group,team\n"
      "7,1,,30.123,40.5,28.0,98.623,LMP1,H,Alpha\n"
      "7,2,B,31.0,41.0,29.0,199.623,LMGTE Pro,P,Beta\n";
  auto recs = parse_sector_times_string(text, "mem");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].car_number == 7);
  CHECK(recs[0].s1 == 30.123);
  CHECK(recs[0].stop_flag.empty());
  CHECK_FALSE(recs[1].stop_flag.empty());
  CHECK(recs[1].car_class == CarClass::LMGTE_Pro);
  CHECK(recs[0].lap_time() == doctest::Approx(98.623));

  auto again = parse_sector_times_string(sector_times_to_string(recs), "mem2");
  REQUIRE(again.size() == 2);
  CHECK(again[1].car_class == CarClass::LMGTE_Pro);
  CHECK(again[0].s2 == doctest::Approx(40.5));
}

TEST_CASE("sector table rejects malformed rows with context") {
  CHECK_THROWS_WITH(parse_sector_times_string("car,lap,stop,s1,s2,s3,elapsed,class\n"
                                              "7,1,0,-3.0,40,28,98,LMP1\n",
                                              "bad"),
                    doctest::Contains("row 1"));
  CHECK_THROWS(parse_sector_times_string("car,lap\n7,1\n", "bad"));
  CHECK_THROWS(car_class_from_string("LMP9"));
  CHECK(car_class_from_string("LMGTE_Am") == CarClass::LMGTE_Am);
}
