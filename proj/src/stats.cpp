#include "lapstrat/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lapstrat/common.hpp"

namespace lapstrat::stats {

using ingest::CarClass;

void ReferenceProfile::validate(const track::TrackGeometry& g) const {
  if (s.size() != v.size() || s.size() < 2)
    throw std::runtime_error("reference profile: need matching s/v samples");
  if (s.front() != 0.0 || std::abs(s.back() - g.length) > 1e-9)
    throw std::runtime_error("reference profile: samples must span 0 to the track length");
  double step = s[1] - s[0];
  for (std::size_t k = 0; k + 1 < s.size(); ++k)
    if (std::abs(s[k + 1] - s[k] - step) > 1e-9)
      throw std::runtime_error("reference profile: non-uniform sampling");
  for (double speed : v)
    if (!(speed > 0)) throw std::runtime_error("reference profile: nonpositive speed");
  for (double t : sector_times)
    if (!(t > 0)) throw std::runtime_error("reference profile: nonpositive sector time");
  auto integ = lethargy_sector_times(*this, sector_times, g);
  for (int i = 0; i < 3; ++i)
    if (std::abs(integ[static_cast<std::size_t>(i)] - sector_times[static_cast<std::size_t>(i)]) >
        0.01 * sector_times[static_cast<std::size_t>(i)])
      throw std::runtime_error("reference profile: sector " + std::to_string(i + 1) +
                               " time inconsistent with the speed samples");
}

ReferenceProfile profile_from_lap(const vehicle::LapResult& lap, const track::TrackGeometry& g) {
  ReferenceProfile p;
  p.s.reserve(lap.points.size() + 1);
  p.v.reserve(lap.points.size() + 1);
  for (const auto& q : lap.points) {
    p.s.push_back(q.s);
    p.v.push_back(q.v);
  }
  p.s.push_back(g.length);
  p.v.push_back(lap.v_end);
  double t12 = 0.0, t1 = 0.0;
  for (std::size_t k = 0; k < lap.points.size(); ++k) {
    int sec = g.points[k].sector;
    if (sec == 1) t1 += lap.points[k].dt;
    if (sec <= 2) t12 += lap.points[k].dt;
  }
  p.sector_times = {t1, t12 - t1, lap.lap_time - t12};
  return p;
}

ReferenceProfile load_profile(const std::string& samples_path, const std::string& sectors_path) {
  ReferenceProfile p;
  DelimitedTable t = read_delimited(samples_path);
  int cs = t.require_column("s_m"), cv = t.require_column("v_mps");
  for (const auto& row : t.rows) {
    p.s.push_back(parse_double(row[cs], samples_path));
    p.v.push_back(parse_double(row[cv], samples_path));
  }
  DelimitedTable st = read_delimited(sectors_path);
  int ci = st.require_column("sector"), ct = st.require_column("time_s");
  for (const auto& row : st.rows) {
    int idx = static_cast<int>(parse_long(row[ci], sectors_path));
    if (idx < 1 || idx > 3) throw std::runtime_error(sectors_path + ": sector out of range");
    p.sector_times[static_cast<std::size_t>(idx - 1)] = parse_double(row[ct], sectors_path);
  }
  return p;
}

void save_profile(const ReferenceProfile& p, const std::string& samples_path,
                  const std::string& sectors_path) {
  std::ostringstream out;
  out << "s_m,v_mps\n";
  for (std::size_t k = 0; k < p.s.size(); ++k)
    out << fmt_double(p.s[k]) << ',' << fmt_double(p.v[k]) << "\n";
  write_text_file(samples_path, out.str());
  std::ostringstream sec;
  sec << "sector,time_s\n";
  for (int i = 0; i < 3; ++i)
    sec << (i + 1) << ',' << fmt_double(p.sector_times[static_cast<std::size_t>(i)]) << "\n";
  write_text_file(sectors_path, sec.str());
}

namespace {

std::array<double, 3> scale_factors(const ReferenceProfile& ref,
                                    const std::array<double, 3>& times) {
  std::array<double, 3> f{};
  for (int i = 0; i < 3; ++i) {
    auto u = static_cast<std::size_t>(i);
    if (!(times[u] > 0)) throw std::runtime_error("sector times must be positive");
    f[u] = ref.sector_times[u] / times[u];
  }
  return f;
}

}  // namespace

std::vector<double> reconstruct_speed(const ReferenceProfile& ref,
                                      const std::array<double, 3>& times,
                                      const track::TrackGeometry& g) {
  auto f = scale_factors(ref, times);
  std::vector<double> out(ref.v.size());
  for (std::size_t k = 0; k < ref.v.size(); ++k) {
    int sec = g.sector_at(ref.s[k]);
    out[k] = ref.v[k] * f[static_cast<std::size_t>(sec - 1)];
  }
  return out;
}

std::array<double, 3> lethargy_sector_times(const ReferenceProfile& ref,
                                            const std::array<double, 3>& times,
                                            const track::TrackGeometry& g) {
  auto f = scale_factors(ref, times);
  std::array<double, 3> out{};
  for (std::size_t k = 0; k + 1 < ref.s.size(); ++k) {
    double mid = 0.5 * (ref.s[k] + ref.s[k + 1]);
    auto sec = static_cast<std::size_t>(g.sector_at(mid) - 1);
    double va = ref.v[k] * f[sec], vb = ref.v[k + 1] * f[sec];
    out[sec] += (ref.s[k + 1] - ref.s[k]) * 0.5 * (1.0 / va + 1.0 / vb);
  }
  return out;
}

bool PositionTrace::valid_at(std::size_t k) const {
  return k < pos.size() && !std::isnan(pos[k]);
}

double PositionTrace::position_at(double t) const {
  double x = (t - t0) / dt;
  if (x < 0) return std::numeric_limits<double>::quiet_NaN();
  auto k = static_cast<std::size_t>(x);
  if (k + 1 >= pos.size()) {
    if (k < pos.size() && x == static_cast<double>(k)) return pos[k];
    return std::numeric_limits<double>::quiet_NaN();
  }
  double a = pos[k], b = pos[k + 1];
  double frac = x - static_cast<double>(k);
  return a + frac * (b - a);
}

std::size_t PositionTrace::index_of(double t) const {
  double x = (t - t0) / dt;
  if (x <= 0) return 0;
  return static_cast<std::size_t>(std::ceil(x - 1e-12));
}

std::vector<PositionTrace> build_position_traces(
    const std::vector<ingest::SectorTimeRecord>& retained, const ReferenceProfile& ref,
    const track::TrackGeometry& g, double dt) {
  std::map<int, std::vector<const ingest::SectorTimeRecord*>> by_car;
  for (const auto& r : retained) by_car[r.car_number].push_back(&r);

  double t_max = 0.0;
  for (const auto& r : retained) t_max = std::max(t_max, r.elapsed);

  std::vector<PositionTrace> traces;
  for (auto& [car, laps] : by_car) {
    std::sort(laps.begin(), laps.end(),
              [](const auto* a, const auto* b) { return a->lap < b->lap; });
    PositionTrace tr;
    tr.car_number = car;
    tr.car_class = laps.front()->car_class;
    tr.t0 = 0.0;
    tr.dt = dt;
    tr.pos.assign(static_cast<std::size_t>(std::floor(t_max / dt)) + 1,
                  std::numeric_limits<double>::quiet_NaN());

    for (const auto* rec : laps) {
      std::array<double, 3> times{rec->s1, rec->s2, rec->s3};
      auto f = scale_factors(ref, times);
      // per-interval durations with the owning sector's factor, then exact
      // normalization per sector so boundaries land on the recorded splits
      std::vector<double> dti(ref.s.size() - 1);
      std::array<double, 3> tau{};
      std::vector<std::size_t> owner(dti.size());
      for (std::size_t k = 0; k + 1 < ref.s.size(); ++k) {
        double mid = 0.5 * (ref.s[k] + ref.s[k + 1]);
        auto sec = static_cast<std::size_t>(g.sector_at(mid) - 1);
        owner[k] = sec;
        double va = ref.v[k] * f[sec], vb = ref.v[k + 1] * f[sec];
        dti[k] = (ref.s[k + 1] - ref.s[k]) * 0.5 * (1.0 / va + 1.0 / vb);
        tau[sec] += dti[k];
      }
      for (std::size_t k = 0; k < dti.size(); ++k) dti[k] *= times[owner[k]] / tau[owner[k]];
      double lap_time = rec->lap_time();
      double t_start = rec->elapsed - lap_time;
      double base = (static_cast<double>(rec->lap) - 1.0) * g.length;
      // walk the clock ticks inside [t_start, t_start + lap_time)
      double t_cursor = t_start;
      std::size_t seg = 0;
      double seg_end = t_start + dti[0];
      auto k0 = static_cast<std::size_t>(std::ceil(t_start / dt - 1e-9));
      for (std::size_t k = k0; k < tr.pos.size(); ++k) {
        double t = dt * static_cast<double>(k);
        if (t >= t_start + lap_time - 1e-12) break;
        while (t >= seg_end && seg + 1 < dti.size()) {
          t_cursor = seg_end;
          ++seg;
          seg_end += dti[seg];
        }
        double frac = dti[seg] > 0 ? (t - (seg_end - dti[seg])) / dti[seg] : 0.0;
        (void)t_cursor;
        tr.pos[k] = base + ref.s[seg] + frac * (ref.s[seg + 1] - ref.s[seg]);
      }
    }
    traces.push_back(std::move(tr));
  }
  return traces;
}

namespace {

double wrap_gap(double ahead, double behind, double length) {
  double gap = std::fmod(ahead - behind, length);
  if (gap < 0) gap += length;
  return gap;
}

// distance to the nearest car ahead of trace i at sample k
double nearest_ahead_gap(const std::vector<PositionTrace>& traces, std::size_t i, std::size_t k,
                         double length) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < traces.size(); ++j) {
    if (j == i || !traces[j].valid_at(k)) continue;
    best = std::min(best, wrap_gap(traces[j].pos[k], traces[i].pos[k], length));
  }
  return best;
}

}  // namespace

FreeSectorResult extract_free_sector_times(const std::vector<PositionTrace>& traces,
                                           const track::TrackGeometry& g, double gap_threshold) {
  FreeSectorResult out;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const PositionTrace& tr = traces[i];
    FreeSectorDistribution dist;
    dist.car_number = tr.car_number;

    // find covered lap range
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < tr.pos.size(); ++k)
      if (tr.valid_at(k)) {
        lo = std::min(lo, tr.pos[k]);
        hi = std::max(hi, tr.pos[k]);
      }
    if (!(lo < hi)) {
      out.cars.push_back(std::move(dist));
      continue;
    }

    auto first_lap = static_cast<long>(std::floor(lo / g.length));
    auto last_lap = static_cast<long>(std::floor(hi / g.length));
    for (long lap = first_lap; lap <= last_lap; ++lap) {
      for (int sec = 1; sec <= 3; ++sec) {
        double a = static_cast<double>(lap) * g.length + g.sector_start(sec);
        double b = sec == 3 ? static_cast<double>(lap + 1) * g.length
                            : static_cast<double>(lap) * g.length + g.sector_start(sec + 1);
        // locate entry/exit times on the sampled polyline
        double t_enter = std::numeric_limits<double>::quiet_NaN();
        double t_exit = std::numeric_limits<double>::quiet_NaN();
        bool covered = true;
        for (std::size_t k = 0; k + 1 < tr.pos.size(); ++k) {
          if (!tr.valid_at(k) || !tr.valid_at(k + 1)) continue;
          double p0 = tr.pos[k], p1 = tr.pos[k + 1];
          double t = tr.t0 + tr.dt * static_cast<double>(k);
          if (p0 <= a && a < p1)
            t_enter = t + tr.dt * (a - p0) / (p1 - p0);
          if (p0 < b && b <= p1)
            t_exit = t + tr.dt * (b - p0) / (p1 - p0);
        }
        if (std::isnan(t_enter) || std::isnan(t_exit) || t_exit <= t_enter) continue;
        // every clock sample inside the traversal must be free, and the
        // samples must be contiguous over it
        bool free = true;
        auto k_first = tr.index_of(t_enter);
        for (std::size_t k = k_first; tr.t0 + tr.dt * static_cast<double>(k) <= t_exit; ++k) {
          if (!tr.valid_at(k)) {
            covered = false;
            break;
          }
          if (nearest_ahead_gap(traces, i, k, g.length) < gap_threshold) {
            free = false;
            break;
          }
        }
        if (covered && free)
          dist.times[static_cast<std::size_t>(sec - 1)].push_back(t_exit - t_enter);
      }
    }
    for (int sec = 0; sec < 3; ++sec)
      if (dist.times[static_cast<std::size_t>(sec)].empty())
        out.flags.push_back("car " + std::to_string(tr.car_number) + " sector " +
                            std::to_string(sec + 1) + ": no free traversals");
    out.cars.push_back(std::move(dist));
  }
  return out;
}

std::optional<double> OvertakingProbabilityTable::probability(CarClass follower, CarClass leader,
                                                              int section) const {
  auto it = counts.find({follower, leader, section});
  if (it == counts.end() || it->second.phi == 0) return std::nullopt;
  return static_cast<double>(it->second.xi) / static_cast<double>(it->second.phi);
}

std::string OvertakingProbabilityTable::to_string() const {
  std::ostringstream out;
  out << "follower,leader,section,xi,phi,p\n";
  for (const auto& [key, c] : counts) {
    out << ingest::to_string(std::get<0>(key)) << ',' << ingest::to_string(std::get<1>(key))
        << ',' << std::get<2>(key) << ',' << c.xi << ',' << c.phi << ',';
    if (c.phi > 0)
      out << fmt_double(static_cast<double>(c.xi) / static_cast<double>(c.phi));
    out << "\n";
  }
  return out.str();
}

OvertakingProbabilityTable parse_probability_table(const std::string& text,
                                                   const std::string& name) {
  OvertakingProbabilityTable table;
  DelimitedTable t = read_delimited_string(text, name);
  int cf = t.require_column("follower"), cl = t.require_column("leader"),
      cs = t.require_column("section"), cx = t.require_column("xi"),
      cp = t.require_column("phi");
  for (const auto& row : t.rows) {
    OvertakeCounts c;
    c.xi = parse_long(row[cx], name);
    c.phi = parse_long(row[cp], name);
    if (c.xi < 0 || c.phi < c.xi) throw std::runtime_error(name + ": invalid counts");
    table.counts[{ingest::car_class_from_string(row[cf]),
                  ingest::car_class_from_string(row[cl]),
                  static_cast<int>(parse_long(row[cs], name))}] = c;
  }
  return table;
}

OvertakingProbabilityTable compute_overtaking_probabilities(
    const std::vector<PositionTrace>& traces, const track::TrackGeometry& g,
    double proximity_threshold) {
  OvertakingProbabilityTable table;
  // per ordered car pair, per (lap, section): counted opportunity and passes
  struct TupleCounts {
    long phi = 0;
    long xi = 0;
  };

  for (std::size_t ia = 0; ia < traces.size(); ++ia) {
    for (std::size_t ib = 0; ib < traces.size(); ++ib) {
      if (ia == ib) continue;
      const PositionTrace& A = traces[ia];
      const PositionTrace& B = traces[ib];
      std::map<std::pair<long, int>, TupleCounts> tuples;
      std::size_t n = std::min(A.pos.size(), B.pos.size());
      for (std::size_t k = 0; k < n; ++k) {
        if (!A.valid_at(k) || !B.valid_at(k)) continue;
        double gap = wrap_gap(B.pos[k], A.pos[k], g.length);
        if (gap <= proximity_threshold) {
          auto lap = static_cast<long>(std::floor(A.pos[k] / g.length));
          int sec = g.section_at(std::fmod(A.pos[k], g.length));
          auto& tc = tuples[{lap, sec}];
          if (tc.phi == 0) tc.phi = 1;
        }
        // pass: the leader's advantage wraps around between consecutive
        // samples while the pair is in contact
        if (k + 1 < n && A.valid_at(k + 1) && B.valid_at(k + 1) &&
            gap <= proximity_threshold) {
          double gap_next = wrap_gap(B.pos[k + 1], A.pos[k + 1], g.length);
          if (gap_next > g.length / 2) {
            double drop = gap - (gap_next - g.length);  // relative advance over the step
            double f = drop > 0 ? gap / drop : 0.0;
            double cross = A.pos[k] + f * (A.pos[k + 1] - A.pos[k]);
            auto lap = static_cast<long>(std::floor(cross / g.length));
            int sec = g.section_at(std::fmod(cross, g.length));
            auto& tc = tuples[{lap, sec}];
            ++tc.xi;
            if (tc.xi > tc.phi) tc.phi = tc.xi;
          }
        }
      }
      for (const auto& [key, tc] : tuples) {
        auto& agg = table.counts[{A.car_class, B.car_class, key.second}];
        agg.xi += tc.xi;
        agg.phi += tc.phi;
      }
    }
  }
  return table;
}

}  // namespace lapstrat::stats
