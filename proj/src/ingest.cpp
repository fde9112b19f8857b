#include "lapstrat/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

#include "lapstrat/common.hpp"

namespace lapstrat::ingest {

std::string to_string(CarClass c) {
  switch (c) {
    case CarClass::LMP1: return "LMP1";
    case CarClass::LMP2: return "LMP2";
    case CarClass::LMGTE_Pro: return "LMGTE Pro";
    case CarClass::LMGTE_Am: return "LMGTE Am";
  }
  return "?";
}

CarClass car_class_from_string(const std::string& s) {
  std::string t;
  for (char c : trim(s)) t.push_back(c == '_' ? ' ' : c);
  if (t == "LMP1") return CarClass::LMP1;
  if (t == "LMP2") return CarClass::LMP2;
  if (t == "LMGTE Pro") return CarClass::LMGTE_Pro;
  if (t == "LMGTE Am") return CarClass::LMGTE_Am;
  throw std::runtime_error("unknown car class '" + s + "'");
}

static std::vector<SectorTimeRecord> records_from_table(const DelimitedTable& t,
                                                        const std::string& name) {
  int ccar = t.require_column("car"), clap = t.require_column("lap"),
      cstop = t.require_column("stop"), cs1 = t.require_column("s1"),
      cs2 = t.require_column("s2"), cs3 = t.require_column("s3"),
      cel = t.require_column("elapsed"), ccl = t.require_column("class"),
      cgr = t.column("group"), ctm = t.column("team");
  std::vector<SectorTimeRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string ctx = name + " row " + std::to_string(i + 1);
    SectorTimeRecord r;
    r.car_number = static_cast<int>(parse_long(row[ccar], ctx + " (car)"));
    r.lap = static_cast<int>(parse_long(row[clap], ctx + " (lap)"));
    r.stop_flag = row[cstop];
    r.s1 = parse_double(row[cs1], ctx + " (s1)");
    r.s2 = parse_double(row[cs2], ctx + " (s2)");
    r.s3 = parse_double(row[cs3], ctx + " (s3)");
    r.elapsed = parse_double(row[cel], ctx + " (elapsed)");
    r.car_class = car_class_from_string(row[ccl]);
    if (cgr >= 0) r.group = row[cgr];
    if (ctm >= 0) r.team = row[ctm];
    if (r.s1 <= 0 || r.s2 <= 0 || r.s3 <= 0)
      throw std::runtime_error(ctx + ": sector times must be positive");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SectorTimeRecord> parse_sector_times(const std::string& path) {
  return records_from_table(read_delimited(path), path);
}

std::vector<SectorTimeRecord> parse_sector_times_string(const std::string& text,
                                                        const std::string& name) {
  return records_from_table(read_delimited_string(text, name), name);
}

std::string sector_times_to_string(const std::vector<SectorTimeRecord>& records) {
  std::ostringstream out;
  out << "car,lap,stop,s1,s2,s3,elapsed,class,group,team\n";
  for (const auto& r : records) {
    out << r.car_number << ',' << r.lap << ',' << r.stop_flag << ',' << fmt_fixed(r.s1, 3) << ','
        << fmt_fixed(r.s2, 3) << ',' << fmt_fixed(r.s3, 3) << ',' << fmt_fixed(r.elapsed, 3) << ','
        << to_string(r.car_class) << ',' << r.group << ',' << r.team << "\n";
  }
  return out.str();
}

std::vector<int> dbscan(const std::vector<double>& points, double eps, int min_pts) {
  if (eps <= 0) throw std::runtime_error("dbscan: eps must be positive");
  if (min_pts < 1) throw std::runtime_error("dbscan: min_pts must be at least 1");
  const int n = static_cast<int>(points.size());
  constexpr int kUndefined = -2;
  std::vector<int> labels(n, kUndefined);

  auto neighbors = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j)
      if (std::abs(points[j] - points[i]) <= eps) out.push_back(j);
    return out;
  };

  int cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] != kUndefined) continue;
    auto seed = neighbors(i);
    if (static_cast<int>(seed.size()) < min_pts) {
      labels[i] = -1;
      continue;
    }
    labels[i] = cluster;
    std::deque<int> queue(seed.begin(), seed.end());
    while (!queue.empty()) {
      int j = queue.front();
      queue.pop_front();
      if (labels[j] == -1) labels[j] = cluster;  // noise becomes a border point
      if (labels[j] != kUndefined) continue;
      labels[j] = cluster;
      auto nb = neighbors(j);
      if (static_cast<int>(nb.size()) >= min_pts)
        for (int k : nb) queue.push_back(k);
    }
    ++cluster;
  }
  return labels;
}

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::Outlier: return "outlier";
    case RejectReason::NonFastestCluster: return "non-fastest-cluster";
    case RejectReason::StopLap: return "stop-lap";
  }
  return "?";
}

CleanedLapSet clean_laps(const std::vector<SectorTimeRecord>& records,
                         const CleaningConfig& config) {
  CleanedLapSet out;
  std::map<int, std::vector<std::size_t>> by_car;
  for (std::size_t i = 0; i < records.size(); ++i) by_car[records[i].car_number].push_back(i);

  // retain[i]: 0 keep, otherwise the rejection reason
  std::vector<std::optional<RejectReason>> verdict(records.size());

  for (const auto& [car, idxs] : by_car) {
    if (static_cast<int>(idxs.size()) < config.min_pts) {
      out.warnings.push_back("car " + std::to_string(car) + ": only " +
                             std::to_string(idxs.size()) +
                             " laps, below min_pts; all laps rejected");
      for (auto i : idxs) verdict[i] = RejectReason::Outlier;
      continue;
    }
    // per-sector clustering; true when the lap's sector time sits in the
    // fastest (lowest mean) cluster of that sector
    std::vector<std::array<bool, 3>> fastest(idxs.size(), {false, false, false});
    std::vector<std::array<bool, 3>> noise(idxs.size(), {false, false, false});
    for (int sec = 0; sec < 3; ++sec) {
      std::vector<double> pts;
      pts.reserve(idxs.size());
      for (auto i : idxs) {
        const auto& r = records[i];
        pts.push_back(sec == 0 ? r.s1 : sec == 1 ? r.s2 : r.s3);
      }
      auto labels = dbscan(pts, config.eps_s, config.min_pts);
      int n_clusters = 0;
      for (int l : labels) n_clusters = std::max(n_clusters, l + 1);
      int best = -1;
      double best_mean = 0.0;
      for (int c = 0; c < n_clusters; ++c) {
        double sum = 0.0;
        int cnt = 0;
        for (std::size_t k = 0; k < pts.size(); ++k)
          if (labels[k] == c) {
            sum += pts[k];
            ++cnt;
          }
        double mean = sum / cnt;
        if (best < 0 || mean < best_mean) {
          best = c;
          best_mean = mean;
        }
      }
      for (std::size_t k = 0; k < pts.size(); ++k) {
        fastest[k][sec] = labels[k] == best && best >= 0;
        noise[k][sec] = labels[k] == -1;
      }
      if (n_clusters == 0)
        out.warnings.push_back("car " + std::to_string(car) + " sector " +
                               std::to_string(sec + 1) + ": no cluster found; sector is all noise");
    }
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      const auto& r = records[idxs[k]];
      if (!r.stop_flag.empty())
        verdict[idxs[k]] = RejectReason::StopLap;
      else if (fastest[k][0] && fastest[k][1] && fastest[k][2])
        verdict[idxs[k]] = std::nullopt;
      else if (noise[k][0] || noise[k][1] || noise[k][2])
        verdict[idxs[k]] = RejectReason::Outlier;
      else
        verdict[idxs[k]] = RejectReason::NonFastestCluster;
    }
  }

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (verdict[i].has_value())
      out.rejected.push_back({records[i].car_number, records[i].lap, *verdict[i]});
    else
      out.retained.push_back(records[i]);
  }
  return out;
}

std::string rejections_to_string(const std::vector<RejectedLap>& rejected) {
  std::ostringstream out;
  out << "car,lap,reason\n";
  for (const auto& r : rejected)
    out << r.car_number << ',' << r.lap << ',' << to_string(r.reason) << "\n";
  return out.str();
}

}  // namespace lapstrat::ingest
