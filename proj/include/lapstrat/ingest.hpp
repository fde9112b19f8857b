#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lapstrat::ingest {

enum class CarClass { LMP1, LMP2, LMGTE_Pro, LMGTE_Am };

std::string to_string(CarClass c);
CarClass car_class_from_string(const std::string& s);

// One timed lap of one car, as found in the raw timing export.
struct SectorTimeRecord {
  int car_number = 0;
  int lap = 0;
  std::string stop_flag;  // empty when the lap had no stop; e.g. "B" for a box stop
  double s1 = 0.0, s2 = 0.0, s3 = 0.0;  // sector times, s
  double elapsed = 0.0;                 // race time at lap completion, s
  CarClass car_class = CarClass::LMP1;
  std::string group;
  std::string team;

  double lap_time() const { return s1 + s2 + s3; }
};

// Parses a delimited sector-time export. Expected columns:
// car,lap,stop,s1,s2,s3,elapsed,class,group,team (comma or semicolon
// separated; detected from the header). Throws on malformed rows with the
// 1-based data row index in the message.
std::vector<SectorTimeRecord> parse_sector_times(const std::string& path);
std::vector<SectorTimeRecord> parse_sector_times_string(const std::string& text,
                                                        const std::string& name);
std::string sector_times_to_string(const std::vector<SectorTimeRecord>& records);

// Density-based clustering of 1-d sample sets (sector times of one car in
// one sector). Returns one label per input point: -1 for noise, otherwise a
// 0-based cluster id. Cluster ids are assigned in order of first discovery
// while scanning points in input order. A point is a core point when at
// least min_pts points (itself included) lie within eps of it.
std::vector<int> dbscan(const std::vector<double>& points, double eps, int min_pts);

enum class RejectReason { Outlier, NonFastestCluster, StopLap };
std::string to_string(RejectReason r);

struct RejectedLap {
  int car_number = 0;
  int lap = 0;
  RejectReason reason = RejectReason::Outlier;
};

struct CleanedLapSet {
  std::vector<SectorTimeRecord> retained;   // input order preserved
  std::vector<RejectedLap> rejected;        // input order preserved
  std::vector<std::string> warnings;        // e.g. cars with too few laps to cluster
};

struct CleaningConfig {
  double eps_s = 2.0;
  int min_pts = 5;
};

// Keeps a lap only if all three of its sector times fall in that sector's
// fastest cluster (lowest mean) for the car and the lap carries no stop
// flag. Stop-flagged laps are reported as StopLap regardless of clustering;
// of the rest, laps with any noise sector are Outlier, the others
// NonFastestCluster. Cars whose lap count is below min_pts cannot form a
// cluster; all their laps are rejected as Outlier and a warning is emitted.
CleanedLapSet clean_laps(const std::vector<SectorTimeRecord>& records,
                         const CleaningConfig& config = {});

std::string rejections_to_string(const std::vector<RejectedLap>& rejected);

}  // namespace lapstrat::ingest
