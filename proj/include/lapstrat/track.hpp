#pragma once

#include <string>
#include <vector>

namespace lapstrat::track {

// One grid point of the track description. Points are uniformly spaced;
// every per-point attribute is constant over the cell [s, s + delta_s).
struct GridPoint {
  double s = 0.0;               // arc position, m
  double slope_rad = 0.0;       // road slope angle
  double curve_radius = 0.0;    // m; infinity on straights
  int section = 1;              // 1-based timing section id
  int sector = 1;               // 1-based timing sector id (1..3)
  int region = 1;               // 1-based strategy region id
  bool is_straight = true;
  bool low_speed = false;       // low-speed curve (adherence correction applies)
  bool high_speed = false;      // high-speed curve (downforce correction applies)
};

struct TrackGeometry {
  double delta_s = 2.0;
  double length = 0.0;
  std::vector<GridPoint> points;

  int n_sections = 0;
  int n_sectors = 0;
  int n_regions = 0;
  int n_straights = 0;  // count of contiguous straight stretches

  std::size_t size() const { return points.size(); }
  int section_at(double s) const;
  int sector_at(double s) const;
  // arc position where the given 1-based section starts
  double section_start(int section) const;
  double sector_start(int sector) const;
  // start position and length of the k-th (1-based) straight
  double straight_start(int straight_id) const;
  double straight_length(int straight_id) const;

  // Validates uniform spacing, contiguous 1-based section/sector/region
  // blocks, and consistent labels. Throws on violation.
  void validate() const;
  void recount();  // fills n_* counters from the points
};

TrackGeometry load_geometry(const std::string& path);
TrackGeometry load_geometry_string(const std::string& text, const std::string& name);
void save_geometry(const TrackGeometry& g, const std::string& path);
std::string geometry_to_string(const TrackGeometry& g);

// Resamples the geometry onto a coarser uniform grid (labels taken from the
// source point covering each new grid position). new_delta_s must be a
// multiple of a source cell or at least commensurate with the track length.
TrackGeometry resample(const TrackGeometry& g, double new_delta_s);

// Synthetic presets used by tests and the data generator.
// "oval-1km": two 300 m straights and two 200 m constant-radius curves,
//             3 sectors, 12 sections, 2 strategy regions.
// "road-2km": eight straights with interleaved curves, 3 sectors,
//             37 sections, 8 strategy regions.
TrackGeometry make_preset(const std::string& name, double delta_s = 2.0);

}  // namespace lapstrat::track
