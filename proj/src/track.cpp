#include "lapstrat/track.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "lapstrat/common.hpp"

namespace lapstrat::track {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

int TrackGeometry::section_at(double s) const {
  double wrapped = std::fmod(s, length);
  if (wrapped < 0) wrapped += length;
  std::size_t idx = static_cast<std::size_t>(wrapped / delta_s);
  if (idx >= points.size()) idx = points.size() - 1;
  return points[idx].section;
}

int TrackGeometry::sector_at(double s) const {
  double wrapped = std::fmod(s, length);
  if (wrapped < 0) wrapped += length;
  std::size_t idx = static_cast<std::size_t>(wrapped / delta_s);
  if (idx >= points.size()) idx = points.size() - 1;
  return points[idx].sector;
}

double TrackGeometry::section_start(int section) const {
  for (const auto& p : points)
    if (p.section == section) return p.s;
  throw std::runtime_error("no such section: " + std::to_string(section));
}

double TrackGeometry::sector_start(int sector) const {
  for (const auto& p : points)
    if (p.sector == sector) return p.s;
  throw std::runtime_error("no such sector: " + std::to_string(sector));
}

double TrackGeometry::straight_start(int straight_id) const {
  int id = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].is_straight && (i == 0 || !points[i - 1].is_straight)) {
      ++id;
      if (id == straight_id) return points[i].s;
    }
  }
  throw std::runtime_error("no such straight: " + std::to_string(straight_id));
}

double TrackGeometry::straight_length(int straight_id) const {
  double start = straight_start(straight_id);
  std::size_t i = static_cast<std::size_t>(start / delta_s);
  double len = 0.0;
  while (i < points.size() && points[i].is_straight) {
    len += delta_s;
    ++i;
  }
  return len;
}

void TrackGeometry::recount() {
  n_sections = n_sectors = n_regions = n_straights = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    n_sections = std::max(n_sections, points[i].section);
    n_sectors = std::max(n_sectors, points[i].sector);
    n_regions = std::max(n_regions, points[i].region);
    if (points[i].is_straight && (i == 0 || !points[i - 1].is_straight)) ++n_straights;
  }
}

void TrackGeometry::validate() const {
  if (points.empty()) throw std::runtime_error("geometry: no grid points");
  if (delta_s <= 0) throw std::runtime_error("geometry: delta_s must be positive");
  if (std::abs(length - delta_s * static_cast<double>(points.size())) > 1e-6)
    throw std::runtime_error("geometry: length does not equal delta_s * point count");
  auto check_block = [&](auto get, const char* what) {
    int prev = 1;
    if (get(points.front()) != 1)
      throw std::runtime_error(std::string("geometry: first ") + what + " id must be 1");
    for (const auto& p : points) {
      int id = get(p);
      if (id != prev && id != prev + 1)
        throw std::runtime_error(std::string("geometry: ") + what +
                                 " ids must form contiguous 1-based blocks (saw " +
                                 std::to_string(prev) + " -> " + std::to_string(id) + ")");
      prev = id;
    }
  };
  check_block([](const GridPoint& p) { return p.section; }, "section");
  check_block([](const GridPoint& p) { return p.sector; }, "sector");
  check_block([](const GridPoint& p) { return p.region; }, "region");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (std::abs(p.s - delta_s * static_cast<double>(i)) > 1e-9)
      throw std::runtime_error("geometry: non-uniform grid at index " + std::to_string(i));
    bool straight = std::isinf(p.curve_radius);
    if (straight != p.is_straight)
      throw std::runtime_error("geometry: is_straight inconsistent with radius at s=" +
                               fmt_double(p.s));
    if (!straight && p.curve_radius <= 0)
      throw std::runtime_error("geometry: curve radius must be positive at s=" + fmt_double(p.s));
    if (p.is_straight && (p.low_speed || p.high_speed))
      throw std::runtime_error("geometry: speed-class labels on a straight at s=" +
                               fmt_double(p.s));
    if (p.low_speed && p.high_speed)
      throw std::runtime_error("geometry: point labeled both low and high speed at s=" +
                               fmt_double(p.s));
  }
}

std::string geometry_to_string(const TrackGeometry& g) {
  std::ostringstream out;
  out << "# delta_s=" << fmt_double(g.delta_s) << " length=" << fmt_double(g.length) << "\n";
  out << "s,slope_rad,radius_m,section,sector,region,is_straight,low_speed,high_speed\n";
  for (const auto& p : g.points) {
    out << fmt_double(p.s) << ',' << fmt_double(p.slope_rad) << ','
        << (std::isinf(p.curve_radius) ? "inf" : fmt_double(p.curve_radius)) << ',' << p.section
        << ',' << p.sector << ',' << p.region << ',' << (p.is_straight ? 1 : 0) << ','
        << (p.low_speed ? 1 : 0) << ',' << (p.high_speed ? 1 : 0) << "\n";
  }
  return out.str();
}

void save_geometry(const TrackGeometry& g, const std::string& path) {
  write_text_file(path, geometry_to_string(g));
}

TrackGeometry load_geometry(const std::string& path) {
  return load_geometry_string(read_text_file(path), path);
}

TrackGeometry load_geometry_string(const std::string& text, const std::string& path) {
  DelimitedTable t = read_delimited_string(text, path);
  TrackGeometry g;
  bool have_meta = false;
  for (const auto& line : t.preamble) {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "delta_s") g.delta_s = parse_double(val, path + " delta_s");
      if (key == "length") {
        g.length = parse_double(val, path + " length");
        have_meta = true;
      }
    }
  }
  if (!have_meta)
    throw std::runtime_error(path + ": missing '# delta_s=... length=...' header line");
  int cs = t.require_column("s"), ca = t.require_column("slope_rad"),
      cr = t.require_column("radius_m"), csec = t.require_column("section"),
      csc = t.require_column("sector"), creg = t.require_column("region"),
      cst = t.require_column("is_straight"), clo = t.require_column("low_speed"),
      chi = t.require_column("high_speed");
  for (const auto& row : t.rows) {
    GridPoint p;
    p.s = parse_double(row[cs], path);
    p.slope_rad = parse_double(row[ca], path);
    p.curve_radius = parse_double(row[cr], path);
    p.section = static_cast<int>(parse_long(row[csec], path));
    p.sector = static_cast<int>(parse_long(row[csc], path));
    p.region = static_cast<int>(parse_long(row[creg], path));
    p.is_straight = parse_long(row[cst], path) != 0;
    p.low_speed = parse_long(row[clo], path) != 0;
    p.high_speed = parse_long(row[chi], path) != 0;
    g.points.push_back(p);
  }
  g.recount();
  g.validate();
  return g;
}

TrackGeometry resample(const TrackGeometry& g, double new_delta_s) {
  double n_real = g.length / new_delta_s;
  auto n = static_cast<std::size_t>(std::llround(n_real));
  if (n == 0 || std::abs(n_real - static_cast<double>(n)) > 1e-9)
    throw std::runtime_error("resample: track length is not a multiple of the new grid step");
  TrackGeometry out;
  out.delta_s = new_delta_s;
  out.length = g.length;
  out.points.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    double pos = new_delta_s * static_cast<double>(k);
    auto src = static_cast<std::size_t>(pos / g.delta_s + 1e-9);
    if (src >= g.points.size()) src = g.points.size() - 1;
    GridPoint p = g.points[src];
    p.s = pos;
    out.points.push_back(p);
  }
  out.recount();
  out.validate();
  return out;
}

namespace {

struct Piece {
  double len;
  double radius;  // inf for straight
  bool low_speed = false;
  bool high_speed = false;
};

TrackGeometry from_pieces(const std::vector<Piece>& pieces, double delta_s, int n_sections,
                          const std::vector<double>& sector_bounds,
                          const std::vector<double>& region_bounds, double slope_amp,
                          int slope_waves) {
  TrackGeometry g;
  g.delta_s = delta_s;
  double length = 0.0;
  for (const auto& p : pieces) length += p.len;
  g.length = length;
  auto n = static_cast<std::size_t>(std::llround(length / delta_s));
  const double sec_len = length / n_sections;
  for (std::size_t k = 0; k < n; ++k) {
    double s = delta_s * static_cast<double>(k);
    GridPoint pt;
    pt.s = s;
    double acc = 0.0;
    for (const auto& piece : pieces) {
      if (s < acc + piece.len - 1e-9) {
        pt.curve_radius = piece.radius;
        pt.is_straight = std::isinf(piece.radius);
        pt.low_speed = piece.low_speed;
        pt.high_speed = piece.high_speed;
        break;
      }
      acc += piece.len;
    }
    pt.section = std::min(n_sections, 1 + static_cast<int>(s / sec_len));
    pt.sector = 1;
    for (std::size_t i = 0; i < sector_bounds.size(); ++i)
      if (s >= sector_bounds[i] - 1e-9) pt.sector = static_cast<int>(i) + 2;
    pt.region = 1;
    for (std::size_t i = 0; i < region_bounds.size(); ++i)
      if (s >= region_bounds[i] - 1e-9) pt.region = static_cast<int>(i) + 2;
    if (slope_waves > 0)
      pt.slope_rad = slope_amp * std::sin(2.0 * M_PI * slope_waves * s / length);
    g.points.push_back(pt);
  }
  g.recount();
  g.validate();
  return g;
}

}  // namespace

TrackGeometry make_preset(const std::string& name, double delta_s) {
  if (name == "oval-1km") {
    std::vector<Piece> pieces = {
        {300.0, kInf},
        {200.0, 30.0, true, false},
        {300.0, kInf},
        {200.0, 200.0, false, true},
    };
    return from_pieces(pieces, delta_s, 12, {400.0, 700.0}, {500.0}, 0.0, 0);
  }
  if (name == "road-2km") {
    std::vector<Piece> pieces = {
        {250.0, kInf}, {80.0, 100.0, false, true}, {150.0, kInf}, {50.0, 30.0, true, false},
        {200.0, kInf}, {70.0, 70.0, false, false}, {180.0, kInf}, {60.0, 55.0, false, false},
        {120.0, kInf}, {50.0, 28.0, true, false},  {220.0, kInf}, {70.0, 75.0, false, false},
        {160.0, kInf}, {60.0, 32.0, true, false},  {300.0, kInf}, {80.0, 120.0, false, true},
    };
    return from_pieces(pieces, delta_s, 37, {700.0, 1400.0},
                       {330.0, 530.0, 800.0, 1040.0, 1210.0, 1500.0, 1720.0}, 0.015, 2);
  }
  throw std::runtime_error("unknown track preset '" + name + "'");
}

}  // namespace lapstrat::track
