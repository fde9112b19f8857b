#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lapstrat/track.hpp"
#include "lapstrat/vehicle.hpp"

namespace lapstrat::miqcp {

// Convexified lap-time problem on a coarse spatial grid. The build step
// emits the full constraint system; solving is out of scope (the GA module
// is the production optimizer), so the system serves as an exportable
// baseline and as a feasibility checker for simulated trajectories.

enum class VarField : int {
  kEKin = 0,   // J, kinetic energy at the grid point
  kV,          // m/s, speed at the grid point
  kDtDs,       // s/m, lethargy at the grid point
  kUBoth,      // one-hot powertrain mode over the next cell
  kUComb,
  kUSail,
  kUBrake,
  kFF,         // N, front (electric) thrust, cell average
  kFR,         // N, rear (combustion) thrust, cell average
  kFBrk,       // N <= 0, brake/sail force, cell average
  kFuel,       // kg burnt in the cell
  kEUsed,      // J of stored electric energy drawn in the cell
  kERec,       // J recovered into the battery in the cell
};
inline constexpr int kVarsPerPoint = 13;

struct VarDef {
  std::string name;
  double lb = 0.0;
  double ub = 0.0;
  bool integer = false;
};

enum class Rel { Eq, Le, Ge };

struct LinearRow {
  std::string name;
  Rel rel = Rel::Eq;
  double rhs = 0.0;
  std::vector<std::pair<int, double>> terms;  // (var index, coefficient)
};

struct LinExpr {
  double constant = 0.0;
  std::vector<std::pair<int, double>> terms;

  double eval(const std::vector<double>& x) const;
};

// rotated cone written as ||(2a, b - c)|| <= b + c, i.e. a^2 <= b*c with
// b, c >= 0
struct SocRow {
  std::string name;
  LinExpr a, b, c;
};

struct DiscretizedProblem {
  std::string name = "lap-qcp";
  double delta_s = 5.0;
  int n = 0;
  std::vector<VarDef> vars;                      // kVarsPerPoint * n
  std::vector<LinearRow> linear;                 // n kinetic + 3 budget rows
  std::vector<SocRow> soc;                       // 2n
  std::vector<std::pair<int, double>> objective;  // minimize

  int index(VarField f, int k) const;
};

DiscretizedProblem build_problem(const track::TrackGeometry& g,
                                 const vehicle::VehicleParams& params,
                                 const vehicle::RegulationLimits& reg = {});

// maps a simulated trajectory onto the problem variables: grid-point kinetic
// energies by linear interpolation, cell forces by distance-weighted
// averaging reconciled against the kinetic rows, cell fuel/energy amounts by
// overlap sums
std::vector<double> map_trajectory(const DiscretizedProblem& problem,
                                   const vehicle::LapResult& lap,
                                   const vehicle::VehicleParams& params);

struct FeasibilityReport {
  std::map<std::string, double> worst;  // per family, relative, >0 = violated
  double tolerance = 1e-6;
  bool feasible = false;
  double objective_value = 0.0;

  std::string to_string() const;
};

FeasibilityReport check_assignment(const DiscretizedProblem& problem,
                                   const std::vector<double>& x, double tolerance = 1e-6);

FeasibilityReport verify(const DiscretizedProblem& problem, const vehicle::LapResult& lap,
                         const vehicle::VehicleParams& params, double tolerance = 1e-6);

// portable text form; deterministic and byte-stable for identical problems
std::string export_problem(const DiscretizedProblem& problem);
void save_problem(const DiscretizedProblem& problem, const std::string& path);
DiscretizedProblem parse_problem(const std::string& text, const std::string& name);
DiscretizedProblem load_problem(const std::string& path);

}  // namespace lapstrat::miqcp
