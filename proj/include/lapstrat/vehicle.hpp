#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lapstrat/track.hpp"

namespace lapstrat::vehicle {

struct TorquePoint {
  double x = 0.0;       // engine curve: rpm; motor curve: rad/s
  double torque = 0.0;  // N·m
};

struct VehicleParams {
  double m = 900.0;            // kg, incl. fuel and driver
  double g = 9.81;             // m/s^2
  double h = 0.30;             // m, CoM height
  double h_aero = 0.40;        // m, drag application height
  double L = 1.25;             // m, half wheelbase (axle distance = 2L)
  double rho = 1.225;          // kg/m^3
  double cx = 0.90;            // drag coefficient
  double cz = 3.20;            // lift (downforce) coefficient
  double S = 1.50;             // m^2 reference surface
  double C_res = 0.012;        // rolling resistance coefficient
  double mu = 1.60;            // tire-road friction coefficient
  double wheel_radius = 0.33;  // m

  std::vector<TorquePoint> comb_torque_curve;  // rpm -> max engine torque
  std::vector<double> gear_ratios;             // overall ratios, engine to wheel
  std::vector<TorquePoint> el_torque_curve;    // motor speed (rad/s) -> torque
  double tau_el = 3.0;                         // single electric ratio

  double eta_el_traction = 0.90;
  double eta_el_rec = 0.80;
  double F_sail = -1500.0;    // N, sailing deceleration force (<= 0)
  double F_dec_max = -4000.0; // N, max regen-credited braking force (<= 0)
  double p_max_per_s = 0.0223;  // kg/s fuel flow at full thrust

  double coeff_engine = 1.0;
  double coeff_adherence = 1.0;  // scales mu in low-speed curves
  double coeff_downforce = 1.0;  // scales cz in high-speed curves

  void validate() const;
};

VehicleParams default_params();
VehicleParams load_params(const std::string& path);
void save_params(const VehicleParams& p, const std::string& path);
std::string params_to_string(const VehicleParams& p);
VehicleParams params_from_string(const std::string& text, const std::string& name);

struct AeroForces {
  double F_aero = 0.0;
  double F_down_f = 0.0;
  double F_down_r = 0.0;
};
// high_speed_curve applies the downforce corrective coefficient.
AeroForces aero_forces(double v, const VehicleParams& p, bool high_speed_curve = false);

struct VerticalLoads {
  double F_z_f = 0.0;
  double F_z_r = 0.0;
  bool wheel_lift = false;  // an axle load went negative and was clamped
};
VerticalLoads vertical_loads(double v, double v_dot, double alpha, const AeroForces& aero,
                             const VehicleParams& p);

struct TireLimits {
  double F_t_f = 0.0, F_t_r = 0.0;
  double F_y_f = 0.0, F_y_r = 0.0;
  double F_ad_f = 0.0, F_ad_r = 0.0;
  bool saturated_f = false, saturated_r = false;  // lateral demand used up the circle
};
TireLimits tire_limits(double F_z_f, double F_z_r, double v, double curve_radius,
                       const VehicleParams& p, bool low_speed_curve);

struct Thrust {
  double F_el_avail = 0.0;
  double F_comb_avail = 0.0;
  int gear = 0;  // 0-based index into gear_ratios
  double rpm = 0.0;
  bool rpm_clamped = false;
};
Thrust powertrain_thrust(double v, int gear, const VehicleParams& p);
// Envelope gear choice: the gear maximizing combustion wheel thrust at v.
Thrust best_gear_thrust(double v, const VehicleParams& p);

enum class PowertrainMode : std::uint8_t { Both = 1, CombOnly = 2, Sailing = 3, Braking = 4 };

enum : std::uint8_t {
  kFlagWheelLift = 1,
  kFlagSaturated = 2,
  kFlagRpmClamped = 4,
  kFlagSailCapped = 8,
};

struct PointLedger {
  double s = 0.0;
  double v = 0.0;      // speed entering the cell
  double v_dot = 0.0;
  double dt = 0.0;     // delta_s / v
  PowertrainMode mode = PowertrainMode::Sailing;
  int gear = 0;
  double throttle = 0.0;  // applied/maximum engine torque ratio in [0,1]
  double F_x_f = 0.0, F_x_r = 0.0;
  double F_aero = 0.0, R_f = 0.0, R_r = 0.0;
  double F_z_f = 0.0, F_z_r = 0.0;
  double F_y_f = 0.0, F_y_r = 0.0;
  double F_t_f = 0.0, F_t_r = 0.0;
  double fuel_kg = 0.0;
  double e_used_j = 0.0;
  double e_rec_j = 0.0;
  std::uint8_t flags = 0;
};

enum class Integrator { SpeedEuler, EnergyEuler };

struct StepResult {
  double v_next = 0.0;
  PointLedger ledger;
};

struct SimulationError : std::runtime_error {
  std::size_t point_index;
  SimulationError(const std::string& what, std::size_t idx)
      : std::runtime_error(what), point_index(idx) {}
};

// Single spatial step with the commanded mode. F_dec (<= 0) is only read in
// Braking mode. Budget caps limit the energy/fuel this step may consume;
// pass infinity for uncapped behavior.
StepResult step(double v_k, const track::GridPoint& pt, double delta_s, PowertrainMode mode,
                double F_dec, const VehicleParams& p,
                Integrator integ = Integrator::SpeedEuler,
                double e_el_cap_j = std::numeric_limits<double>::infinity(),
                double fuel_cap_kg = std::numeric_limits<double>::infinity());

// Per-region energy allocation plus per-point electric bans, as decoded from
// an optimization genome.
struct StrategyBudgets {
  std::vector<double> e_el_j;    // per region, J
  std::vector<double> fuel_kg;   // per region, kg
  std::vector<std::uint8_t> banned_el;  // per grid point; empty = no bans

  static StrategyBudgets unlimited(const track::TrackGeometry& g);
  static StrategyBudgets none(const track::TrackGeometry& g);
};

// per-lap hybrid energy regulation (LMP1-style), plus the recovery-balance
// allowance granted by non-KERS recuperation
struct RegulationLimits {
  double e_el_used_max_j = 4.924e6;
  double fuel_max_kg = 1.381;
  double e_rec_hers_j = 800e3;
};

struct LapResult {
  double lap_time = 0.0;
  double fuel_kg = 0.0;
  double e_el_used_j = 0.0;
  double e_el_rec_kers_j = 0.0;
  double v_start = 0.0;
  double v_end = 0.0;
  double delta_s = 0.0;
  std::vector<PointLedger> points;
  std::vector<double> time_at;  // cumulative time at grid point k; size points+1
  std::vector<std::string> warnings;
};

// Strategy-independent precomputation: corner apex speeds and the backward
// braking envelope. Reused across many simulate_lap calls. The envelope is
// computed with the inverse of the chosen integrator update so a forward
// pass can land on it exactly.
struct PreparedTrack {
  track::TrackGeometry geometry;
  VehicleParams params;
  Integrator envelope_integrator = Integrator::SpeedEuler;
  std::vector<double> corner_limit;  // per point; inf on straights
  std::vector<double> envelope;      // per point
};

PreparedTrack prepare(const track::TrackGeometry& g, const VehicleParams& p,
                      Integrator integ = Integrator::SpeedEuler);

struct SimOptions {
  double v_start = 0.0;  // <= 0 requests the periodic (flying lap) fixed point
  Integrator integrator = Integrator::SpeedEuler;
  int max_start_iterations = 5;
  double start_tolerance = 1e-6;  // m/s between lap start and end speed
};

LapResult simulate_lap(const PreparedTrack& trk, const StrategyBudgets& budgets,
                       const SimOptions& opts = {});
LapResult simulate_lap(const track::TrackGeometry& g, const VehicleParams& p,
                       const StrategyBudgets& budgets, const SimOptions& opts = {});

// Replays an explicit per-point mode/brake trace (no budget machine).
LapResult simulate_trace(const PreparedTrack& trk, std::span<const PowertrainMode> modes,
                         std::span<const double> brake_force, double v_start,
                         Integrator integ = Integrator::SpeedEuler);

// Time lost, relative to the profile, when passing point k0 at reduced speed
// v_reduced and accelerating back onto the profile. Zero when already at or
// above profile speed. Measured until rejoin or lap end.
double recovery_time_loss(const PreparedTrack& trk, const LapResult& profile, std::size_t k0,
                          double v_reduced);

struct TuneRange {
  double lo = 0.8, hi = 1.2;
  int steps = 5;
};
struct TuneResult {
  double coeff_engine = 1.0, coeff_adherence = 1.0, coeff_downforce = 1.0;
  double rms = 0.0;
};
// Grid search of the three corrective coefficients minimizing RMS speed
// error against a per-point reference speed profile (engine-only laps).
TuneResult tune_coefficients(const track::TrackGeometry& g, const VehicleParams& base,
                             const std::vector<double>& reference_speed, const TuneRange& engine,
                             const TuneRange& adherence, const TuneRange& downforce);

std::string lap_result_to_string(const LapResult& lap);

}  // namespace lapstrat::vehicle
