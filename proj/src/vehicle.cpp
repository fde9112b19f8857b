#include "lapstrat/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "lapstrat/common.hpp"

namespace lapstrat::vehicle {

using json = nlohmann::json;

void VehicleParams::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw std::runtime_error(std::string("vehicle params: ") + what + " must be positive");
  };
  positive(m, "m");
  positive(g, "g");
  positive(h, "h");
  positive(L, "L");
  positive(rho, "rho");
  positive(S, "S");
  positive(mu, "mu");
  positive(wheel_radius, "wheel_radius");
  if (!(eta_el_traction > 0 && eta_el_traction <= 1) || !(eta_el_rec > 0 && eta_el_rec <= 1))
    throw std::runtime_error("vehicle params: efficiencies must lie in (0, 1]");
  if (F_sail > 0 || F_dec_max > 0)
    throw std::runtime_error("vehicle params: F_sail and F_dec_max must be <= 0");
  if (comb_torque_curve.size() < 2 || el_torque_curve.size() < 2)
    throw std::runtime_error("vehicle params: torque curves need at least two points");
  for (const auto& tp : comb_torque_curve)
    if (tp.torque < 0) throw std::runtime_error("vehicle params: negative engine torque");
  for (const auto& tp : el_torque_curve)
    if (tp.torque < 0) throw std::runtime_error("vehicle params: negative motor torque");
  if (gear_ratios.empty()) throw std::runtime_error("vehicle params: no gear ratios");
}

VehicleParams default_params() {
  VehicleParams p;
  p.comb_torque_curve = {{2000, 300}, {3500, 430}, {5000, 480},  {6500, 480},
                         {7500, 460}, {8500, 420}, {9500, 360},  {10500, 330}};
  p.gear_ratios = {11.0, 8.2, 6.3, 5.0, 4.1, 3.4, 2.9};
  // motor sized so flat-out deployment roughly matches what braking
  // recuperation plus the fixed heat-recovery allowance can replenish
  p.el_torque_curve = {{0, 144}, {600, 144}, {700, 123}, {850, 102}, {1000, 86}, {1200, 72}};
  return p;
}

static json curve_to_json(const std::vector<TorquePoint>& c) {
  json a = json::array();
  for (const auto& tp : c) a.push_back({tp.x, tp.torque});
  return a;
}

static std::vector<TorquePoint> curve_from_json(const json& a, const std::string& what) {
  std::vector<TorquePoint> out;
  for (const auto& e : a) {
    if (!e.is_array() || e.size() != 2)
      throw std::runtime_error(what + ": torque curve entries must be [x, torque] pairs");
    out.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  return out;
}

std::string params_to_string(const VehicleParams& p) {
  json j;
  j["m_kg"] = p.m;
  j["g_mps2"] = p.g;
  j["h_m"] = p.h;
  j["h_aero_m"] = p.h_aero;
  j["half_wheelbase_m"] = p.L;
  j["rho_kgm3"] = p.rho;
  j["cx"] = p.cx;
  j["cz"] = p.cz;
  j["S_m2"] = p.S;
  j["C_res"] = p.C_res;
  j["mu"] = p.mu;
  j["wheel_radius_m"] = p.wheel_radius;
  j["comb_torque_curve_rpm_nm"] = curve_to_json(p.comb_torque_curve);
  j["gear_ratios"] = p.gear_ratios;
  j["el_torque_curve_rads_nm"] = curve_to_json(p.el_torque_curve);
  j["tau_el"] = p.tau_el;
  j["eta_el_traction"] = p.eta_el_traction;
  j["eta_el_rec"] = p.eta_el_rec;
  j["F_sail_n"] = p.F_sail;
  j["F_dec_max_n"] = p.F_dec_max;
  j["p_max_per_s_kgs"] = p.p_max_per_s;
  j["coeff_engine"] = p.coeff_engine;
  j["coeff_adherence"] = p.coeff_adherence;
  j["coeff_downforce"] = p.coeff_downforce;
  return j.dump(2) + "\n";
}

VehicleParams params_from_string(const std::string& text, const std::string& name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
  VehicleParams p;
  auto get = [&](const char* key, double& into) {
    if (j.contains(key)) into = j[key].get<double>();
  };
  get("m_kg", p.m);
  get("g_mps2", p.g);
  get("h_m", p.h);
  get("h_aero_m", p.h_aero);
  get("half_wheelbase_m", p.L);
  get("rho_kgm3", p.rho);
  get("cx", p.cx);
  get("cz", p.cz);
  get("S_m2", p.S);
  get("C_res", p.C_res);
  get("mu", p.mu);
  get("wheel_radius_m", p.wheel_radius);
  get("tau_el", p.tau_el);
  get("eta_el_traction", p.eta_el_traction);
  get("eta_el_rec", p.eta_el_rec);
  get("F_sail_n", p.F_sail);
  get("F_dec_max_n", p.F_dec_max);
  get("p_max_per_s_kgs", p.p_max_per_s);
  get("coeff_engine", p.coeff_engine);
  get("coeff_adherence", p.coeff_adherence);
  get("coeff_downforce", p.coeff_downforce);
  if (j.contains("comb_torque_curve_rpm_nm"))
    p.comb_torque_curve = curve_from_json(j["comb_torque_curve_rpm_nm"], name);
  if (j.contains("el_torque_curve_rads_nm"))
    p.el_torque_curve = curve_from_json(j["el_torque_curve_rads_nm"], name);
  if (j.contains("gear_ratios")) p.gear_ratios = j["gear_ratios"].get<std::vector<double>>();
  p.validate();
  return p;
}

VehicleParams load_params(const std::string& path) {
  return params_from_string(read_text_file(path), path);
}

void save_params(const VehicleParams& p, const std::string& path) {
  write_text_file(path, params_to_string(p));
}

AeroForces aero_forces(double v, const VehicleParams& p, bool high_speed_curve) {
  AeroForces a;
  double cz = p.cz * (high_speed_curve ? p.coeff_downforce : 1.0);
  a.F_aero = 0.5 * p.rho * p.cx * p.S * v * v;
  a.F_down_f = 0.25 * p.rho * cz * p.S * v * v;
  a.F_down_r = a.F_down_f;
  return a;
}

VerticalLoads vertical_loads(double v, double v_dot, double alpha, const AeroForces& aero,
                             const VehicleParams& p) {
  (void)v;
  VerticalLoads out;
  const double twoL = 2.0 * p.L;
  out.F_z_f = (-aero.F_aero * p.h_aero + aero.F_down_f * twoL - p.m * v_dot * p.h -
               p.m * p.g * p.h * std::sin(alpha) + p.m * p.g * p.L * std::cos(alpha)) /
              twoL;
  out.F_z_r = (aero.F_aero * p.h_aero + aero.F_down_r * twoL + p.m * v_dot * p.h +
               p.m * p.g * p.h * std::sin(alpha) + p.m * p.g * p.L * std::cos(alpha)) /
              twoL;
  if (out.F_z_f < 0) {
    out.F_z_f = 0;
    out.wheel_lift = true;
  }
  if (out.F_z_r < 0) {
    out.F_z_r = 0;
    out.wheel_lift = true;
  }
  return out;
}

TireLimits tire_limits(double F_z_f, double F_z_r, double v, double curve_radius,
                       const VehicleParams& p, bool low_speed_curve) {
  TireLimits out;
  double mu_eff = p.mu * (low_speed_curve ? p.coeff_adherence : 1.0);
  out.F_ad_f = mu_eff * std::abs(F_z_f);
  out.F_ad_r = mu_eff * std::abs(F_z_r);
  if (std::isfinite(curve_radius)) {
    double fy = p.m * v * v / (2.0 * curve_radius);
    out.F_y_f = fy;
    out.F_y_r = fy;
  }
  auto limit = [](double f_ad, double f_y, bool& saturated) {
    if (f_ad >= std::abs(f_y)) return std::sqrt(f_ad * f_ad - f_y * f_y);
    saturated = true;
    return 0.0;
  };
  out.F_t_f = limit(out.F_ad_f, out.F_y_f, out.saturated_f);
  out.F_t_r = limit(out.F_ad_r, out.F_y_r, out.saturated_r);
  return out;
}

static double interp_curve(const std::vector<TorquePoint>& curve, double x, bool& clamped) {
  if (x <= curve.front().x) {
    clamped = x < curve.front().x;
    return curve.front().torque;
  }
  if (x >= curve.back().x) {
    clamped = x > curve.back().x;
    return curve.back().torque;
  }
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (x <= curve[i].x) {
      double t = (x - curve[i - 1].x) / (curve[i].x - curve[i - 1].x);
      return curve[i - 1].torque + t * (curve[i].torque - curve[i - 1].torque);
    }
  }
  return curve.back().torque;
}

Thrust powertrain_thrust(double v, int gear, const VehicleParams& p) {
  Thrust out;
  out.gear = gear;
  double tau = p.gear_ratios.at(static_cast<std::size_t>(gear));
  double wheel_omega = v / p.wheel_radius;              // rad/s
  out.rpm = wheel_omega * tau * 60.0 / (2.0 * M_PI);
  bool clamped_comb = false, clamped_el = false;
  double t_comb = interp_curve(p.comb_torque_curve, out.rpm, clamped_comb);
  out.F_comb_avail = t_comb * tau * p.coeff_engine / p.wheel_radius;
  double omega_el = wheel_omega * p.tau_el;
  double t_el = interp_curve(p.el_torque_curve, omega_el, clamped_el);
  out.F_el_avail = t_el * p.tau_el / p.wheel_radius;
  out.rpm_clamped = clamped_comb || clamped_el;
  return out;
}

Thrust best_gear_thrust(double v, const VehicleParams& p) {
  // envelope over gears whose operating rpm lies inside the torque curve
  // domain; clamped gears are a last resort (and stay flagged)
  Thrust best;
  bool have = false;
  for (std::size_t q = 0; q < p.gear_ratios.size(); ++q) {
    Thrust t = powertrain_thrust(v, static_cast<int>(q), p);
    bool better = !have || (best.rpm_clamped && !t.rpm_clamped) ||
                  (best.rpm_clamped == t.rpm_clamped && t.F_comb_avail > best.F_comb_avail);
    if (better) {
      best = t;
      have = true;
    }
  }
  return best;
}

namespace {

// Internal per-step solver. Resolves the coupling between load transfer and
// applied forces with a short fixed-point loop, then re-derives the applied
// forces from the converged tire limits so the friction circle holds exactly
// in the emitted ledger.
struct StepInputs {
  double v;
  const track::GridPoint* pt;
  double delta_s;
  PowertrainMode mode;
  double F_dec;  // commanded braking force (<= 0), Braking mode only
  double e_el_cap_j;
  double fuel_cap_kg;
  // When >= 0, the step applies partial thrust/braking so the net
  // longitudinal force equals this target (speed-control step).
  bool use_force_target = false;
  double force_target = 0.0;  // total powertrain+brake force, N
};

struct Resolved {
  PointLedger ledger;
  double v_dot = 0.0;
};

Resolved resolve_forces(const StepInputs& in, const VehicleParams& p) {
  const auto& pt = *in.pt;
  const double v = in.v;
  AeroForces aero = aero_forces(v, p, pt.high_speed);
  Thrust thrust = best_gear_thrust(v, p);
  double v_dot = 0.0;
  VerticalLoads loads;
  TireLimits lim;
  double fxf = 0.0, fxr = 0.0, throttle = 0.0, fuel = 0.0, e_used = 0.0, e_rec = 0.0;
  std::uint8_t flags = 0;
  const double dt = in.delta_s / v;

  for (int iter = 0; iter < 40; ++iter) {
    loads = vertical_loads(v, v_dot, pt.slope_rad, aero, p);
    lim = tire_limits(loads.F_z_f, loads.F_z_r, v, pt.curve_radius, p, pt.low_speed);
    double rf = p.C_res * loads.F_z_f, rr = p.C_res * loads.F_z_r;
    double resist = aero.F_aero + rf + rr + p.m * p.g * std::sin(pt.slope_rad);
    fxf = fxr = throttle = fuel = e_used = e_rec = 0.0;
    flags = 0;
    if (loads.wheel_lift) flags |= kFlagWheelLift;
    if (lim.saturated_f || lim.saturated_r) flags |= kFlagSaturated;
    if (thrust.rpm_clamped) flags |= kFlagRpmClamped;

    switch (in.mode) {
      case PowertrainMode::Both:
      case PowertrainMode::CombOnly: {
        fxr = std::min(thrust.F_comb_avail, lim.F_t_r);
        if (in.mode == PowertrainMode::Both) fxf = std::min(thrust.F_el_avail, lim.F_t_f);
        // honor remaining budgets
        double fuel_need = thrust.F_comb_avail > 0
                               ? p.p_max_per_s * (fxr / thrust.F_comb_avail) * dt
                               : 0.0;
        if (fuel_need > in.fuel_cap_kg && fuel_need > 0) {
          double ratio = in.fuel_cap_kg / fuel_need;
          fxr *= ratio;
        }
        double e_need = fxf * in.delta_s / p.eta_el_traction;
        if (e_need > in.e_el_cap_j && e_need > 0) {
          double ratio = in.e_el_cap_j / e_need;
          fxf *= ratio;
        }
        if (in.use_force_target) {
          // scale thrust down to land exactly on the speed target
          double want = in.force_target;  // powertrain force required
          if (want < 0) want = 0;
          double total = fxf + fxr;
          if (total > want && total > 0) {
            double ratio = want / total;
            fxf *= ratio;
            fxr *= ratio;
          }
        }
        throttle = thrust.F_comb_avail > 0 ? fxr / thrust.F_comb_avail : 0.0;
        fuel = p.p_max_per_s * throttle * dt;
        e_used = fxf * in.delta_s / p.eta_el_traction;
        break;
      }
      case PowertrainMode::Sailing: {
        double want = std::abs(p.F_sail);
        double ff = std::min(want, lim.F_t_f);
        double fr = std::min(want - ff, lim.F_t_r);
        if (ff + fr < want - 1e-12) flags |= kFlagSailCapped;
        fxf = -ff;
        fxr = -fr;
        e_rec = (ff + fr) * in.delta_s * p.eta_el_rec;
        break;
      }
      case PowertrainMode::Braking: {
        double cmd = std::abs(in.F_dec);
        double cap = lim.F_t_f + lim.F_t_r;
        double applied = std::min(cmd, cap);
        // split proportionally to per-axle capacity; the clamp keeps the
        // split inside the stored limits despite rounding
        double ff = cap > 0 ? std::min(applied * lim.F_t_f / cap, lim.F_t_f) : 0.0;
        double fr = cap > 0 ? std::min(applied * lim.F_t_r / cap, lim.F_t_r) : 0.0;
        fxf = -ff;
        fxr = -fr;
        e_rec = std::min(applied, std::abs(p.F_dec_max)) * in.delta_s * p.eta_el_rec;
        break;
      }
    }
    double v_dot_new = (fxf + fxr - resist) / p.m;
    if (std::abs(v_dot_new - v_dot) < 1e-11 * std::max(1.0, std::abs(v_dot_new))) {
      v_dot = v_dot_new;
      break;
    }
    v_dot = v_dot_new;
  }

  Resolved out;
  out.v_dot = v_dot;
  PointLedger& led = out.ledger;
  led.s = pt.s;
  led.v = v;
  led.v_dot = v_dot;
  led.dt = dt;
  led.mode = in.mode;
  led.gear = thrust.gear;
  led.throttle = throttle;
  led.F_x_f = fxf;
  led.F_x_r = fxr;
  led.F_aero = aero.F_aero;
  led.R_f = p.C_res * loads.F_z_f;
  led.R_r = p.C_res * loads.F_z_r;
  led.F_z_f = loads.F_z_f;
  led.F_z_r = loads.F_z_r;
  led.F_y_f = lim.F_y_f;
  led.F_y_r = lim.F_y_r;
  led.F_t_f = lim.F_t_f;
  led.F_t_r = lim.F_t_r;
  led.fuel_kg = fuel;
  led.e_used_j = e_used;
  led.e_rec_j = e_rec;
  led.flags = flags;
  return out;
}

double advance(double v, double v_dot, double delta_s, Integrator integ) {
  if (integ == Integrator::SpeedEuler) return v + v_dot * delta_s / v;
  double e = v * v + 2.0 * v_dot * delta_s;
  return e > 0 ? std::sqrt(e) : -1.0;
}

}  // namespace

StepResult step(double v_k, const track::GridPoint& pt, double delta_s, PowertrainMode mode,
                double F_dec, const VehicleParams& p, Integrator integ, double e_el_cap_j,
                double fuel_cap_kg) {
  if (!(v_k > 0)) throw SimulationError("step: speed must be positive", 0);
  StepInputs in{v_k, &pt, delta_s, mode, F_dec, e_el_cap_j, fuel_cap_kg};
  Resolved r = resolve_forces(in, p);
  StepResult out;
  out.ledger = r.ledger;
  out.v_next = advance(v_k, r.v_dot, delta_s, integ);
  return out;
}

StrategyBudgets StrategyBudgets::unlimited(const track::TrackGeometry& g) {
  StrategyBudgets b;
  b.e_el_j.assign(g.n_regions, std::numeric_limits<double>::infinity());
  b.fuel_kg.assign(g.n_regions, std::numeric_limits<double>::infinity());
  return b;
}

StrategyBudgets StrategyBudgets::none(const track::TrackGeometry& g) {
  StrategyBudgets b;
  b.e_el_j.assign(g.n_regions, 0.0);
  b.fuel_kg.assign(g.n_regions, 0.0);
  return b;
}

namespace {

// Max speed at point k such that one max-braking step still reaches v_next
// at k+1: the inverse of the forward update at full braking, solved by
// fixed-point iteration since the deceleration depends on the entry speed.
double backward_braking_speed(const track::GridPoint& pt, double v_next, double delta_s,
                              const VehicleParams& p, Integrator integ) {
  double v = v_next;
  for (int i = 0; i < 40; ++i) {
    StepInputs in{std::max(v, 1e-3), &pt, delta_s, PowertrainMode::Braking,
                  -std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
    Resolved r = resolve_forces(in, p);
    double decel = -r.v_dot;  // positive
    if (decel <= 0) return v_next;  // cannot brake here (saturated tires)
    double cand = integ == Integrator::SpeedEuler
                      ? v_next + decel * delta_s / std::max(v, 1e-3)
                      : std::sqrt(v_next * v_next + 2.0 * decel * delta_s);
    if (std::abs(cand - v) < 1e-10) return cand;
    v = cand;
  }
  return v;
}

double apex_speed(const track::GridPoint& pt, const VehicleParams& p) {
  if (pt.is_straight) return std::numeric_limits<double>::infinity();
  double mu_eff = p.mu * (pt.low_speed ? p.coeff_adherence : 1.0);
  const double r2 = 2.0 * pt.curve_radius;
  double v = std::sqrt(mu_eff * p.m * p.g * 0.5 * std::cos(pt.slope_rad) * r2 / p.m);
  for (int i = 0; i < 100; ++i) {
    AeroForces aero = aero_forces(v, p, pt.high_speed);
    VerticalLoads loads = vertical_loads(v, 0.0, pt.slope_rad, aero, p);
    // the apex is set by the axle whose adherence runs out first
    double fz = std::min(loads.F_z_f, loads.F_z_r);
    double cand = std::sqrt(mu_eff * fz * r2 / p.m);
    if (!std::isfinite(cand) || cand > 150.0) return std::numeric_limits<double>::infinity();
    if (std::abs(cand - v) < 1e-6) return cand;
    v = cand;
  }
  return v;
}

}  // namespace

PreparedTrack prepare(const track::TrackGeometry& g, const VehicleParams& p, Integrator integ) {
  g.validate();
  p.validate();
  PreparedTrack trk;
  trk.geometry = g;
  trk.params = p;
  trk.envelope_integrator = integ;
  const std::size_t n = g.points.size();
  trk.corner_limit.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    trk.corner_limit[k] = apex_speed(g.points[k], p);
    if (trk.corner_limit[k] < 0.5)
      throw SimulationError("infeasible apex: no feasible cornering speed at s=" +
                                fmt_double(g.points[k].s),
                            k);
  }
  trk.envelope = trk.corner_limit;
  // propagate braking limits backward; one extra wrap pass carries the
  // constraint across the lap boundary
  for (int pass = 0; pass < 3; ++pass) {
    bool changed = false;
    for (std::size_t i = n; i-- > 0;) {
      double vn = trk.envelope[(i + 1) % n];
      if (!std::isfinite(vn)) continue;
      double vmax = backward_braking_speed(g.points[i], vn, g.delta_s, p, integ);
      if (vmax < trk.envelope[i] - 1e-12) {
        trk.envelope[i] = vmax;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return trk;
}

namespace {

struct BudgetState {
  int region = -1;
  double e_rem = 0.0;
  double fuel_rem = 0.0;
};

LapResult run_lap(const PreparedTrack& trk, const StrategyBudgets& budgets, double v_start,
                  Integrator integ) {
  const auto& g = trk.geometry;
  const auto& p = trk.params;
  const std::size_t n = g.points.size();
  if (!budgets.banned_el.empty() && budgets.banned_el.size() != n)
    throw std::runtime_error("strategy ban mask does not match the grid");
  if (static_cast<int>(budgets.e_el_j.size()) != g.n_regions ||
      static_cast<int>(budgets.fuel_kg.size()) != g.n_regions)
    throw std::runtime_error("strategy budgets do not match the region count");

  LapResult lap;
  lap.delta_s = g.delta_s;
  lap.v_start = v_start;
  lap.points.reserve(n);
  lap.time_at.reserve(n + 1);
  lap.time_at.push_back(0.0);

  BudgetState bs;
  double v = std::min(v_start, trk.envelope[0]);
  std::uint8_t seen_flags = 0;

  for (std::size_t k = 0; k < n; ++k) {
    const auto& pt = g.points[k];
    if (pt.region != bs.region) {
      bs.region = pt.region;
      bs.e_rem = budgets.e_el_j[static_cast<std::size_t>(pt.region - 1)];
      bs.fuel_rem = budgets.fuel_kg[static_cast<std::size_t>(pt.region - 1)];
    }
    const double target = trk.envelope[(k + 1) % n];
    const bool banned = !budgets.banned_el.empty() && budgets.banned_el[k] != 0;
    const bool fuel_ok = bs.fuel_rem > 1e-15;
    const bool el_ok = !banned && bs.e_rem > 1e-9 && fuel_ok;

    PowertrainMode mode = el_ok    ? PowertrainMode::Both
                          : fuel_ok ? PowertrainMode::CombOnly
                                    : PowertrainMode::Sailing;
    StepInputs in{v, &pt, g.delta_s, mode, 0.0, bs.e_rem, bs.fuel_rem};
    Resolved r = resolve_forces(in, p);
    double v_next = advance(v, r.v_dot, g.delta_s, integ);

    if (v_next > target + 1e-12) {
      // too fast for the envelope: retry with the exact force needed
      double force_needed;
      if (integ == Integrator::SpeedEuler)
        force_needed = p.m * (target - v) * v / g.delta_s;
      else
        force_needed = p.m * (target * target - v * v) / (2.0 * g.delta_s);
      // powertrain/brake share after subtracting passive resistances at the
      // required deceleration
      AeroForces aero = aero_forces(v, p, pt.high_speed);
      double v_dot_req = integ == Integrator::SpeedEuler
                             ? (target - v) * v / g.delta_s
                             : (target * target - v * v) / (2.0 * g.delta_s);
      VerticalLoads loads = vertical_loads(v, v_dot_req, pt.slope_rad, aero, p);
      double resist = aero.F_aero + p.C_res * (loads.F_z_f + loads.F_z_r) +
                      p.m * p.g * std::sin(pt.slope_rad);
      double f_pw = force_needed + resist;
      if (f_pw >= 0) {
        in.use_force_target = true;
        in.force_target = f_pw;
      } else {
        in.mode = PowertrainMode::Braking;
        in.F_dec = f_pw;
      }
      r = resolve_forces(in, p);
      v_next = advance(v, r.v_dot, g.delta_s, integ);
      if (v_next > target) v_next = target;  // tire-limited residue, envelope keeps it small
    }

    if (!(v_next > 0))
      throw SimulationError("stall at s=" + fmt_double(pt.s) + " (grid point " +
                                std::to_string(k) + ")",
                            k);

    bs.e_rem = std::max(0.0, bs.e_rem - r.ledger.e_used_j);
    bs.fuel_rem = std::max(0.0, bs.fuel_rem - r.ledger.fuel_kg);
    lap.fuel_kg += r.ledger.fuel_kg;
    lap.e_el_used_j += r.ledger.e_used_j;
    lap.e_el_rec_kers_j += r.ledger.e_rec_j;
    lap.lap_time += r.ledger.dt;
    seen_flags |= r.ledger.flags;
    lap.points.push_back(r.ledger);
    lap.time_at.push_back(lap.lap_time);
    v = v_next;
  }
  lap.v_end = v;
  if (seen_flags & kFlagWheelLift) lap.warnings.push_back("wheel lift");
  if (seen_flags & kFlagRpmClamped) lap.warnings.push_back("rpm outside torque curve domain");
  if (seen_flags & kFlagSailCapped) lap.warnings.push_back("sailing force tire-capped");
  return lap;
}

}  // namespace

LapResult simulate_lap(const PreparedTrack& trk, const StrategyBudgets& budgets,
                       const SimOptions& opts) {
  if (opts.integrator != trk.envelope_integrator)
    throw std::runtime_error("prepared track was built for a different integrator");
  double v0 = opts.v_start;
  if (v0 > 0) return run_lap(trk, budgets, v0, opts.integrator);
  // periodic flying lap: iterate start speed to the fixed point
  v0 = std::min(trk.envelope[0], 100.0);
  LapResult lap;
  for (int i = 0; i < opts.max_start_iterations; ++i) {
    lap = run_lap(trk, budgets, v0, opts.integrator);
    if (std::abs(lap.v_end - v0) <= opts.start_tolerance) return lap;
    v0 = lap.v_end;
  }
  lap.warnings.push_back("flying-lap start speed did not converge");
  return lap;
}

LapResult simulate_lap(const track::TrackGeometry& g, const VehicleParams& p,
                       const StrategyBudgets& budgets, const SimOptions& opts) {
  return simulate_lap(prepare(g, p, opts.integrator), budgets, opts);
}

LapResult simulate_trace(const PreparedTrack& trk, std::span<const PowertrainMode> modes,
                         std::span<const double> brake_force, double v_start, Integrator integ) {
  const auto& g = trk.geometry;
  const auto& p = trk.params;
  const std::size_t n = g.points.size();
  if (modes.size() != n || brake_force.size() != n)
    throw std::runtime_error("trace length does not match the grid");
  LapResult lap;
  lap.delta_s = g.delta_s;
  lap.v_start = v_start;
  lap.time_at.push_back(0.0);
  double v = v_start;
  std::uint8_t seen = 0;
  for (std::size_t k = 0; k < n; ++k) {
    StepResult r = step(v, g.points[k], g.delta_s, modes[k], brake_force[k], p, integ);
    if (!(r.v_next > 0))
      throw SimulationError("stall at s=" + fmt_double(g.points[k].s), k);
    lap.fuel_kg += r.ledger.fuel_kg;
    lap.e_el_used_j += r.ledger.e_used_j;
    lap.e_el_rec_kers_j += r.ledger.e_rec_j;
    lap.lap_time += r.ledger.dt;
    seen |= r.ledger.flags;
    lap.points.push_back(r.ledger);
    lap.time_at.push_back(lap.lap_time);
    v = r.v_next;
  }
  lap.v_end = v;
  if (seen & kFlagWheelLift) lap.warnings.push_back("wheel lift");
  return lap;
}

double recovery_time_loss(const PreparedTrack& trk, const LapResult& profile, std::size_t k0,
                          double v_reduced) {
  const auto& g = trk.geometry;
  const auto& p = trk.params;
  const std::size_t n = g.points.size();
  if (k0 >= n) return 0.0;
  double v = v_reduced;
  double loss = 0.0;
  for (std::size_t k = k0; k < n; ++k) {
    double v_prof = profile.points[k].v;
    if (v >= v_prof - 1e-9) break;
    const auto& pt = g.points[k];
    PowertrainMode mode = profile.points[k].mode == PowertrainMode::Both
                              ? PowertrainMode::Both
                              : PowertrainMode::CombOnly;
    StepInputs in{v, &pt, g.delta_s, mode, 0.0, std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
    Resolved r = resolve_forces(in, p);
    double v_next = advance(v, r.v_dot, g.delta_s, Integrator::SpeedEuler);
    double target = trk.envelope[(k + 1) % n];
    if (v_next > target) v_next = target;
    loss += g.delta_s / v - profile.points[k].dt;
    if (!(v_next > 0)) break;
    v = v_next;
  }
  return std::max(0.0, loss);
}

TuneResult tune_coefficients(const track::TrackGeometry& g, const VehicleParams& base,
                             const std::vector<double>& reference_speed, const TuneRange& engine,
                             const TuneRange& adherence, const TuneRange& downforce) {
  if (reference_speed.size() != g.points.size())
    throw std::runtime_error("reference speed profile does not match the grid");
  auto values = [](const TuneRange& r) {
    std::vector<double> v;
    for (int i = 0; i < r.steps; ++i)
      v.push_back(r.steps == 1 ? r.lo : r.lo + (r.hi - r.lo) * i / (r.steps - 1));
    return v;
  };
  TuneResult best;
  bool first = true;
  for (double ce : values(engine))
    for (double ca : values(adherence))
      for (double cd : values(downforce)) {
        VehicleParams p = base;
        p.coeff_engine = ce;
        p.coeff_adherence = ca;
        p.coeff_downforce = cd;
        PreparedTrack trk = prepare(g, p);
        StrategyBudgets b = StrategyBudgets::unlimited(g);
        b.e_el_j.assign(g.n_regions, 0.0);  // engine-only reference laps
        LapResult lap = simulate_lap(trk, b, {});
        double sq = 0.0;
        for (std::size_t k = 0; k < g.points.size(); ++k) {
          double d = lap.points[k].v - reference_speed[k];
          sq += d * d;
        }
        double rms = std::sqrt(sq / static_cast<double>(g.points.size()));
        if (first || rms < best.rms) {
          best = {ce, ca, cd, rms};
          first = false;
        }
      }
  return best;
}

std::string lap_result_to_string(const LapResult& lap) {
  std::ostringstream out;
  out << "# lap_time_s=" << fmt_double(lap.lap_time) << " fuel_kg=" << fmt_double(lap.fuel_kg)
      << " e_el_used_kj=" << fmt_double(lap.e_el_used_j / 1000.0)
      << " e_el_rec_kers_kj=" << fmt_double(lap.e_el_rec_kers_j / 1000.0)
      << " v_start=" << fmt_double(lap.v_start) << " v_end=" << fmt_double(lap.v_end) << "\n";
  out << "s,v,mode,gear,throttle,F_x_f,F_x_r,F_aero,R_f,R_r,F_z_f,F_z_r,F_y_f,F_y_r,F_t_f,F_t_r,"
         "fuel_kg,e_used_j,e_rec_j,flags\n";
  for (const auto& q : lap.points) {
    out << fmt_double(q.s) << ',' << fmt_double(q.v) << ',' << static_cast<int>(q.mode) << ','
        << q.gear + 1 << ',' << fmt_double(q.throttle) << ',' << fmt_double(q.F_x_f) << ','
        << fmt_double(q.F_x_r) << ',' << fmt_double(q.F_aero) << ',' << fmt_double(q.R_f) << ','
        << fmt_double(q.R_r) << ',' << fmt_double(q.F_z_f) << ',' << fmt_double(q.F_z_r) << ','
        << fmt_double(q.F_y_f) << ',' << fmt_double(q.F_y_r) << ',' << fmt_double(q.F_t_f) << ','
        << fmt_double(q.F_t_r) << ',' << fmt_double(q.fuel_kg) << ',' << fmt_double(q.e_used_j)
        << ',' << fmt_double(q.e_rec_j) << ',' << static_cast<int>(q.flags) << "\n";
  }
  return out.str();
}

}  // namespace lapstrat::vehicle
