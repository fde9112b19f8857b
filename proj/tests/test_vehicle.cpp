#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lapstrat/track.hpp"
#include "lapstrat/vehicle.hpp"

using namespace lapstrat;
using namespace lapstrat::vehicle;

namespace {

track::TrackGeometry straight_track(double length = 1000.0, double delta_s = 2.0) {
  track::TrackGeometry g;
  g.delta_s = delta_s;
  g.length = length;
  auto n = static_cast<std::size_t>(length / delta_s);
  for (std::size_t k = 0; k < n; ++k) {
    track::GridPoint p;
    p.s = delta_s * static_cast<double>(k);
    p.curve_radius = std::numeric_limits<double>::infinity();
    p.is_straight = true;
    p.section = 1 + static_cast<int>(3 * k / n);
    p.sector = p.section;
    p.region = 1;
    g.points.push_back(p);
  }
  g.recount();
  g.validate();
  return g;
}

}  // namespace

TEST_CASE("aero forces follow the v-squared law with the quarter factor") {
  VehicleParams p = default_params();
  p.rho = 1.225;
  p.cx = 1.0;
  p.S = 1.5;
  auto a0 = aero_forces(0.0, p);
  CHECK(a0.F_aero == 0.0);
  CHECK(a0.F_down_f == 0.0);

  auto a = aero_forces(50.0, p);
  CHECK(a.F_aero == doctest::Approx(2296.875).epsilon(1e-12));
  CHECK(a.F_down_f == doctest::Approx(0.25 * 1.225 * p.cz * 1.5 * 2500.0).epsilon(1e-12));
  CHECK(a.F_down_f == a.F_down_r);

  auto a2 = aero_forces(100.0, p);
  CHECK(a2.F_aero == doctest::Approx(4.0 * a.F_aero).epsilon(1e-12));
  CHECK(a2.F_down_r == doctest::Approx(4.0 * a.F_down_r).epsilon(1e-12));

  p.coeff_downforce = 1.2;
  auto hi = aero_forces(50.0, p, true);
  CHECK(hi.F_down_f == doctest::Approx(1.2 * a.F_down_f).epsilon(1e-12));
  CHECK(hi.F_aero == doctest::Approx(a.F_aero).epsilon(1e-12));
}

TEST_CASE("vertical loads: static case, pure transfer, and full evaluation") {
  VehicleParams p = default_params();
  AeroForces zero;
  auto st = vertical_loads(0.0, 0.0, 0.0, zero, p);
  CHECK(st.F_z_f == doctest::Approx(p.m * p.g / 2).epsilon(1e-12));
  CHECK(st.F_z_r == doctest::Approx(p.m * p.g / 2).epsilon(1e-12));

  auto tr = vertical_loads(0.0, 3.0, 0.0, zero, p);
  double shift = p.m * 3.0 * p.h / (2.0 * p.L);
  CHECK(tr.F_z_r - st.F_z_r == doctest::Approx(shift).epsilon(1e-9));
  CHECK(st.F_z_f - tr.F_z_f == doctest::Approx(shift).epsilon(1e-9));

  // full evaluation against a symbolic recomputation
  double v = 80.0, vd = 3.0, al = 0.02;
  AeroForces a = aero_forces(v, p);
  auto ld = vertical_loads(v, vd, al, a, p);
  double want_f = -a.F_aero * p.h_aero / (2 * p.L) + a.F_down_f - p.m * vd * p.h / (2 * p.L) -
                  p.m * p.g * p.h * std::sin(al) / (2 * p.L) + p.m * p.g * std::cos(al) / 2;
  double want_r = a.F_aero * p.h_aero / (2 * p.L) + a.F_down_r + p.m * vd * p.h / (2 * p.L) +
                  p.m * p.g * p.h * std::sin(al) / (2 * p.L) + p.m * p.g * std::cos(al) / 2;
  CHECK(ld.F_z_f == doctest::Approx(want_f).epsilon(1e-12));
  CHECK(ld.F_z_r == doctest::Approx(want_r).epsilon(1e-12));
  // transfer terms cancel in the sum
  CHECK(ld.F_z_f + ld.F_z_r ==
        doctest::Approx(a.F_down_f + a.F_down_r + p.m * p.g * std::cos(al)).epsilon(1e-12));
}

TEST_CASE("tire limits trace the friction circle") {
  VehicleParams p = default_params();
  p.m = 900.0;
  p.mu = 1.6;

  auto straight = tire_limits(6000.0, 6000.0, 40.0,
                              std::numeric_limits<double>::infinity(), p, false);
  CHECK(straight.F_t_f == doctest::Approx(1.6 * 6000.0).epsilon(1e-12));
  CHECK(straight.F_y_f == 0.0);

  auto curved = tire_limits(6000.0, 6000.0, 40.0, 100.0, p, false);
  CHECK(curved.F_y_f == doctest::Approx(7200.0).epsilon(1e-12));
  CHECK(curved.F_t_f == doctest::Approx(std::sqrt(9600.0 * 9600.0 - 7200.0 * 7200.0))
                            .epsilon(1e-12));
  CHECK(curved.F_t_f == doctest::Approx(6349.803).epsilon(1e-4));

  // exactly at the boundary the remaining budget is zero
  double r_boundary = p.m * 40.0 * 40.0 / (2.0 * 9600.0);
  auto edge = tire_limits(6000.0, 6000.0, 40.0, r_boundary, p, false);
  CHECK(edge.F_t_f == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_FALSE(edge.saturated_f);

  auto sat = tire_limits(6000.0, 6000.0, 40.0, 0.9 * r_boundary, p, false);
  CHECK(sat.F_t_f == 0.0);
  CHECK(sat.saturated_f);

  p.coeff_adherence = 0.9;
  auto low = tire_limits(6000.0, 6000.0, 10.0, 100.0, p, true);
  auto ref = tire_limits(6000.0, 6000.0, 10.0, 100.0, p, false);
  CHECK(low.F_ad_f == doctest::Approx(0.9 * ref.F_ad_f).epsilon(1e-12));
}

TEST_CASE("powertrain thrust from torque, ratio, and wheel radius") {
  VehicleParams p = default_params();
  p.comb_torque_curve = {{0.0, 500.0}, {10000.0, 500.0}};
  p.gear_ratios = {3.0};
  p.wheel_radius = 0.33;
  p.coeff_engine = 1.0;
  auto t = powertrain_thrust(20.0, 0, p);
  CHECK(t.F_comb_avail == doctest::Approx(500.0 * 3.0 / 0.33).epsilon(1e-12));
  CHECK(t.F_comb_avail == doctest::Approx(4545.45).epsilon(1e-4));

  p.coeff_engine = 0.9;
  auto t9 = powertrain_thrust(20.0, 0, p);
  CHECK(t9.F_comb_avail == doctest::Approx(0.9 * t.F_comb_avail).epsilon(1e-12));

  // interpolation between curve points
  p.coeff_engine = 1.0;
  p.comb_torque_curve = {{1000.0, 100.0}, {2000.0, 200.0}};
  double v_mid = 1500.0 / 60.0 * 2.0 * M_PI * p.wheel_radius / 3.0;
  auto tm = powertrain_thrust(v_mid, 0, p);
  CHECK(tm.rpm == doctest::Approx(1500.0).epsilon(1e-9));
  CHECK(tm.F_comb_avail == doctest::Approx(150.0 * 3.0 / 0.33).epsilon(1e-9));
  CHECK_FALSE(tm.rpm_clamped);

  auto lowrpm = powertrain_thrust(0.1, 0, p);
  CHECK(lowrpm.rpm_clamped);
  CHECK(lowrpm.F_comb_avail == doctest::Approx(100.0 * 3.0 / 0.33).epsilon(1e-9));
}

TEST_CASE("best gear maximizes wheel thrust over in-range gears") {
  VehicleParams p = default_params();
  for (double v : {10.0, 25.0, 45.0, 70.0, 90.0}) {
    Thrust best = best_gear_thrust(v, p);
    bool any_in_range = false;
    for (std::size_t q = 0; q < p.gear_ratios.size(); ++q) {
      Thrust t = powertrain_thrust(v, static_cast<int>(q), p);
      if (t.rpm_clamped) continue;
      any_in_range = true;
      CHECK(best.F_comb_avail >= t.F_comb_avail - 1e-12);
    }
    if (any_in_range) CHECK_FALSE(best.rpm_clamped);
  }
}

TEST_CASE("step: combustion-only applies rear thrust only") {
  VehicleParams p = default_params();
  track::GridPoint pt;
  pt.curve_radius = std::numeric_limits<double>::infinity();
  pt.is_straight = true;
  auto r = step(30.0, pt, 2.0, PowertrainMode::CombOnly, 0.0, p);
  CHECK(r.ledger.F_x_f == 0.0);
  CHECK(r.ledger.F_x_r > 0.0);
  Thrust t = best_gear_thrust(30.0, p);
  CHECK(r.ledger.F_x_r == doctest::Approx(std::min(t.F_comb_avail, r.ledger.F_t_r)));
  CHECK(r.ledger.dt == doctest::Approx(2.0 / 30.0).epsilon(1e-12));
  CHECK(r.v_next == doctest::Approx(30.0 + r.ledger.v_dot * 2.0 / 30.0).epsilon(1e-12));
  CHECK(r.ledger.e_used_j == 0.0);
  CHECK(r.ledger.fuel_kg > 0.0);
}

TEST_CASE("step: sailing recovers the advertised energy") {
  VehicleParams p = default_params();
  p.F_sail = -1500.0;
  p.eta_el_rec = 0.8;
  track::GridPoint pt;
  pt.curve_radius = std::numeric_limits<double>::infinity();
  pt.is_straight = true;
  auto r = step(40.0, pt, 2.0, PowertrainMode::Sailing, 0.0, p);
  CHECK(r.ledger.e_rec_j == doctest::Approx(2400.0).epsilon(1e-12));
  CHECK(r.ledger.F_x_f + r.ledger.F_x_r == doctest::Approx(-1500.0).epsilon(1e-12));
  CHECK(r.ledger.fuel_kg == 0.0);
  CHECK(r.ledger.e_used_j == 0.0);
  CHECK(r.v_next < 40.0);
}

TEST_CASE("step: braking saturates at the combined tire limit") {
  VehicleParams p = default_params();
  track::GridPoint pt;
  pt.curve_radius = std::numeric_limits<double>::infinity();
  pt.is_straight = true;
  auto r = step(50.0, pt, 2.0, PowertrainMode::Braking, -1e9, p);
  CHECK(r.ledger.F_x_f + r.ledger.F_x_r ==
        doctest::Approx(-(r.ledger.F_t_f + r.ledger.F_t_r)).epsilon(1e-12));
  CHECK(std::abs(r.ledger.F_x_f) <= r.ledger.F_t_f + 1e-9);
  CHECK(std::abs(r.ledger.F_x_r) <= r.ledger.F_t_r + 1e-9);
  // regen credit capped by F_dec_max, not by what the tires actually did
  CHECK(r.ledger.e_rec_j ==
        doctest::Approx(std::min(std::abs(r.ledger.F_x_f + r.ledger.F_x_r),
                                 std::abs(p.F_dec_max)) *
                        2.0 * p.eta_el_rec)
            .epsilon(1e-9));

  auto gentle = step(50.0, pt, 2.0, PowertrainMode::Braking, -2000.0, p);
  CHECK(gentle.ledger.F_x_f + gentle.ledger.F_x_r == doctest::Approx(-2000.0).epsilon(1e-9));
  CHECK(gentle.ledger.e_rec_j == doctest::Approx(2000.0 * 2.0 * p.eta_el_rec).epsilon(1e-9));
}

TEST_CASE("step: electric budget cap scales front thrust to the exact budget") {
  VehicleParams p = default_params();
  track::GridPoint pt;
  pt.curve_radius = std::numeric_limits<double>::infinity();
  pt.is_straight = true;
  auto full = step(30.0, pt, 2.0, PowertrainMode::Both, 0.0, p);
  REQUIRE(full.ledger.e_used_j > 100.0);
  double cap = full.ledger.e_used_j / 3.0;
  auto capped = step(30.0, pt, 2.0, PowertrainMode::Both, 0.0, p, Integrator::SpeedEuler, cap);
  CHECK(capped.ledger.e_used_j == doctest::Approx(cap).epsilon(1e-9));
  CHECK(capped.ledger.F_x_f == doctest::Approx(cap * p.eta_el_traction / 2.0).epsilon(1e-9));
  // less load transfer under the weaker launch leaves the rear axle with
  // less capacity, never more
  CHECK(capped.ledger.F_x_r <= full.ledger.F_x_r + 1e-9);

  double fuel_cap = full.ledger.fuel_kg / 2.0;
  auto fcap = step(30.0, pt, 2.0, PowertrainMode::Both, 0.0, p, Integrator::SpeedEuler,
                   std::numeric_limits<double>::infinity(), fuel_cap);
  CHECK(fcap.ledger.fuel_kg == doctest::Approx(fuel_cap).epsilon(1e-9));
}

TEST_CASE("step rejects nonpositive speed") {
  VehicleParams p = default_params();
  track::GridPoint pt;
  pt.is_straight = true;
  pt.curve_radius = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(step(0.0, pt, 2.0, PowertrainMode::Both, 0.0, p), SimulationError);
}

TEST_CASE("params validate and round-trip through the config format") {
  VehicleParams p = default_params();
  p.mu = 1.55;
  p.coeff_engine = 0.93;
  VehicleParams q = params_from_string(params_to_string(p), "mem");
  CHECK(q.mu == p.mu);
  CHECK(q.coeff_engine == p.coeff_engine);
  CHECK(q.comb_torque_curve.size() == p.comb_torque_curve.size());
  CHECK(q.comb_torque_curve[2].torque == p.comb_torque_curve[2].torque);
  CHECK(q.gear_ratios == p.gear_ratios);

  VehicleParams bad = default_params();
  bad.m = -1;
  CHECK_THROWS(bad.validate());
  bad = default_params();
  bad.eta_el_rec = 1.5;
  CHECK_THROWS(bad.validate());
  bad = default_params();
  bad.F_sail = 10.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("unlimited lap on a pure straight approaches terminal speed monotonically") {
  track::TrackGeometry g = straight_track();
  VehicleParams p = default_params();
  PreparedTrack trk = prepare(g, p);
  SimOptions opts;
  opts.v_start = 20.0;
  LapResult lap = simulate_lap(trk, StrategyBudgets::unlimited(g), opts);
  double peak_vdot = 0.0;
  for (std::size_t k = 1; k < lap.points.size(); ++k) {
    CHECK(lap.points[k].v >= lap.points[k - 1].v - 1e-9);
    peak_vdot = std::max(peak_vdot, lap.points[k].v_dot);
  }
  CHECK(lap.points.back().v_dot < 0.2 * peak_vdot);
  CHECK(lap.points.back().v > 60.0);
}

TEST_CASE("zero budgets lead to a stall on a full lap") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  PreparedTrack trk = prepare(g, p);
  SimOptions opts;
  opts.v_start = 30.0;
  CHECK_THROWS_AS(simulate_lap(trk, StrategyBudgets::none(g), opts), SimulationError);
}

TEST_CASE("flying lap reaches a periodic start speed") {
  for (const char* name : {"oval-1km", "road-2km"}) {
    track::TrackGeometry g = track::make_preset(name, 2.0);
    VehicleParams p = default_params();
    PreparedTrack trk = prepare(g, p);
    LapResult lap = simulate_lap(trk, StrategyBudgets::unlimited(g), {});
    CHECK(std::abs(lap.v_end - lap.v_start) <= 1e-6);
    CHECK(lap.lap_time > 0.0);
    for (const auto& w : lap.warnings) MESSAGE(std::string(name), ": ", w);
    CHECK(lap.warnings.empty());
  }
}

TEST_CASE("full-lap ledgers keep every core invariant") {
  for (const char* name : {"oval-1km", "road-2km"}) {
    track::TrackGeometry g = track::make_preset(name, 2.0);
    VehicleParams p = default_params();
    PreparedTrack trk = prepare(g, p);
    LapResult lap = simulate_lap(trk, StrategyBudgets::unlimited(g), {});

    double t_sum = 0.0, fuel_sum = 0.0, e_sum = 0.0, rec_sum = 0.0;
    for (std::size_t k = 0; k < lap.points.size(); ++k) {
      const auto& q = lap.points[k];
      // friction circle, exactly as stored
      CHECK(q.F_x_f * q.F_x_f <= q.F_t_f * q.F_t_f + 1e-9);
      CHECK(q.F_x_r * q.F_x_r <= q.F_t_r * q.F_t_r + 1e-9);
      // load-sum identity
      const auto& pt = g.points[k];
      AeroForces a = aero_forces(q.v, p, pt.high_speed);
      double want = a.F_down_f + a.F_down_r + p.m * p.g * std::cos(pt.slope_rad);
      CHECK(std::abs(q.F_z_f + q.F_z_r - want) <= 1e-6 * p.m * p.g);
      // envelope respected
      CHECK(q.v <= trk.envelope[k] + 1e-7);
      t_sum += q.dt;
      fuel_sum += q.fuel_kg;
      e_sum += q.e_used_j;
      rec_sum += q.e_rec_j;
    }
    CHECK(std::abs(lap.lap_time - t_sum) <= 1e-9);
    CHECK(lap.fuel_kg == fuel_sum);
    CHECK(lap.e_el_used_j == e_sum);
    CHECK(lap.e_el_rec_kers_j == rec_sum);
    REQUIRE(lap.time_at.size() == lap.points.size() + 1);
    CHECK(lap.time_at.back() == doctest::Approx(lap.lap_time).epsilon(1e-12));
  }
}

TEST_CASE("electric assist never slows the lap") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  PreparedTrack trk = prepare(g, p);
  StrategyBudgets comb_only = StrategyBudgets::unlimited(g);
  comb_only.e_el_j.assign(g.n_regions, 0.0);
  LapResult slow = simulate_lap(trk, comb_only, {});
  LapResult fast = simulate_lap(trk, StrategyBudgets::unlimited(g), {});
  CHECK(fast.lap_time <= slow.lap_time + 1e-9);
  CHECK(fast.lap_time < slow.lap_time - 0.01);
}

TEST_CASE("per-region budgets are respected exactly") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  PreparedTrack trk = prepare(g, p);
  StrategyBudgets b = StrategyBudgets::unlimited(g);
  b.e_el_j = {400.0 * 1000.0, 300.0 * 1000.0};
  b.fuel_kg = {0.4, 0.3};
  LapResult lap = simulate_lap(trk, b, {});
  std::vector<double> e_by_region(g.n_regions, 0.0), f_by_region(g.n_regions, 0.0);
  for (std::size_t k = 0; k < lap.points.size(); ++k) {
    e_by_region[static_cast<std::size_t>(g.points[k].region - 1)] += lap.points[k].e_used_j;
    f_by_region[static_cast<std::size_t>(g.points[k].region - 1)] += lap.points[k].fuel_kg;
  }
  for (int i = 0; i < g.n_regions; ++i) {
    CHECK(e_by_region[static_cast<std::size_t>(i)] <= b.e_el_j[static_cast<std::size_t>(i)] + 1e-6);
    CHECK(f_by_region[static_cast<std::size_t>(i)] <=
          b.fuel_kg[static_cast<std::size_t>(i)] + 1e-12);
  }
}

TEST_CASE("electric ban mask shuts the front motor off pointwise") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  PreparedTrack trk = prepare(g, p);
  StrategyBudgets b = StrategyBudgets::unlimited(g);
  b.banned_el.assign(g.points.size(), 0);
  for (std::size_t k = 0; k < 100; ++k) b.banned_el[k] = 1;
  LapResult lap = simulate_lap(trk, b, {});
  for (std::size_t k = 0; k < 100; ++k) CHECK(lap.points[k].e_used_j == 0.0);
}

TEST_CASE("grid refinement changes the lap time by under 0.2 percent") {
  track::TrackGeometry g2 = track::make_preset("oval-1km", 2.0);
  track::TrackGeometry g1 = track::make_preset("oval-1km", 1.0);
  VehicleParams p = default_params();
  LapResult r2 = simulate_lap(g2, p, StrategyBudgets::unlimited(g2), {});
  LapResult r1 = simulate_lap(g1, p, StrategyBudgets::unlimited(g1), {});
  CHECK(std::abs(r2.lap_time - r1.lap_time) / r1.lap_time < 0.002);
}

TEST_CASE("energy-form integrator stays close to the default update") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  SimOptions opts;
  opts.integrator = Integrator::EnergyEuler;
  LapResult e = simulate_lap(g, p, StrategyBudgets::unlimited(g), opts);
  LapResult s = simulate_lap(g, p, StrategyBudgets::unlimited(g), {});
  CHECK(std::abs(e.lap_time - s.lap_time) / s.lap_time < 0.002);
}

TEST_CASE("recovery loss is positive below profile speed and zero at it") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  PreparedTrack trk = prepare(g, p);
  LapResult lap = simulate_lap(trk, StrategyBudgets::unlimited(g), {});
  std::size_t k0 = 10;
  CHECK(recovery_time_loss(trk, lap, k0, lap.points[k0].v) == 0.0);
  double slow = recovery_time_loss(trk, lap, k0, 0.6 * lap.points[k0].v);
  double slower = recovery_time_loss(trk, lap, k0, 0.4 * lap.points[k0].v);
  CHECK(slow > 0.0);
  CHECK(slower > slow);
}

TEST_CASE("coefficient tuning recovers planted values") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams truth = default_params();
  truth.coeff_engine = 0.9;
  truth.coeff_adherence = 1.1;
  truth.coeff_downforce = 1.05;
  PreparedTrack trk = prepare(g, truth);
  StrategyBudgets b = StrategyBudgets::unlimited(g);
  b.e_el_j.assign(g.n_regions, 0.0);
  LapResult ref = simulate_lap(trk, b, {});
  std::vector<double> profile;
  for (const auto& q : ref.points) profile.push_back(q.v);

  VehicleParams base = default_params();
  TuneResult best = tune_coefficients(g, base, profile, {0.8, 1.2, 5}, {0.9, 1.3, 5},
                                      {1.0, 1.1, 3});
  CHECK(best.coeff_engine == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(best.coeff_adherence == doctest::Approx(1.1).epsilon(1e-12));
  CHECK(best.coeff_downforce == doctest::Approx(1.05).epsilon(1e-12));
  CHECK(best.rms < 1e-9);
}

TEST_CASE("lap export carries the summary and one row per point") {
  track::TrackGeometry g = track::make_preset("oval-1km", 2.0);
  VehicleParams p = default_params();
  LapResult lap = simulate_lap(g, p, StrategyBudgets::unlimited(g), {});
  std::string text = lap_result_to_string(lap);
  std::size_t rows = 0;
  for (char c : text) rows += (c == '\n');
  CHECK(rows == lap.points.size() + 2);
  CHECK(text.find("lap_time_s=") != std::string::npos);
}
