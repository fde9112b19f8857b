#include "lapstrat/miqcp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lapstrat/common.hpp"

namespace lapstrat::miqcp {

namespace {

constexpr double kSpeedCap = 150.0;  // m/s, box bound only
constexpr double kLethargyCap = 10.0;  // s/m

const char* field_name(VarField f) {
  switch (f) {
    case VarField::kEKin: return "E_kin";
    case VarField::kV: return "v";
    case VarField::kDtDs: return "dt_ds";
    case VarField::kUBoth: return "u_both";
    case VarField::kUComb: return "u_comb";
    case VarField::kUSail: return "u_sail";
    case VarField::kUBrake: return "u_brake";
    case VarField::kFF: return "F_f";
    case VarField::kFR: return "F_r";
    case VarField::kFBrk: return "F_brk";
    case VarField::kFuel: return "fuel";
    case VarField::kEUsed: return "e_used";
    case VarField::kERec: return "e_rec";
  }
  return "?";
}

double max_curve_torque(const std::vector<vehicle::TorquePoint>& curve) {
  double t = 0.0;
  for (const auto& p : curve) t = std::max(t, p.torque);
  return t;
}

}  // namespace

double LinExpr::eval(const std::vector<double>& x) const {
  double v = constant;
  for (const auto& [i, c] : terms) v += c * x[static_cast<std::size_t>(i)];
  return v;
}

int DiscretizedProblem::index(VarField f, int k) const {
  if (k < 0 || k >= n) throw std::out_of_range("grid index out of range");
  return k * kVarsPerPoint + static_cast<int>(f);
}

DiscretizedProblem build_problem(const track::TrackGeometry& g,
                                 const vehicle::VehicleParams& params,
                                 const vehicle::RegulationLimits& reg) {
  if (g.points.empty()) throw std::invalid_argument("empty geometry");
  g.validate();
  if (g.size() < 2) throw std::invalid_argument("need at least two grid points");

  DiscretizedProblem pb;
  pb.delta_s = g.delta_s;
  pb.n = static_cast<int>(g.size());
  const int n = pb.n;
  const double ds = pb.delta_s;
  const auto& p = params;

  double f_el_max = max_curve_torque(p.el_torque_curve) * p.tau_el / p.wheel_radius;
  double top_gear = p.gear_ratios.empty() ? 1.0 : *std::max_element(p.gear_ratios.begin(),
                                                                    p.gear_ratios.end());
  double f_comb_max =
      max_curve_torque(p.comb_torque_curve) * top_gear * p.coeff_engine / p.wheel_radius;
  double down_max = 0.5 * p.rho * p.cz * std::max(1.0, p.coeff_downforce) * p.S *
                    kSpeedCap * kSpeedCap;
  double f_brk_min = -(p.mu * std::max(1.0, p.coeff_adherence) * (p.m * p.g + down_max) +
                       std::abs(p.F_sail));
  double e_kin_max = 0.5 * p.m * kSpeedCap * kSpeedCap;
  double rec_rate = std::max(std::abs(p.F_sail), std::abs(p.F_dec_max));

  pb.vars.resize(static_cast<std::size_t>(n) * kVarsPerPoint);
  for (int k = 0; k < n; ++k) {
    auto def = [&](VarField f, double lb, double ub, bool integer = false) {
      auto& v = pb.vars[static_cast<std::size_t>(pb.index(f, k))];
      v.name = std::string(field_name(f)) + "[" + std::to_string(k) + "]";
      v.lb = lb;
      v.ub = ub;
      v.integer = integer;
    };
    def(VarField::kEKin, 0.0, e_kin_max);
    def(VarField::kV, 0.0, kSpeedCap);
    def(VarField::kDtDs, 1.0 / kSpeedCap, kLethargyCap);
    def(VarField::kUBoth, 0.0, 1.0, true);
    def(VarField::kUComb, 0.0, 1.0, true);
    def(VarField::kUSail, 0.0, 1.0, true);
    def(VarField::kUBrake, 0.0, 1.0, true);
    def(VarField::kFF, 0.0, f_el_max);
    def(VarField::kFR, 0.0, f_comb_max);
    def(VarField::kFBrk, f_brk_min, 0.0);
    def(VarField::kFuel, 0.0, p.p_max_per_s * ds * kLethargyCap);
    def(VarField::kEUsed, 0.0, f_el_max * ds / p.eta_el_traction);
    def(VarField::kERec, 0.0, rec_rate * ds * p.eta_el_rec);
  }

  // kinetic forward-Euler recursion, periodic over the lap; drag and rolling
  // resistance are exactly linear in kinetic energy, so the row is linear
  for (int k = 0; k < n; ++k) {
    const auto& pt = g.points[static_cast<std::size_t>(k)];
    double dfc = pt.high_speed ? p.coeff_downforce : 1.0;
    double c_e = p.rho * p.S * (p.cx + p.C_res * p.cz * dfc) / p.m;
    double c_0 = p.C_res * p.m * p.g * std::cos(pt.slope_rad) + p.m * p.g * std::sin(pt.slope_rad);
    LinearRow row;
    row.name = "kinetic[" + std::to_string(k) + "]";
    row.rel = Rel::Eq;
    row.rhs = -ds * c_0;
    int next = (k + 1) % n;
    if (next == k) throw std::logic_error("degenerate grid");
    row.terms.push_back({pb.index(VarField::kEKin, next), 1.0});
    row.terms.push_back({pb.index(VarField::kEKin, k), -1.0 + ds * c_e});
    row.terms.push_back({pb.index(VarField::kFF, k), -ds});
    row.terms.push_back({pb.index(VarField::kFR, k), -ds});
    row.terms.push_back({pb.index(VarField::kFBrk, k), -ds});
    pb.linear.push_back(std::move(row));
  }

  LinearRow fuel_row{"fuel-cap", Rel::Le, reg.fuel_max_kg, {}};
  LinearRow el_row{"electric-cap", Rel::Le, reg.e_el_used_max_j, {}};
  LinearRow bal_row{"recovery-balance", Rel::Le, reg.e_rec_hers_j, {}};
  for (int k = 0; k < n; ++k) {
    fuel_row.terms.push_back({pb.index(VarField::kFuel, k), 1.0});
    el_row.terms.push_back({pb.index(VarField::kEUsed, k), 1.0});
    bal_row.terms.push_back({pb.index(VarField::kEUsed, k), 1.0});
    bal_row.terms.push_back({pb.index(VarField::kERec, k), -1.0});
  }
  pb.linear.push_back(std::move(fuel_row));
  pb.linear.push_back(std::move(el_row));
  pb.linear.push_back(std::move(bal_row));

  // v(k)^2 <= 2 E_kin(k)/m, and dt_ds(k) * v(k) >= 1
  for (int k = 0; k < n; ++k) {
    SocRow se;
    se.name = "speed-energy[" + std::to_string(k) + "]";
    se.a.terms.push_back({pb.index(VarField::kV, k), 1.0});
    se.b.terms.push_back({pb.index(VarField::kEKin, k), 2.0 / p.m});
    se.c.constant = 1.0;
    pb.soc.push_back(std::move(se));

    SocRow le;
    le.name = "lethargy[" + std::to_string(k) + "]";
    le.a.constant = 1.0;
    le.b.terms.push_back({pb.index(VarField::kDtDs, k), 1.0});
    le.c.terms.push_back({pb.index(VarField::kV, k), 1.0});
    pb.soc.push_back(std::move(le));
  }

  for (int k = 0; k < n; ++k) pb.objective.push_back({pb.index(VarField::kDtDs, k), ds});
  return pb;
}

std::vector<double> map_trajectory(const DiscretizedProblem& pb, const vehicle::LapResult& lap,
                                   const vehicle::VehicleParams& params) {
  const auto nf = lap.points.size();
  if (nf == 0) throw std::invalid_argument("empty trajectory");
  const double dsf = lap.delta_s, dsc = pb.delta_s;
  const double len_f = dsf * static_cast<double>(nf);
  const double len_c = dsc * static_cast<double>(pb.n);
  if (std::abs(len_f - len_c) > 1e-9)
    throw std::invalid_argument("grid mismatch: trajectory covers " + fmt_double(len_f) +
                                " m, problem covers " + fmt_double(len_c) + " m");

  const double m = params.m;
  std::vector<double> e_fine(nf + 1);
  for (std::size_t j = 0; j < nf; ++j) e_fine[j] = 0.5 * m * lap.points[j].v * lap.points[j].v;
  e_fine[nf] = 0.5 * m * lap.v_end * lap.v_end;

  const auto n = static_cast<std::size_t>(pb.n);
  std::vector<double> x(pb.vars.size(), 0.0);
  auto at = [&](VarField f, std::size_t k) -> double& {
    return x[static_cast<std::size_t>(pb.index(f, static_cast<int>(k)))];
  };

  std::vector<double> e_coarse(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    double s = dsc * static_cast<double>(k);
    auto j = std::min(static_cast<std::size_t>(s / dsf), nf - 1);
    double frac = (s - dsf * static_cast<double>(j)) / dsf;
    e_coarse[k] = e_fine[j] + frac * (e_fine[j + 1] - e_fine[j]);
  }

  // distance-weighted cell aggregates; fine amounts spread uniformly over
  // their own cell
  std::vector<double> ff(n, 0.0), fr(n, 0.0), fb(n, 0.0);
  std::vector<std::array<double, 4>> mode_w(n, {0.0, 0.0, 0.0, 0.0});
  for (std::size_t j = 0; j < nf; ++j) {
    double lo = dsf * static_cast<double>(j), hi = lo + dsf;
    const auto& pt = lap.points[j];
    for (auto k = static_cast<std::size_t>(lo / dsc); k < n; ++k) {
      double clo = dsc * static_cast<double>(k), chi = clo + dsc;
      if (clo >= hi) break;
      double w = std::min(hi, chi) - std::max(lo, clo);
      if (w <= 0) continue;
      ff[k] += w * std::max(pt.F_x_f, 0.0) / dsc;
      fr[k] += w * std::max(pt.F_x_r, 0.0) / dsc;
      fb[k] += w * (std::min(pt.F_x_f, 0.0) + std::min(pt.F_x_r, 0.0)) / dsc;
      at(VarField::kFuel, k) += (w / dsf) * pt.fuel_kg;
      at(VarField::kEUsed, k) += (w / dsf) * pt.e_used_j;
      at(VarField::kERec, k) += (w / dsf) * pt.e_rec_j;
      mode_w[k][static_cast<std::size_t>(static_cast<int>(pt.mode)) - 1] += w;
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    at(VarField::kEKin, k) = e_coarse[k];
    double v = std::sqrt(std::max(0.0, 2.0 * e_coarse[k] / m));
    at(VarField::kV, k) = v;
    at(VarField::kDtDs, k) = v > 0 ? 1.0 / v : kLethargyCap;

    auto best = static_cast<std::size_t>(
        std::max_element(mode_w[k].begin(), mode_w[k].end()) - mode_w[k].begin());
    at(static_cast<VarField>(static_cast<int>(VarField::kUBoth) + static_cast<int>(best)), k) =
        1.0;

    // reconcile the force split against the kinetic row: the row's linear
    // resistance is evaluated at the cell-start energy, the simulation's at
    // every fine point, and the difference lands in the thrust variables
    const auto& row = pb.linear[k];
    double c_e = 0.0;
    for (const auto& [idx, coef] : row.terms)
      if (idx == pb.index(VarField::kEKin, static_cast<int>(k))) c_e = (coef + 1.0) / dsc;
    double c_0 = -row.rhs / dsc;
    // the recursion wraps; charge the (tiny) periodic start/end mismatch to
    // the last cell's thrust rather than violating the seam row
    double e_next = k + 1 < n ? e_coarse[k + 1] : e_coarse[0];
    double needed = (e_next - e_coarse[k]) / dsc + c_e * e_coarse[k] + c_0;
    double f_r = fr[k] + (needed - ff[k] - fr[k] - fb[k]);
    double f_b = fb[k];
    if (f_r < 0) {
      f_b += f_r;
      f_r = 0;
    }
    if (f_b > 0) {
      f_r += f_b;
      f_b = 0;
    }
    at(VarField::kFF, k) = ff[k];
    at(VarField::kFR, k) = f_r;
    at(VarField::kFBrk, k) = f_b;
  }
  return x;
}

FeasibilityReport check_assignment(const DiscretizedProblem& pb, const std::vector<double>& x,
                                   double tolerance) {
  if (x.size() != pb.vars.size()) throw std::invalid_argument("assignment size mismatch");
  FeasibilityReport rep;
  rep.tolerance = tolerance;

  auto family = [](const std::string& row_name) {
    auto b = row_name.find('[');
    return b == std::string::npos ? row_name : row_name.substr(0, b);
  };
  auto note = [&](const std::string& fam, double viol) {
    auto [it, fresh] = rep.worst.try_emplace(fam, viol);
    if (!fresh) it->second = std::max(it->second, viol);
  };

  double bound_worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& v = pb.vars[i];
    double scale = std::max(1.0, std::max(std::abs(v.lb), std::abs(v.ub)));
    bound_worst = std::max(bound_worst, (v.lb - x[i]) / scale);
    bound_worst = std::max(bound_worst, (x[i] - v.ub) / scale);
  }
  note("bounds", bound_worst);

  double one_hot = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < pb.n; ++k) {
    double s = 0.0;
    for (int u = 0; u < 4; ++u)
      s += x[static_cast<std::size_t>(
          pb.index(static_cast<VarField>(static_cast<int>(VarField::kUBoth) + u), k))];
    one_hot = std::max(one_hot, std::abs(s - 1.0));
  }
  note("one-hot", one_hot);

  for (const auto& row : pb.linear) {
    double lhs = 0.0;
    for (const auto& [i, c] : row.terms) lhs += c * x[static_cast<std::size_t>(i)];
    double scale = std::max(1.0, std::abs(row.rhs));
    double viol = row.rel == Rel::Eq   ? std::abs(lhs - row.rhs)
                  : row.rel == Rel::Le ? lhs - row.rhs
                                       : row.rhs - lhs;
    note(family(row.name), viol / scale);
  }

  for (const auto& row : pb.soc) {
    double a = row.a.eval(x), b = row.b.eval(x), c = row.c.eval(x);
    double lhs = std::hypot(2.0 * a, b - c);
    double scale = std::max(1.0, std::abs(b + c));
    note(family(row.name), (lhs - (b + c)) / scale);
  }

  rep.feasible = true;
  for (const auto& [fam, viol] : rep.worst) rep.feasible = rep.feasible && viol <= tolerance;
  for (const auto& [i, c] : pb.objective) rep.objective_value += c * x[static_cast<std::size_t>(i)];
  return rep;
}

FeasibilityReport verify(const DiscretizedProblem& pb, const vehicle::LapResult& lap,
                         const vehicle::VehicleParams& params, double tolerance) {
  return check_assignment(pb, map_trajectory(pb, lap, params), tolerance);
}

std::string FeasibilityReport::to_string() const {
  std::string out;
  out += "feasible " + std::string(feasible ? "yes" : "no") + "\n";
  out += "tolerance " + fmt_double(tolerance) + "\n";
  out += "objective " + fmt_double(objective_value) + "\n";
  for (const auto& [fam, viol] : worst) out += fam + " " + fmt_double(viol) + "\n";
  return out;
}

namespace {

std::string expr_text(const LinExpr& e) {
  std::string s = fmt_double(e.constant);
  for (const auto& [i, c] : e.terms) s += " " + std::to_string(i) + ":" + fmt_double(c);
  return s;
}

LinExpr parse_expr(const std::vector<std::string>& tok, std::size_t lo, std::size_t hi,
                   const std::string& ctx) {
  LinExpr e;
  if (lo >= hi) throw std::runtime_error(ctx + ": empty expression");
  e.constant = parse_double(tok[lo], ctx);
  for (std::size_t i = lo + 1; i < hi; ++i) {
    auto colon = tok[i].find(':');
    if (colon == std::string::npos) throw std::runtime_error(ctx + ": bad term " + tok[i]);
    e.terms.push_back({static_cast<int>(parse_long(tok[i].substr(0, colon), ctx)),
                       parse_double(tok[i].substr(colon + 1), ctx)});
  }
  return e;
}

}  // namespace

std::string export_problem(const DiscretizedProblem& pb) {
  if (pb.n == 0 || pb.vars.empty()) throw std::invalid_argument("cannot export empty problem");
  std::string out;
  out += "qcp 1\n";
  out += "name " + pb.name + "\n";
  out += "delta_s " + fmt_double(pb.delta_s) + "\n";
  out += "n " + std::to_string(pb.n) + "\n";
  for (std::size_t i = 0; i < pb.vars.size(); ++i) {
    const auto& v = pb.vars[i];
    out += "var " + std::to_string(i) + " " + v.name + " " + fmt_double(v.lb) + " " +
           fmt_double(v.ub) + " " + (v.integer ? "I" : "C") + "\n";
  }
  for (const auto& [i, c] : pb.objective)
    out += "obj " + std::to_string(i) + ":" + fmt_double(c) + "\n";
  for (const auto& row : pb.linear) {
    out += "lin " + row.name + " " +
           (row.rel == Rel::Eq ? "E" : row.rel == Rel::Le ? "L" : "G") + " " +
           fmt_double(row.rhs);
    for (const auto& [i, c] : row.terms) out += " " + std::to_string(i) + ":" + fmt_double(c);
    out += "\n";
  }
  for (const auto& row : pb.soc)
    out += "soc " + row.name + " | " + expr_text(row.a) + " | " + expr_text(row.b) + " | " +
           expr_text(row.c) + "\n";
  return out;
}

void save_problem(const DiscretizedProblem& pb, const std::string& path) {
  write_text_file(path, export_problem(pb));
}

DiscretizedProblem parse_problem(const std::string& text, const std::string& name) {
  DiscretizedProblem pb;
  pb.n = 0;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string ctx = name + ":" + std::to_string(lineno);
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> tok;
    for (const auto& t : split(line, ' '))
      if (!t.empty()) tok.push_back(t);
    if (tok[0] == "qcp") {
      if (tok.size() != 2 || tok[1] != "1") throw std::runtime_error(ctx + ": unknown version");
      header = true;
    } else if (!header) {
      throw std::runtime_error(ctx + ": missing qcp header");
    } else if (tok[0] == "name" && tok.size() == 2) {
      pb.name = tok[1];
    } else if (tok[0] == "delta_s" && tok.size() == 2) {
      pb.delta_s = parse_double(tok[1], ctx);
    } else if (tok[0] == "n" && tok.size() == 2) {
      pb.n = static_cast<int>(parse_long(tok[1], ctx));
      pb.vars.resize(static_cast<std::size_t>(pb.n) * kVarsPerPoint);
    } else if (tok[0] == "var" && tok.size() == 6) {
      auto i = static_cast<std::size_t>(parse_long(tok[1], ctx));
      if (i >= pb.vars.size()) throw std::runtime_error(ctx + ": variable index out of range");
      pb.vars[i] = {tok[2], parse_double(tok[3], ctx), parse_double(tok[4], ctx), tok[5] == "I"};
    } else if (tok[0] == "obj" && tok.size() == 2) {
      auto colon = tok[1].find(':');
      if (colon == std::string::npos) throw std::runtime_error(ctx + ": bad objective term");
      pb.objective.push_back({static_cast<int>(parse_long(tok[1].substr(0, colon), ctx)),
                              parse_double(tok[1].substr(colon + 1), ctx)});
    } else if (tok[0] == "lin" && tok.size() >= 4) {
      LinearRow row;
      row.name = tok[1];
      if (tok[2] == "E")
        row.rel = Rel::Eq;
      else if (tok[2] == "L")
        row.rel = Rel::Le;
      else if (tok[2] == "G")
        row.rel = Rel::Ge;
      else
        throw std::runtime_error(ctx + ": bad relation " + tok[2]);
      row.rhs = parse_double(tok[3], ctx);
      for (std::size_t i = 4; i < tok.size(); ++i) {
        auto colon = tok[i].find(':');
        if (colon == std::string::npos) throw std::runtime_error(ctx + ": bad term " + tok[i]);
        row.terms.push_back({static_cast<int>(parse_long(tok[i].substr(0, colon), ctx)),
                             parse_double(tok[i].substr(colon + 1), ctx)});
      }
      pb.linear.push_back(std::move(row));
    } else if (tok[0] == "soc" && tok.size() >= 6) {
      SocRow row;
      row.name = tok[1];
      std::vector<std::size_t> bars;
      for (std::size_t i = 2; i < tok.size(); ++i)
        if (tok[i] == "|") bars.push_back(i);
      if (bars.size() != 3) throw std::runtime_error(ctx + ": cone row needs three expressions");
      row.a = parse_expr(tok, bars[0] + 1, bars[1], ctx);
      row.b = parse_expr(tok, bars[1] + 1, bars[2], ctx);
      row.c = parse_expr(tok, bars[2] + 1, tok.size(), ctx);
      pb.soc.push_back(std::move(row));
    } else {
      throw std::runtime_error(ctx + ": unrecognized line");
    }
  }
  if (!header) throw std::runtime_error(name + ": missing qcp header");
  for (const auto& [i, c] : pb.objective)
    if (i < 0 || static_cast<std::size_t>(i) >= pb.vars.size())
      throw std::runtime_error(name + ": objective index out of range");
  return pb;
}

DiscretizedProblem load_problem(const std::string& path) {
  return parse_problem(read_text_file(path), path);
}

}  // namespace lapstrat::miqcp
