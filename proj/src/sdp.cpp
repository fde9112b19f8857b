#include "lapstrat/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "lapstrat/common.hpp"

namespace lapstrat::sdp {

namespace {

double node_value(const DecisionNode& node, double alpha) {
  if (node.children.empty()) return node.branch_cost;
  double sum_p = 0.0, acc = 0.0;
  for (const auto& child : node.children) {
    sum_p += child.branch_prob;
    acc += child.branch_prob * node_value(child, alpha);
  }
  if (std::abs(sum_p - 1.0) > 1e-9)
    throw SdpError("children probabilities at stage " + std::to_string(node.stage) + " sum to " +
                   fmt_double(sum_p));
  return node.branch_cost + alpha * acc;
}

}  // namespace

double backward_pass(const DecisionNode& root, double alpha) { return node_value(root, alpha); }

namespace {

struct Timeline {
  const vehicle::LapResult* lap;

  // arc position on the candidate profile at local time tau
  double pos_at(double tau) const {
    const auto& t = lap->time_at;
    if (tau <= 0) return 0.0;
    if (tau >= lap->lap_time) return lap->delta_s * static_cast<double>(t.size() - 1);
    auto it = std::upper_bound(t.begin(), t.end(), tau);
    auto k = static_cast<std::size_t>(std::distance(t.begin(), it)) - 1;
    double frac = (tau - t[k]) / (t[k + 1] - t[k]);
    return lap->delta_s * (static_cast<double>(k) + frac);
  }

  // unobstructed time at arc position s
  double time_at_s(double s) const {
    const auto& t = lap->time_at;
    double cells = s / lap->delta_s;
    auto k = static_cast<std::size_t>(std::floor(cells));
    if (k + 1 >= t.size()) return lap->lap_time;
    double frac = cells - static_cast<double>(k);
    return t[k] + frac * (t[k + 1] - t[k]);
  }
};

struct TraceView {
  const mc::SimTrace* tr;

  double t_end() const {
    return tr->t0 + static_cast<double>(tr->n_steps() - 1) * tr->dt;
  }

  double pos(std::size_t car, double t) const {
    const auto& p = tr->positions[car];
    double u = (t - tr->t0) / tr->dt;
    if (u <= 0) return p.front();
    auto k = static_cast<std::size_t>(std::floor(u));
    if (k + 1 >= p.size()) return p.back();
    double frac = u - static_cast<double>(k);
    return p[k] * (1.0 - frac) + p[k + 1] * frac;
  }

  double speed(std::size_t car, double t) const {
    return (pos(car, t + tr->dt) - pos(car, t)) / tr->dt;
  }

  // earliest crossing of the wrapped boundary b after from_t, clamped to
  // the trace end
  double next_crossing(std::size_t car, double from_t, double b, double L) const {
    double from = pos(car, from_t);
    double m = std::floor((from - b) / L) + 1.0;
    double target = b + m * L;
    const auto& p = tr->positions[car];
    auto k = static_cast<std::size_t>(std::max(0.0, std::ceil((from_t - tr->t0) / tr->dt)));
    for (; k < p.size(); ++k)
      if (p[k] >= target) {
        if (k == 0) return tr->t0;
        double frac = (target - p[k - 1]) / (p[k] - p[k - 1]);
        return tr->t0 + (static_cast<double>(k - 1) + frac) * tr->dt;
      }
    return t_end();
  }
};

struct Branch {
  int section = 1;
  double delay = 0.0;
  int following = -1;  // trace car index, -1 when clear
  int state = 0;
  std::set<std::size_t> passed;
};

struct Catch {
  std::size_t car;
  double t;
};

struct Builder {
  const vehicle::LapResult* ego;
  ingest::CarClass ego_class;
  TraceView view;
  const stats::OvertakingProbabilityTable* table;
  const vehicle::PreparedTrack* trk;
  const track::TrackGeometry* g;
  TreeOptions opt;
  std::vector<std::string>* warnings;
  std::set<std::tuple<ingest::CarClass, ingest::CarClass, int>> missing;
  std::size_t nodes = 0;
  Timeline ego_tl;
  std::vector<double> t_section;  // entry time per section, plus the lap end

  double L() const { return g->length; }
  double wrap(double p) const { return p - L() * std::floor(p / L()); }
  double wgap(double from, double to) const {
    double d = std::fmod(to - from, L());
    if (d < 0) d += L();
    return d;
  }

  void init() {
    ego_tl.lap = ego;
    t_section.resize(static_cast<std::size_t>(g->n_sections) + 1);
    for (int i = 1; i <= g->n_sections; ++i)
      t_section[static_cast<std::size_t>(i - 1)] = ego_tl.time_at_s(g->section_start(i));
    t_section[static_cast<std::size_t>(g->n_sections)] = ego->lap_time;
  }

  double entry_time(int section, double delay) const {
    return view.tr->t0 + t_section[static_cast<std::size_t>(section - 1)] + delay;
  }
  double exit_time(int section, double delay) const {
    return view.tr->t0 + t_section[static_cast<std::size_t>(section)] + delay;
  }
  double section_end(int section) const {
    return section == g->n_sections ? L() : g->section_start(section + 1);
  }

  double probability(std::size_t car, int section) {
    auto cls = view.tr->car_classes[car];
    auto p = table->probability(ego_class, cls, section);
    if (!p && missing.emplace(ego_class, cls, section).second)
      warnings->push_back("no overtaking data against " + ingest::to_string(cls) + " in section " +
                          std::to_string(section) + "; treating as zero");
    return p.value_or(0.0);
  }

  std::optional<Catch> find_catch(const Branch& br) {
    double t_in = entry_time(br.section, br.delay);
    double t_out = exit_time(br.section, br.delay);
    for (double t = t_in; t < t_out; t += view.tr->dt) {
      double tau = t - view.tr->t0 - br.delay;
      double ego_s = wrap(ego_tl.pos_at(tau));
      double prev_s = wrap(ego_tl.pos_at(tau - view.tr->dt));
      std::optional<Catch> best;
      double best_gap = opt.proximity_m;
      for (std::size_t c = 0; c < view.tr->positions.size(); ++c) {
        if (br.passed.count(c)) continue;
        double gap = wgap(ego_s, wrap(view.pos(c, t)));
        if (gap > best_gap) continue;
        double gap_prev = tau < view.tr->dt
                              ? std::numeric_limits<double>::infinity()
                              : wgap(prev_s, wrap(view.pos(c, t - view.tr->dt)));
        if (gap >= gap_prev) continue;  // only count cars being caught
        best = Catch{c, t};
        best_gap = gap;
      }
      if (best) return best;
    }
    return std::nullopt;
  }

  // time lost traversing `section` pinned behind `car`, from the branch's
  // conditional entry; non-positive means the car pulls away instead
  double pinned_delay(const Branch& br, std::size_t car, double from_t) {
    double t_free_exit = exit_time(br.section, br.delay);
    double t_exit = view.next_crossing(car, from_t, section_end(br.section), L());
    return t_exit - t_free_exit;
  }

  DecisionNode make_node(int stage, int state, double prob, double cost) {
    if (++nodes > opt.max_nodes) throw SdpError("decision tree exceeded the node cap");
    DecisionNode node;
    node.stage = stage;
    node.state = state;
    node.branch_prob = prob;
    node.branch_cost = cost;
    return node;
  }

  void grow(DecisionNode& node, Branch br) {
    if (br.section > g->n_sections) return;

    if (br.following >= 0) {
      auto car = static_cast<std::size_t>(br.following);
      double t_now = entry_time(br.section, br.delay);
      double inc = pinned_delay(br, car, t_now);
      if (inc <= 0) {
        br.following = -1;  // the car ahead pulls away at this boundary
      } else {
        double p = probability(car, br.section);
        if (p > 0) {
          double v_red = std::max(0.0, view.speed(car, t_now));
          auto k0 = static_cast<std::size_t>(std::llround(g->section_start(br.section) / ego->delta_s));
          double rec = vehicle::recovery_time_loss(*trk, *ego, std::min(k0, ego->points.size() - 1), v_red);
          Branch win = br;
          win.section += 1;
          win.delay += rec;
          win.following = -1;
          win.state += 1;
          win.passed.insert(car);
          auto& child = node.children.emplace_back(make_node(br.section, win.state, p, rec));
          grow(child, std::move(win));
        }
        if (p < 1) {
          Branch stay = br;
          stay.section += 1;
          stay.delay += inc;
          auto& child = node.children.emplace_back(make_node(br.section, stay.state, 1.0 - p, inc));
          grow(child, std::move(stay));
        }
        return;
      }
    }

    auto caught = br.state < 0 ? find_catch(br) : std::nullopt;
    if (!caught) {
      Branch next = br;
      next.section += 1;
      auto& child = node.children.emplace_back(make_node(br.section + 1, next.state, 1.0, 0.0));
      grow(child, std::move(next));
      return;
    }

    double p = probability(caught->car, br.section);
    if (p > 0) {
      Branch win = br;
      win.section += 1;
      win.state += 1;
      win.passed.insert(caught->car);
      auto& child = node.children.emplace_back(make_node(br.section + 1, win.state, p, 0.0));
      grow(child, std::move(win));
    }
    if (p < 1) {
      Branch stay = br;
      double inc = std::max(0.0, pinned_delay(br, caught->car, caught->t));
      stay.section += 1;
      stay.delay += inc;
      stay.following = static_cast<int>(caught->car);
      auto& child = node.children.emplace_back(make_node(br.section + 1, stay.state, 1.0 - p, inc));
      grow(child, std::move(stay));
    }
  }

  int count_potential_passes() {
    Branch br;
    int count = 0;
    for (br.section = 1; br.section <= g->n_sections; ++br.section) {
      br.state = -1;  // keep scanning
      if (auto caught = find_catch(br)) {
        ++count;
        br.passed.insert(caught->car);
      }
    }
    return count;
  }
};

}  // namespace

BuildResult build_tree(const vehicle::LapResult& ego, ingest::CarClass ego_class,
                       const mc::SimTrace& trace, const stats::OvertakingProbabilityTable& table,
                       const vehicle::PreparedTrack& trk, const TreeOptions& opt) {
  if (ego.points.empty() || ego.time_at.size() != ego.points.size() + 1)
    throw SdpError("candidate lap has no usable timeline");
  if (trace.n_steps() < 2) throw SdpError("trace too short");

  BuildResult out;
  Builder b;
  b.ego = &ego;
  b.ego_class = ego_class;
  b.view.tr = &trace;
  b.table = &table;
  b.trk = &trk;
  b.g = &trk.geometry;
  b.opt = opt;
  b.warnings = &out.warnings;
  b.init();

  int s0 = -b.count_potential_passes();
  out.root = b.make_node(1, s0, 1.0, 0.0);
  Branch br;
  br.state = s0;
  b.grow(out.root, std::move(br));
  return out;
}

EvaluationResult evaluate_strategies(const std::vector<ga::EnergyStrategy>& strategies,
                                     const std::vector<mc::SimTrace>& traces,
                                     const stats::OvertakingProbabilityTable& table,
                                     const vehicle::PreparedTrack& trk, ingest::CarClass ego_class,
                                     const TreeOptions& opt, int jobs) {
  if (strategies.empty()) throw SdpError("no strategies to evaluate");
  if (traces.empty()) throw SdpError("no traces to evaluate against");

  const std::size_t ns = strategies.size(), nt = traces.size();
  std::vector<double> f0(ns * nt, 0.0);
  std::vector<std::string> errors(ns * nt);
  std::vector<std::vector<std::string>> notes(ns * nt);

  parallel_for(ns * nt, jobs, [&](std::size_t idx) {
    auto s = idx / nt, t = idx % nt;
    try {
      auto built = build_tree(strategies[s].lap, ego_class, traces[t], table, trk, opt);
      f0[idx] = backward_pass(built.root, opt.alpha);
      notes[idx] = std::move(built.warnings);
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  });

  EvaluationResult out;
  std::set<std::string> seen;
  for (const auto& per : notes)
    for (const auto& w : per)
      if (seen.insert(w).second) out.warnings.push_back(w);

  out.evaluations.resize(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    auto& ev = out.evaluations[s];
    ev.name = strategies[s].name;
    ev.lap_time = strategies[s].lap_time;
    ev.per_trace_f0.assign(nt, std::numeric_limits<double>::quiet_NaN());
    double acc = 0.0;
    std::size_t ok = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      auto idx = s * nt + t;
      if (!errors[idx].empty()) continue;
      ev.per_trace_f0[t] = f0[idx];
      acc += f0[idx];
      ++ok;
    }
    std::string first_error;
    for (std::size_t t = 0; t < nt && first_error.empty(); ++t) first_error = errors[s * nt + t];
    if (ok == 0) {
      ev.mean_f0 = std::numeric_limits<double>::infinity();
      out.warnings.push_back("strategy '" + ev.name + "' failed on every trace: " + first_error);
    } else {
      ev.mean_f0 = acc / static_cast<double>(ok);
      if (ok < nt)
        out.warnings.push_back("strategy '" + ev.name + "' scored on " + std::to_string(ok) +
                               " of " + std::to_string(nt) + " traces: " + first_error);
    }
  }

  std::vector<double> wins(ns, 0.0);
  for (std::size_t t = 0; t < nt; ++t) {
    std::size_t best = 0;
    bool any = false;
    for (std::size_t s = 0; s < ns; ++s) {
      double v = out.evaluations[s].per_trace_f0[t];
      if (std::isnan(v)) continue;
      if (!any) {
        best = s;
        any = true;
        continue;
      }
      double b = out.evaluations[best].per_trace_f0[t];
      if (v < b || (v == b && strategies[s].lap_time < strategies[best].lap_time)) best = s;
    }
    if (any) wins[best] += 1.0;
  }
  for (std::size_t s = 0; s < ns; ++s)
    out.evaluations[s].win_rate = wins[s] / static_cast<double>(nt);

  out.best_index = 0;
  for (std::size_t s = 1; s < ns; ++s) {
    const auto& a = out.evaluations[s];
    const auto& b2 = out.evaluations[out.best_index];
    if (a.mean_f0 < b2.mean_f0 || (a.mean_f0 == b2.mean_f0 && a.lap_time < b2.lap_time))
      out.best_index = s;
  }
  return out;
}

std::string evaluation_table(const EvaluationResult& result) {
  std::ostringstream out;
  out << "strategy,lap_time_s,f0_s,win_rate\n";
  for (const auto& ev : result.evaluations)
    out << ev.name << "," << fmt_fixed(ev.lap_time, 3) << "," << fmt_fixed(ev.mean_f0, 4) << ","
        << fmt_fixed(ev.win_rate, 3) << "\n";
  return out.str();
}

namespace {

void dump_node(const DecisionNode& node, int depth, std::ostringstream& out) {
  out << std::string(static_cast<std::size_t>(depth) * 2, ' ') << "stage " << node.stage
      << " state " << node.state << " p=" << fmt_fixed(node.branch_prob, 3)
      << " cost=" << fmt_fixed(node.branch_cost, 4) << "\n";
  for (const auto& child : node.children) dump_node(child, depth + 1, out);
}

double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  double idx = q * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(idx));
  double frac = idx - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

}  // namespace

std::string tree_to_string(const DecisionNode& root) {
  std::ostringstream out;
  dump_node(root, 0, out);
  return out.str();
}

StintReport evaluate_stint(const std::vector<ga::EnergyStrategy>& strategies,
                           const mc::RaceState& grid,
                           const std::vector<stats::FreeSectorDistribution>& dists,
                           const stats::OvertakingProbabilityTable& table,
                           const stats::ReferenceProfile& ref, const vehicle::PreparedTrack& trk,
                           ingest::CarClass ego_class, const StintConfig& cfg) {
  if (cfg.n_laps < 1) throw SdpError("stint needs at least one lap");
  if (cfg.n_runs < 1) throw SdpError("stint needs at least one run");
  if (cfg.baseline_index >= strategies.size()) throw SdpError("baseline index out of range");

  StintReport report;
  std::set<std::string> seen;

  for (int run = 0; run < cfg.n_runs; ++run) {
    std::uint64_t run_seed = cfg.seed + 1000003ULL * static_cast<std::uint64_t>(run);
    mc::RaceState state = grid;
    double cumulative = 0.0;

    for (int lap = 1; lap <= cfg.n_laps; ++lap) {
      std::uint64_t lap_seed = run_seed + 7919ULL * static_cast<std::uint64_t>(lap);
      auto traces = mc::run_batch(state, dists, table, ref, trk.geometry, cfg.n_sims, lap_seed,
                                  cfg.mc_opt, cfg.jobs);
      auto eval = evaluate_strategies(strategies, traces, table, trk, ego_class, cfg.tree_opt,
                                      cfg.jobs);
      for (const auto& w : eval.warnings)
        if (seen.insert(w).second) report.warnings.push_back(w);

      const auto& chosen = eval.evaluations[eval.best_index];
      const auto& base = eval.evaluations[cfg.baseline_index];
      double chosen_total = chosen.lap_time + chosen.mean_f0;
      double gain = (base.lap_time + base.mean_f0) - chosen_total;
      cumulative += gain;

      if (run == 0) {
        StintLap entry;
        entry.lap = lap;
        entry.chosen = chosen.name;
        entry.lap_time = chosen.lap_time;
        entry.expected_f0 = chosen.mean_f0;
        entry.gain_vs_baseline = gain;
        entry.cumulative_gain = cumulative;
        report.laps.push_back(entry);
      }

      double t_next = state.t + chosen_total;
      for (auto& car : state.cars) {
        double acc = 0.0;
        for (const auto& tr : traces) {
          TraceView view{&tr};
          acc += view.pos(tr.car_index(car.car_number), t_next);
        }
        car.position_m = acc / static_cast<double>(traces.size());
      }
      std::sort(state.cars.begin(), state.cars.end(),
                [](const auto& a, const auto& b) { return a.position_m < b.position_m; });
      for (std::size_t i = 1; i < state.cars.size(); ++i)
        if (state.cars[i].position_m <= state.cars[i - 1].position_m)
          state.cars[i].position_m = state.cars[i - 1].position_m + 0.01;
      state.t = t_next;
    }
    report.run_gains.push_back(cumulative);
  }

  report.total_gain = report.run_gains.front();
  double acc = 0.0;
  for (double v : report.run_gains) acc += v;
  report.mean_gain = acc / static_cast<double>(report.run_gains.size());
  report.ci_low = percentile(report.run_gains, 0.05);
  report.ci_high = percentile(report.run_gains, 0.95);
  return report;
}

std::string stint_csv(const StintReport& report) {
  std::ostringstream out;
  out << "lap,chosen,lap_time_s,f0_s,gain_s,cumulative_gain_s\n";
  for (const auto& lap : report.laps)
    out << lap.lap << "," << lap.chosen << "," << fmt_fixed(lap.lap_time, 3) << ","
        << fmt_fixed(lap.expected_f0, 4) << "," << fmt_fixed(lap.gain_vs_baseline, 4) << ","
        << fmt_fixed(lap.cumulative_gain, 4) << "\n";
  out << "total," << fmt_fixed(report.total_gain, 4) << ",mean," << fmt_fixed(report.mean_gain, 4)
      << ",ci90," << fmt_fixed(report.ci_low, 4) << ":" << fmt_fixed(report.ci_high, 4) << "\n";
  return out.str();
}

}  // namespace lapstrat::sdp
