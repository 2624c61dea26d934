#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "nanotile/cost.hpp"
#include "nanotile/csv.hpp"
#include "nanotile/lp.hpp"

namespace nanotile {

Targets load_targets(const std::filesystem::path& dir) {
  Targets t;
  const auto profile = read_csv(dir / "layer_profile.csv");
  for (std::size_t i = 0; i < profile.rows.size(); ++i) {
    LayerTarget l;
    l.row = profile.cell(i, "row");
    l.power_mw = profile.number(i, "power_mw");
    l.exec_ms = profile.number(i, "exec_ms");
    if (!profile.cell(i, "l3_ms").empty()) l.l3_ms = profile.number(i, "l3_ms");
    t.layers.push_back(std::move(l));
  }

  const auto breakdown = read_csv(dir / "cycle_breakdown.csv");
  std::map<std::string, double*> slots{{"udma_l3_l2", &t.l3_cycles},
                                       {"dma_l2_l1", &t.dma_cycles},
                                       {"computation", &t.compute_cycles},
                                       {"total", &t.total_cycles}};
  for (std::size_t i = 0; i < breakdown.rows.size(); ++i) {
    auto it = slots.find(breakdown.cell(i, "component"));
    if (it == slots.end()) throw CalibrationError("unknown cycle component '" + breakdown.cell(i, "component") + "'");
    *it->second = breakdown.number(i, "cycles");
  }
  for (const auto& [name, v] : slots)
    if (*v <= 0.0) throw CalibrationError("missing cycle component '" + name + "'");

  const auto points = read_csv(dir / "operating_points.csv");
  for (std::size_t i = 0; i < points.rows.size(); ++i)
    t.power.push_back({{points.number(i, "vdd"), points.number(i, "f_fc_mhz"), points.number(i, "f_cl_mhz")},
                       points.number(i, "power_mw"),
                       points.number(i, "fps")});
  if (t.power.size() < 2) throw CalibrationError("need two measured operating points");
  return t;
}

std::vector<std::vector<std::string>> profile_rows(const NetworkGraph& graph, const Targets& targets) {
  std::vector<std::vector<std::string>> rows;
  std::string current;
  for (const auto& l : graph.layers()) {
    if (rows.empty() || l.row != current) {
      rows.emplace_back();
      current = l.row;
      if (rows.size() > targets.layers.size() || targets.layers[rows.size() - 1].row != l.row)
        throw CalibrationError("profile row " + std::to_string(rows.size()) + " does not match layer '" + l.id +
                               "' (" + l.row + ")");
    }
    rows.back().push_back(l.id);
  }
  if (rows.size() != targets.layers.size())
    throw CalibrationError("profile has " + std::to_string(targets.layers.size()) + " rows, graph covers " +
                           std::to_string(rows.size()));
  return rows;
}

namespace {

// LP columns: the four compute coefficients, then the worst per-row error
// and the error on the computation total.
enum Var { InvKxk, InvPointwise, Elem, Chan, RowError, TotalError, kVars };

std::map<std::string, LayerFeatures> features_by_layer(const TileSchedule& s, int cores) {
  std::map<std::string, LayerFeatures> out;
  for (std::size_t i = 0; i < s.nodes.size(); ++i)
    for (auto& [id, f] : node_features(s.nodes[i], s.plans[i], cores)) out[id] = f;
  return out;
}

std::vector<double> coefficients(const LayerFeatures& f) { return {f.kxk, f.pointwise, f.elements, f.channels}; }

bool same_plans(const TileSchedule& a, const TileSchedule& b) {
  if (a.plans.size() != b.plans.size()) return false;
  for (std::size_t i = 0; i < a.plans.size(); ++i) {
    const auto &p = a.plans[i], &q = b.plans[i];
    if (p.scheme != q.scheme || p.h_t != q.h_t || p.kin_t != q.kin_t || p.kout_t != q.kout_t) return false;
  }
  return true;
}

struct Fit {
  CalibParams calib;
  double error = 0.0;
};

Fit fit(const NetworkGraph& graph, const Targets& targets, const TileSchedule& schedule,
        const std::vector<std::vector<std::string>>& rows, CalibParams calib) {
  const auto features = features_by_layer(schedule, calib.cores);
  const auto sizes = l2_sizes(graph);

  // Both bandwidths follow directly from the byte totals.
  double weight_bytes = 0.0, exposed_bytes = 0.0;
  for (const auto& l : graph.layers())
    if (l.has_weights()) weight_bytes += static_cast<double>(sizes.at(weight_buffer(l.id)));
  for (const auto& [_, f] : features) exposed_bytes += f.dma_bytes;
  calib.l3_bytes_per_cycle = weight_bytes / targets.l3_cycles;
  calib.dma_bytes_per_cycle = exposed_bytes / targets.dma_cycles;

  const double f_cl = targets.profile_point.f_cl_mhz * 1e6;
  LinearProgram lp;
  lp.c.assign(kVars, 0.0);
  // |(a.u + fixed) / target - 1| <= x[error]
  auto add_band = [&](const std::vector<double>& a, double fixed, double target, Var error) {
    LinearProgram::Row lo, hi;
    lo.a.assign(kVars, 0.0);
    hi.a.assign(kVars, 0.0);
    for (int v = 0; v < RowError; ++v) lo.a[v] = hi.a[v] = a[v] / target;
    hi.a[error] = -1.0;
    lo.a[error] = 1.0;
    hi.rel = LinearProgram::Rel::Le;
    lo.rel = LinearProgram::Rel::Ge;
    hi.b = lo.b = 1.0 - fixed / target;
    lp.rows.push_back(hi);
    lp.rows.push_back(lo);
  };
  auto bound = [&](int var, LinearProgram::Rel rel, double v) {
    LinearProgram::Row row;
    row.a.assign(kVars, 0.0);
    row.a[var] = 1.0;
    row.rel = rel;
    row.b = v;
    lp.rows.push_back(row);
  };

  std::vector<double> total_a(RowError, 0.0);
  double total_fixed = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> a(RowError, 0.0);
    double fixed = 0.0;
    bool cluster = false;
    for (const auto& id : rows[r]) {
      auto it = features.find(id);
      if (it == features.end()) {
        // Fabric controller layer: fixed cost, outside the cluster fit.
        total_fixed += fabric_layer_cycles(graph.layer(id), calib).compute;
        continue;
      }
      cluster = true;
      const auto c = coefficients(it->second);
      for (int v = 0; v < RowError; ++v) a[v] += c[v];
      fixed += it->second.fixed * calib.tile_overhead + it->second.dma_bytes / calib.dma_bytes_per_cycle;
      total_fixed += it->second.fixed * calib.tile_overhead;
    }
    for (int v = 0; v < RowError; ++v) total_a[v] += a[v];
    if (cluster) add_band(a, fixed, targets.layers[r].exec_ms * 1e-3 * f_cl, RowError);
  }
  add_band(total_a, total_fixed, targets.compute_cycles, TotalError);
  bound(InvKxk, LinearProgram::Rel::Ge, 1.0 / calib.eta_peak);
  bound(InvPointwise, LinearProgram::Rel::Ge, 1.0);

  // Minimise the worst row error first, then the computation total within it.
  lp.c[RowError] = 1.0;
  auto sol = solve_lp(lp);
  if (sol.status != LpSolution::Status::Optimal) throw CalibrationError("efficiency fit has no solution");
  const double worst = sol.x[RowError];
  bound(RowError, LinearProgram::Rel::Le, worst * (1.0 + 1e-9));
  lp.c[RowError] = 0.0;
  lp.c[TotalError] = 1.0;
  sol = solve_lp(lp);
  if (sol.status != LpSolution::Status::Optimal) throw CalibrationError("efficiency fit has no solution");

  calib.eta_kxk = 1.0 / sol.x[InvKxk];
  calib.eta_1x1 = 1.0 / sol.x[InvPointwise];
  calib.elem_cycles = sol.x[Elem];
  calib.channel_cycles = sol.x[Chan];
  return {calib, worst};
}

// Dynamic coefficient that reproduces the first measured point exactly for a
// given converter loss.
double k_for(const PowerParams& p, const PowerTarget& t, double duty) {
  const double r = p.dcdc_loss;
  const double core = r > 0.0 ? (std::sqrt(1.0 + 4.0 * r * t.power_mw) - 1.0) / (2.0 * r) : t.power_mw;
  const double v = t.op.vdd;
  return (core - p.static_mw * v * v * v) / (v * v * (t.op.f_cl_mhz * duty + p.fc_activity * t.op.f_fc_mhz));
}

PowerParams fit_power(const NetworkGraph& graph, const Targets& targets, const TileSchedule& schedule,
                      const CalibParams& calib) {
  const auto& lo_pt = targets.power.front();
  const auto& hi_pt = targets.power.back();
  PowerParams p;
  const double duty_lo = frame_report(graph, schedule, lo_pt.op, calib, p).cluster_duty;
  const double duty_hi = frame_report(graph, schedule, hi_pt.op, calib, p).cluster_duty;

  auto miss = [&](double r) {
    p.dcdc_loss = r;
    p.k_dyn = k_for(p, lo_pt, duty_lo);
    return p.soc_mw(hi_pt.op, duty_hi) - hi_pt.power_mw;
  };
  double a = 0.0, b = 1.0;
  double fa = miss(a), fb = miss(b);
  if (fa * fb > 0.0) throw CalibrationError("power model cannot reach both operating points");
  for (int i = 0; i < 200 && b - a > 1e-12; ++i) {
    const double m = 0.5 * (a + b);
    const double fm = miss(m);
    if ((fm < 0.0) == (fa < 0.0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
    }
  }
  miss(0.5 * (a + b));
  if (p.k_dyn <= 0.0) throw CalibrationError("power fit gave a non-positive dynamic coefficient");
  return p;
}

}  // namespace

Calibration calibrate(const NetworkGraph& graph, const Targets& targets, int64_t l1_budget) {
  const auto rows = profile_rows(graph, targets);
  Calibration cal;
  cal.schedule = plan_network(graph, l1_budget, plan_cost(cal.calib));

  constexpr int kMaxIterations = 5;
  for (cal.iterations = 1;; ++cal.iterations) {
    const auto f = fit(graph, targets, cal.schedule, rows, cal.calib);
    cal.calib = f.calib;
    cal.minimax_error = f.error;
    auto next = plan_network(graph, l1_budget, plan_cost(cal.calib));
    const bool stable = same_plans(next, cal.schedule);
    cal.schedule = std::move(next);
    if (stable) break;
    if (cal.iterations == kMaxIterations) throw CalibrationError("tiling plans did not settle during calibration");
  }
  cal.power = fit_power(graph, targets, cal.schedule, cal.calib);

  const auto& op = targets.profile_point;
  const auto report = frame_report(graph, cal.schedule, op, cal.calib, cal.power);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double ms = 0.0;
    for (const auto& id : rows[r])
      for (const auto& c : report.layers)
        if (c.layer == id) ms += c.exec_seconds(op) * 1e3;
    cal.layer_rows.push_back({targets.layers[r].row, targets.layers[r].exec_ms, ms});
  }
  cal.breakdown_rows = {{"udma_l3_l2", targets.l3_cycles, report.cycles.l3},
                        {"dma_l2_l1", targets.dma_cycles, report.cycles.dma},
                        {"computation", targets.compute_cycles, report.cycles.compute},
                        {"total", targets.total_cycles, report.cycles.total()}};
  for (const auto& t : targets.power) {
    std::ostringstream label;
    label << t.op.vdd << " V " << t.op.f_fc_mhz << "/" << t.op.f_cl_mhz << " MHz";
    const auto at = frame_report(graph, cal.schedule, t.op, cal.calib, cal.power);
    cal.power_rows.push_back({label.str(), t.power_mw, at.power_mw});
  }
  return cal;
}

void write_calibration(const Calibration& cal, std::ostream& os) {
  const auto& c = cal.calib;
  os << std::setprecision(4);
  os << "eta_kxk " << c.eta_kxk << ", eta_1x1 " << c.eta_1x1 << ", elem " << c.elem_cycles << " cyc, channel "
     << c.channel_cycles << " cyc\n";
  os << "L3 " << c.l3_bytes_per_cycle << " B/cycle, DMA " << c.dma_bytes_per_cycle << " B/cycle\n";
  os << "power: k_dyn " << cal.power.k_dyn << " mW/(V^2 MHz), converter loss " << cal.power.dcdc_loss << " /mW\n";
  os << "iterations " << cal.iterations << ", worst row error " << std::fixed << std::setprecision(1)
     << cal.minimax_error * 100 << " %\n";
  os.unsetf(std::ios::floatfield);
  auto table = [&](const char* title, const std::vector<RowResidual>& rows) {
    os << title << '\n';
    for (const auto& r : rows)
      os << "  " << std::left << std::setw(16) << r.label << std::right << std::fixed << std::setprecision(2)
         << std::setw(14) << r.target << std::setw(14) << r.model << std::setprecision(1) << std::setw(8)
         << r.rel_error() * 100 << " %\n";
    os.unsetf(std::ios::floatfield);
  };
  table("exec time per row (ms):", cal.layer_rows);
  table("cycles:", cal.breakdown_rows);
  table("power (mW):", cal.power_rows);
}

}  // namespace nanotile
