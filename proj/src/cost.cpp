#include "nanotile/cost.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

namespace nanotile {

bool CalibParams::calibrated() const {
  auto in_unit = [](double eta) { return eta > 0.0 && eta <= 1.0; };
  return in_unit(eta_kxk) && in_unit(eta_1x1) && elem_cycles >= 0.0 && channel_cycles >= 0.0 &&
         l3_bytes_per_cycle > 0.0 && dma_bytes_per_cycle > 0.0;
}

double PowerParams::soc_mw(const OperatingPoint& op, double cluster_duty) const {
  const double v = op.vdd;
  const double p = static_mw * v * v * v + k_dyn * v * v * (op.f_cl_mhz * cluster_duty + fc_activity * op.f_fc_mhz);
  return p + dcdc_loss * p * p;
}

double LayerCost::exec_seconds(const OperatingPoint& op) const {
  if (fabric) return compute / (op.f_fc_mhz * 1e6);
  return (compute + dma_exposed) / (op.f_cl_mhz * 1e6);
}

double LayerCost::l3_seconds(const OperatingPoint& op) const { return l3 / (op.f_fc_mhz * 1e6); }

namespace {

struct Extent {
  int count;
  int size;
};

// Tile sizes along one dimension: full tiles plus an optional remainder.
std::vector<Extent> extents(int total, int tile) {
  const int n = (total + tile - 1) / tile;
  const int last = total - (n - 1) * tile;
  if (last == tile) return {{n, tile}};
  std::vector<Extent> out;
  if (n > 1) out.push_back({n - 1, tile});
  out.push_back({1, last});
  return out;
}

int64_t elems(Shape3 s) { return static_cast<int64_t>(s.elems()); }

}  // namespace

std::vector<std::pair<std::string, LayerFeatures>> node_features(const NodeKernel& n, const TilePlan& p, int cores) {
  std::vector<std::pair<std::string, LayerFeatures>> out;
  const auto& b = n.body;
  const bool conv = n.kernel == BasicKernel::Conv;

  LayerFeatures body;
  body.fixed = p.tiles();
  if (conv) {
    const double taps = static_cast<double>(b.kh) * b.kw;
    double sum = 0.0;
    for (auto h : extents(n.H, p.h_t))
      for (auto ko : extents(n.K_out, p.kout_t))
        for (auto ki : extents(n.K_in, p.kin_t)) {
          const double eff = worker_efficiency(p.scheme == Scheme::Spatial ? n.W : ko.size, cores);
          const double macs = taps * ko.size * ki.size * h.size * n.W;
          sum += static_cast<double>(h.count) * ko.count * ki.count * macs / (cores * eff);
        }
    (taps == 1.0 ? body.pointwise : body.kxk) = sum;
    if (b.fused_relu) {
      body.elements = static_cast<double>(elems(b.output_shape()));
      body.channels = b.out_channels;
    }
  } else {
    // Add (relu fused into the same pass) or a standalone relu.
    body.elements = static_cast<double>(elems(b.output_shape()));
    body.channels = b.out_channels;
  }

  // Exposed traffic: the first tile's operands and the last tile's result.
  const Shape3 in = b.input_shape();
  const Range first_rows = stripe_rows(n, {0, std::min(p.h_t, n.H)});
  const int valid = std::min(first_rows.end, in.h) - std::max(first_rows.begin, 0);
  const int first_kin = std::min(conv ? p.kin_t : p.kout_t, n.K_in);
  const int first_kout = std::min(p.kout_t, n.K_out);
  double bytes = 2.0 * first_kin * valid * in.w * (n.kernel == BasicKernel::Add ? 2 : 1);
  if (conv) bytes += 2.0 * first_kout * first_kin * b.kh * b.kw + 2.0 * first_kout;
  const Range last_rows = stored_rows(n, {(p.n_h - 1) * p.h_t, n.H});
  const int last_kout = n.K_out - (p.n_kout - 1) * p.kout_t;
  bytes += 2.0 * last_kout * last_rows.size() * n.output_shape.w;
  body.dma_bytes = bytes;
  if (!p.steps.empty()) body.dma_total_bytes = static_cast<double>(transfer_totals(p).total());
  out.emplace_back(b.id, body);

  for (std::size_t i = 1; i < n.layers.size(); ++i) {
    LayerFeatures f;
    // Folded pool/relu passes run over the stored (post-pool) tile.
    const Shape3 s = n.output_shape;
    f.elements = static_cast<double>(elems(s));
    f.channels = s.k;
    out.emplace_back(n.layers[i], f);
  }
  return out;
}

double compute_cycles(const LayerFeatures& f, const CalibParams& c) {
  return f.kxk / c.eta_kxk + f.pointwise / c.eta_1x1 + f.elements * c.elem_cycles + f.channels * c.channel_cycles +
         f.fixed * c.tile_overhead;
}

std::vector<LayerCost> layer_cycles(const NodeKernel& n, const TilePlan& plan, const CalibParams& calib) {
  if (!calib.calibrated()) throw std::invalid_argument("uncalibrated cost parameters");
  std::vector<LayerCost> out;
  for (const auto& [id, f] : node_features(n, plan, calib.cores)) {
    LayerCost c;
    c.layer = id;
    c.node = n.name;
    c.compute = compute_cycles(f, calib);
    c.dma_exposed = f.dma_bytes / calib.dma_bytes_per_cycle;
    c.dma_total = f.dma_total_bytes / calib.dma_bytes_per_cycle;
    if (id == n.body.id && n.kernel == BasicKernel::Conv)
      c.macs = n.body.fan_in() * n.body.out_channels * n.H * n.W;
    out.push_back(std::move(c));
  }
  return out;
}

LayerCost fabric_layer_cycles(const LayerSpec& layer, const CalibParams& calib) {
  LayerCost c;
  c.layer = layer.id;
  c.node = layer.id;
  c.row = layer.row;
  c.fabric = true;
  c.macs = int64_t{layer.in_channels} * layer.out_channels;
  c.compute = static_cast<double>(c.macs) / calib.fc_macs_per_cycle;
  return c;
}

PlanCost plan_cost(const CalibParams& calib) {
  return [calib](const NodeKernel& n, const TilePlan& p) {
    double total = 0.0;
    for (const auto& [_, f] : node_features(n, p, calib.cores))
      total += compute_cycles(f, calib) + f.dma_bytes / calib.dma_bytes_per_cycle;
    return total;
  };
}

CostReport frame_report(const NetworkGraph& graph, const TileSchedule& schedule, const OperatingPoint& op,
                        const CalibParams& calib, const PowerParams& power) {
  CostReport r;
  r.op = op;
  const auto sizes = l2_sizes(graph);
  const double f_cl = op.f_cl_mhz * 1e6, f_fc = op.f_fc_mhz * 1e6;
  const double l3_bpc = std::min(calib.l3_bytes_per_cycle, calib.l3_max_bytes_per_s / f_fc);
  auto add_l3 = [&](LayerCost& c) {
    const auto& l = graph.layer(c.layer);
    c.row = l.row;
    if (!l.has_weights()) return;
    c.l3 = static_cast<double>(sizes.at(weight_buffer(l.id))) / l3_bpc;
    c.l3_exposed = c.l3 * (1.0 - calib.l3_overlap);
  };

  for (std::size_t i = 0; i < schedule.nodes.size(); ++i)
    for (auto& c : layer_cycles(schedule.nodes[i], schedule.plans[i], calib)) {
      add_l3(c);
      r.layers.push_back(std::move(c));
    }
  for (const auto& id : schedule.fabric) {
    auto c = fabric_layer_cycles(graph.layer(id), calib);
    add_l3(c);
    r.layers.push_back(std::move(c));
  }
  // Report in graph order.
  std::stable_sort(r.layers.begin(), r.layers.end(), [&](const LayerCost& a, const LayerCost& b) {
    return graph.layer_index(a.layer) < graph.layer_index(b.layer);
  });

  double cluster = 0.0, fabric = 0.0;
  for (const auto& c : r.layers) {
    r.cycles.l3 += c.l3_exposed;
    r.cycles.compute += c.compute;
    r.macs += c.macs;
    if (c.fabric) {
      fabric += c.compute;
    } else {
      r.cycles.dma += c.dma_exposed;
      cluster += c.compute + c.dma_exposed;
    }
  }
  r.cluster_seconds = cluster / f_cl;
  r.fabric_seconds = (fabric + r.cycles.l3) / f_fc;
  r.frame_seconds = r.cluster_seconds + r.fabric_seconds;
  r.fps = 1.0 / r.frame_seconds;
  r.cluster_duty = r.cluster_seconds / r.frame_seconds;
  r.power_mw = power.soc_mw(op, r.cluster_duty);
  r.board_power_mw = r.power_mw + power.camera_mw + power.dram_mw;
  r.energy_mj = r.power_mw * r.frame_seconds;
  r.l3_time_share = r.cycles.l3 / f_fc / r.frame_seconds;
  return r;
}

std::vector<OperatingPoint> default_grid() {
  std::vector<OperatingPoint> grid;
  for (double v : {1.0, 1.2}) {
    const double f_max = v < 1.1 ? 175.0 : 250.0;
    for (double fc = 50; fc <= f_max; fc += 50)
      for (double cl = 50; cl <= f_max; cl += 50) grid.push_back({v, fc, cl});
  }
  return grid;
}

std::vector<SweepRow> sweep(const NetworkGraph& graph, const TileSchedule& schedule,
                            const std::vector<OperatingPoint>& grid, const CalibParams& calib,
                            const PowerParams& power) {
  std::vector<SweepRow> rows;
  for (const auto& op : grid) {
    const auto r = frame_report(graph, schedule, op, calib, power);
    rows.push_back({op, r.fps, r.power_mw, r.energy_mj});
  }
  return rows;
}

const SweepRow& min_energy(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("empty sweep");
  return *std::min_element(rows.begin(), rows.end(),
                           [](const SweepRow& a, const SweepRow& b) { return a.energy_mj < b.energy_mj; });
}

void write_report(const CostReport& r, std::ostream& os, bool csv) {
  if (csv) {
    os << "layer,row,node,macs,compute_cycles,dma_exposed_cycles,l3_cycles,exec_ms,l3_ms\n";
    for (const auto& c : r.layers)
      os << c.layer << ',' << c.row << ',' << c.node << ',' << c.macs << ',' << std::llround(c.compute) << ','
         << std::llround(c.dma_exposed) << ',' << std::llround(c.l3) << ',' << c.exec_seconds(r.op) * 1e3 << ','
         << c.l3_seconds(r.op) * 1e3 << '\n';
    return;
  }
  os << std::fixed;
  os << "operating point: VDD " << std::setprecision(2) << r.op.vdd << " V, FC " << std::setprecision(0)
     << r.op.f_fc_mhz << " MHz, CL " << r.op.f_cl_mhz << " MHz\n";
  os << std::left << std::setw(9) << "layer" << std::setw(16) << "row" << std::right << std::setw(12) << "compute"
     << std::setw(9) << "dma" << std::setw(10) << "L3" << std::setw(10) << "exec ms" << std::setw(9) << "L3 ms\n";
  for (const auto& c : r.layers)
    os << std::left << std::setw(9) << c.layer << std::setw(16) << c.row << std::right << std::setprecision(0)
       << std::setw(12) << c.compute << std::setw(9) << c.dma_exposed << std::setw(10) << c.l3
       << std::setprecision(2) << std::setw(10) << c.exec_seconds(r.op) * 1e3 << std::setw(9)
       << c.l3_seconds(r.op) * 1e3 << '\n';
  os << std::setprecision(3);
  os << "cycles: L3->L2 " << r.cycles.l3 / 1e6 << " M, L2<->L1 " << r.cycles.dma / 1e6 << " M, compute "
     << r.cycles.compute / 1e6 << " M, total " << r.cycles.total() / 1e6 << " M\n";
  os << "throughput " << std::setprecision(2) << r.mac_per_cycle() << " MAC/cycle\n";
  os << "frame " << std::setprecision(1) << r.frame_seconds * 1e3 << " ms, " << std::setprecision(2) << r.fps
     << " fps, L3 share " << std::setprecision(1) << r.l3_time_share * 100 << " %\n";
  os << "power " << r.power_mw << " mW (board " << r.board_power_mw << " mW), energy " << std::setprecision(2)
     << r.energy_mj << " mJ/frame\n";
  os.unsetf(std::ios::floatfield);
}

void write_sweep(const std::vector<SweepRow>& rows, std::ostream& os, bool csv) {
  if (csv)
    os << "vdd,f_fc,f_cl,fps,mW,mJ_per_frame\n";
  else
    os << "  VDD    FC    CL     fps      mW  mJ/frame\n";
  for (const auto& r : rows) {
    if (csv) {
      os << r.op.vdd << ',' << r.op.f_fc_mhz << ',' << r.op.f_cl_mhz << ',' << r.fps << ',' << r.power_mw << ','
         << r.energy_mj << '\n';
    } else {
      os << std::fixed << std::setprecision(1) << std::setw(5) << r.op.vdd << std::setprecision(0) << std::setw(6)
         << r.op.f_fc_mhz << std::setw(6) << r.op.f_cl_mhz << std::setprecision(2) << std::setw(8) << r.fps
         << std::setprecision(1) << std::setw(8) << r.power_mw << std::setprecision(3) << std::setw(10)
         << r.energy_mj << '\n';
    }
  }
  if (!csv && !rows.empty()) {
    const auto& m = min_energy(rows);
    os << std::fixed << "minimum energy: VDD " << std::setprecision(1) << m.op.vdd << " V, FC "
       << std::setprecision(0) << m.op.f_fc_mhz << " MHz, CL " << m.op.f_cl_mhz << " MHz, "
       << std::setprecision(3) << m.energy_mj << " mJ/frame\n";
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace nanotile
