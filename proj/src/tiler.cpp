#include "nanotile/tiler.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <tuple>

namespace nanotile {

const char* to_string(Scheme s) { return s == Scheme::Spatial ? "spatial" : "feature-wise"; }

const char* to_string(BasicKernel k) {
  switch (k) {
    case BasicKernel::Bias: return "bias";
    case BasicKernel::Conv: return "conv";
    case BasicKernel::MaxPool: return "maxpool";
    case BasicKernel::Relu: return "relu";
    case BasicKernel::Add: return "add";
  }
  return "?";
}

const char* to_string(Stream s) {
  switch (s) {
    case Stream::Input: return "input";
    case Stream::Bypass: return "bypass";
    case Stream::Weights: return "weights";
    case Stream::Bias: return "bias";
    case Stream::Output: return "output";
  }
  return "?";
}

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

bool is_conv(const NodeKernel& n) { return n.kernel == BasicKernel::Conv; }

// Folding rule: a pool or relu joins the node that produced its only input,
// provided nothing else reads that intermediate.
bool can_fold(const NetworkGraph& graph, const LayerSpec& l, const NodeKernel& node) {
  if (l.kind != LayerKind::MaxPool && l.kind != LayerKind::Relu) return false;
  if (l.inputs.size() != 1 || l.inputs[0] != node.output) return false;
  if (graph.tensor(node.output).consumers.size() != 1) return false;
  // Pooling goes before any relu and at most once.
  if (l.kind == LayerKind::MaxPool) return !node.pool && !node.relu && is_conv(node);
  return !node.relu;
}

}  // namespace

std::vector<NodeKernel> build_node_kernels(const NetworkGraph& graph) {
  std::vector<NodeKernel> nodes;
  for (const auto& l : graph.layers()) {
    if (l.kind == LayerKind::FullyConnected) continue;
    if (!nodes.empty() && can_fold(graph, l, nodes.back())) {
      auto& n = nodes.back();
      n.layers.push_back(l.id);
      n.output = l.id;
      n.output_shape = l.output_shape();
      if (l.kind == LayerKind::MaxPool) {
        if (l.kh != 2 || l.stride != 2) throw GraphError(l.id + ": only 2x2/s2 pooling can be fused");
        n.pool = true;
        n.epilogue.push_back(BasicKernel::MaxPool);
      } else {
        n.relu = true;
        n.epilogue.push_back(BasicKernel::Relu);
      }
      continue;
    }
    NodeKernel n;
    n.name = l.id;
    n.layers = {l.id};
    n.body = l;
    n.input = l.inputs.at(0);
    n.output = l.id;
    n.output_shape = l.output_shape();
    n.W = l.w_out;
    n.H = l.h_out;
    n.K_in = l.in_channels;
    n.K_out = l.out_channels;
    switch (l.kind) {
      case LayerKind::Conv:
        n.kernel = BasicKernel::Conv;
        n.prologue = {BasicKernel::Bias};
        break;
      case LayerKind::Add:
        n.kernel = BasicKernel::Add;
        n.bypass = l.inputs.at(1);
        break;
      case LayerKind::Relu:
        n.kernel = BasicKernel::Relu;
        break;
      default:
        throw GraphError(l.id + ": standalone " + to_string(l.kind) + " layers cannot be tiled");
    }
    if (l.fused_relu) {
      n.relu = true;
      n.epilogue.push_back(BasicKernel::Relu);
    }
    nodes.push_back(std::move(n));
  }
  return nodes;
}

std::vector<std::string> fabric_layers(const NetworkGraph& graph) {
  std::vector<std::string> out;
  for (const auto& l : graph.layers())
    if (l.kind == LayerKind::FullyConnected) out.push_back(l.id);
  return out;
}

std::vector<Range> split_workers(int units, int workers) {
  std::vector<Range> out;
  const int chunk = ceil_div(units, workers);
  for (int i = 0; i < workers; ++i) out.push_back({std::min(i * chunk, units), std::min((i + 1) * chunk, units)});
  return out;
}

double worker_efficiency(int units, int workers) {
  if (units <= 0) return 1.0;
  return static_cast<double>(units) / (static_cast<double>(workers) * ceil_div(units, workers));
}

int64_t TileBuffers::footprint() const {
  const int64_t in_slots = double_in ? 2 : 1;
  return (in + bypass) * in_slots + weights * (double_w ? 2 : 1) + out * (double_out ? 2 : 1) + acc + prepool;
}

Range stripe_rows(const NodeKernel& n, Range rows) {
  if (!is_conv(n)) return rows;
  const auto& b = n.body;
  return {rows.begin * b.stride - b.pad_top(), (rows.end - 1) * b.stride - b.pad_top() + b.kh};
}

Range stored_rows(const NodeKernel& n, Range rows) {
  if (!n.pool) return rows;
  return {rows.begin / 2, ceil_div(rows.end, 2)};
}

namespace {

Range tile_range(int index, int extent, int total) {
  return {index * extent, std::min(total, (index + 1) * extent)};
}

}  // namespace

std::optional<TilePlan> make_plan(const NodeKernel& n, Scheme scheme, int h_t, int kin_t, int kout_t) {
  if (h_t < 1 || h_t > n.H || kout_t < 1 || kout_t > n.K_out || kin_t < 1 || kin_t > n.K_in) return std::nullopt;
  if (!is_conv(n) && kin_t != kout_t) return std::nullopt;
  if (scheme == Scheme::FeatureWise && h_t != n.H) return std::nullopt;
  if (n.pool && h_t % 2 != 0 && h_t != n.H) return std::nullopt;

  TilePlan p;
  p.node = n.name;
  p.scheme = scheme;
  p.h_t = h_t;
  p.kin_t = kin_t;
  p.kout_t = kout_t;
  p.n_h = ceil_div(n.H, h_t);
  p.n_kout = ceil_div(n.K_out, kout_t);
  p.n_kin = is_conv(n) ? ceil_div(n.K_in, kin_t) : 1;

  const auto& b = n.body;
  auto& buf = p.buffers;
  const int in_rows = stripe_rows(n, {0, h_t}).size();
  buf.in = int64_t{kin_t} * in_rows * b.w_in * 2;
  if (n.kernel == BasicKernel::Add) buf.bypass = buf.in;
  if (is_conv(n)) buf.weights = int64_t{kout_t} * kin_t * b.kh * b.kw * 2 + int64_t{kout_t} * 2;
  buf.out = int64_t{kout_t} * stored_rows(n, {0, h_t}).size() * n.output_shape.w * 2;
  if (p.n_kin > 1) buf.acc = int64_t{kout_t} * h_t * n.W * 4;
  if (n.pool) buf.prepool = int64_t{kout_t} * h_t * n.W * 2;
  // Elementwise bodies fetch a fresh input tile per channel tile.
  buf.double_in = p.n_h * (is_conv(n) ? p.n_kin : p.n_kout) > 1;
  buf.double_w = is_conv(n) && (p.n_kin > 1 || p.n_kout > 1);
  buf.double_out = p.n_h * p.n_kout > 1;
  return p;
}

std::vector<TilePlan> enumerate_tilings(const NodeKernel& n, int64_t l1_budget, Scheme scheme,
                                        const PlanCost& cost) {
  std::vector<TilePlan> out;
  const int h_lo = scheme == Scheme::FeatureWise ? n.H : 1;
  const int kin_hi = is_conv(n) ? n.K_in : 1;
  for (int h_t = h_lo; h_t <= n.H; ++h_t)
    for (int kout_t = 1; kout_t <= n.K_out; ++kout_t)
      for (int kin_i = 1; kin_i <= kin_hi; ++kin_i) {
        const int kin_t = is_conv(n) ? kin_i : kout_t;
        auto p = make_plan(n, scheme, h_t, kin_t, kout_t);
        if (!p || p->footprint() > l1_budget) continue;
        p->est_cycles = cost(n, *p);
        out.push_back(std::move(*p));
      }
  if (out.empty())
    throw TilingError(n.name + ": infeasible under " + std::to_string(l1_budget) + " bytes of L1 (" +
                      to_string(scheme) + ")");
  return out;
}

namespace {

// Strict weak "better than" with the documented tie-breaks.
bool better(const TilePlan& a, const TilePlan& b) {
  const double tol = 1e-9 * std::max(std::abs(a.est_cycles), std::abs(b.est_cycles));
  if (a.est_cycles < b.est_cycles - tol) return true;
  if (b.est_cycles < a.est_cycles - tol) return false;
  if (a.tiles() != b.tiles()) return a.tiles() < b.tiles();
  if (a.h_t != b.h_t) return a.h_t > b.h_t;
  if (a.scheme != b.scheme) return a.scheme == Scheme::Spatial;
  return std::tie(a.kout_t, a.kin_t) > std::tie(b.kout_t, b.kin_t);
}

}  // namespace

TilePlan plan_layer(const NodeKernel& n, int64_t l1_budget, const PlanCost& cost) {
  std::optional<TilePlan> best;
  for (Scheme s : {Scheme::Spatial, Scheme::FeatureWise}) {
    std::vector<TilePlan> plans;
    try {
      plans = enumerate_tilings(n, l1_budget, s, cost);
    } catch (const TilingError&) {
      continue;
    }
    for (auto& p : plans)
      if (!best || better(p, *best)) best = std::move(p);
  }
  if (!best) throw TilingError(n.name + ": infeasible under " + std::to_string(l1_budget) + " bytes of L1");
  return *best;
}

std::vector<Step> emit_steps(const NodeKernel& n, const TilePlan& p) {
  const auto& b = n.body;
  const Shape3 in_shape = b.input_shape();
  const Shape3 fin = n.output_shape;
  std::vector<Step> steps;
  std::pair<int, int> resident_in{-1, -1}, resident_w{-1, -1};
  int in_loads = 0, w_loads = 0, out_stores = 0, tile = 0;
  int in_slot = 0, w_slot = 0;

  auto push = [&](Transfer t) {
    Step s;
    s.kind = Step::Kind::Transfer;
    s.transfer = std::move(t);
    steps.push_back(std::move(s));
  };

  for (int ih = 0; ih < p.n_h; ++ih) {
    const Range rows = tile_range(ih, p.h_t, n.H);
    const Range in_rows = stripe_rows(n, rows);
    const Range valid{std::max(in_rows.begin, 0), std::min(in_rows.end, in_shape.h)};
    for (int iko = 0; iko < p.n_kout; ++iko) {
      const Range ko = tile_range(iko, p.kout_t, n.K_out);
      for (int iki = 0; iki < p.n_kin; ++iki) {
        const Range ki = is_conv(n) ? tile_range(iki, p.kin_t, n.K_in) : ko;
        const std::pair<int, int> in_id{ih, is_conv(n) ? iki : iko};
        if (in_id != resident_in) {
          in_slot = p.buffers.double_in ? in_loads % 2 : 0;
          ++in_loads;
          resident_in = in_id;
          const int64_t row_bytes = int64_t{in_shape.w} * 2;
          Transfer t;
          t.to_l1 = true;
          t.stream = Stream::Input;
          t.buffer = n.input;
          t.offset = (int64_t{ki.begin} * in_shape.h + valid.begin) * row_bytes;
          t.count = ki.size();
          t.chunk = valid.size() * row_bytes;
          t.stride = int64_t{in_shape.h} * row_bytes;
          t.slot = in_slot;
          t.halo_before = (valid.begin - in_rows.begin) * row_bytes;
          t.halo_after = (in_rows.end - valid.end) * row_bytes;
          push(t);
          if (n.kernel == BasicKernel::Add) {
            t.stream = Stream::Bypass;
            t.buffer = n.bypass;
            push(t);
          }
        }
        if (is_conv(n) && std::pair{iko, iki} != resident_w) {
          w_slot = p.buffers.double_w ? w_loads % 2 : 0;
          ++w_loads;
          resident_w = {iko, iki};
          const int64_t taps = int64_t{b.kh} * b.kw * 2;
          Transfer t;
          t.to_l1 = true;
          t.stream = Stream::Weights;
          t.buffer = "w:" + b.id;
          t.offset = (int64_t{ko.begin} * n.K_in + ki.begin) * taps;
          t.count = ko.size();
          t.chunk = ki.size() * taps;
          t.stride = int64_t{n.K_in} * taps;
          t.slot = w_slot;
          push(t);
          // Only the first input-channel tile seeds the accumulator with the bias.
          if (iki == 0) {
            t.stream = Stream::Bias;
            t.offset = b.weight_count() * 2 + int64_t{ko.begin} * 2;
            t.count = 1;
            t.chunk = t.stride = int64_t{ko.size()} * 2;
            push(t);
          }
        }

        Step s;
        s.kind = Step::Kind::Compute;
        auto& c = s.compute;
        c.tile = tile++;
        c.ih = ih;
        c.iko = iko;
        c.iki = iki;
        c.rows = rows;
        c.k_out = ko;
        c.k_in = ki;
        c.in_rows = in_rows;
        c.first_k_in = iki == 0;
        c.last_k_in = iki == p.n_kin - 1;
        c.in_slot = in_slot;
        c.w_slot = w_slot;
        c.out_slot = p.buffers.double_out ? out_stores % 2 : 0;
        c.workers = split_workers(p.scheme == Scheme::Spatial ? n.W : ko.size());
        if (is_conv(n)) c.macs = int64_t{ko.size()} * ki.size() * b.kh * b.kw * rows.size() * n.W;
        steps.push_back(s);

        if (c.last_k_in) {
          const Range orow = stored_rows(n, rows);
          const int64_t row_bytes = int64_t{fin.w} * 2;
          Transfer t;
          t.to_l1 = false;
          t.stream = Stream::Output;
          t.buffer = n.output;
          t.offset = (int64_t{ko.begin} * fin.h + orow.begin) * row_bytes;
          t.count = ko.size();
          t.chunk = orow.size() * row_bytes;
          t.stride = int64_t{fin.h} * row_bytes;
          t.slot = c.out_slot;
          push(t);
          ++out_stores;
        }
      }
    }
  }
  return steps;
}

const TilePlan& TileSchedule::plan(const std::string& node) const {
  for (const auto& p : plans)
    if (p.node == node) return p;
  throw TilingError("no plan for node '" + node + "'");
}

TileSchedule plan_network(const NetworkGraph& graph, int64_t l1_budget, const PlanCost& cost) {
  TileSchedule s;
  s.l1_budget = l1_budget;
  s.nodes = build_node_kernels(graph);
  s.fabric = fabric_layers(graph);
  for (const auto& n : s.nodes) {
    auto p = plan_layer(n, l1_budget, cost);
    p.steps = emit_steps(n, p);
    s.plans.push_back(std::move(p));
  }
  return s;
}

StreamTotals transfer_totals(const TilePlan& plan) {
  StreamTotals t;
  for (const auto& s : plan.steps) {
    if (s.kind != Step::Kind::Transfer) continue;
    const int64_t bytes = s.transfer.bytes();
    switch (s.transfer.stream) {
      case Stream::Input: t.in += bytes; break;
      case Stream::Bypass: t.bypass += bytes; break;
      case Stream::Weights:
      case Stream::Bias: t.weights += bytes; break;
      case Stream::Output: t.out += bytes; break;
    }
  }
  return t;
}

void write_schedule(const TileSchedule& s, std::ostream& os, bool csv) {
  if (csv) {
    os << "node,scheme,h_t,kin_t,kout_t,n_h,n_kin,n_kout,tiles,l1_bytes,in_bytes,w_bytes,out_bytes,acc_bytes,"
          "transfer_bytes,est_cycles\n";
  } else {
    os << "L1 budget " << s.l1_budget << " bytes\n";
    os << std::left << std::setw(9) << "node" << std::setw(14) << "scheme" << std::right << std::setw(14)
       << "tile HxKinxKout" << std::setw(8) << "tiles" << std::setw(9) << "L1" << std::setw(11) << "moved"
       << std::setw(12) << "est cyc" << "  fused\n";
  }
  for (std::size_t i = 0; i < s.plans.size(); ++i) {
    const auto& p = s.plans[i];
    const auto& n = s.nodes[i];
    const auto moved = transfer_totals(p).total();
    if (csv) {
      os << p.node << ',' << to_string(p.scheme) << ',' << p.h_t << ',' << p.kin_t << ',' << p.kout_t << ','
         << p.n_h << ',' << p.n_kin << ',' << p.n_kout << ',' << p.tiles() << ',' << p.footprint() << ','
         << p.buffers.in << ',' << p.buffers.weights << ',' << p.buffers.out << ',' << p.buffers.acc << ','
         << moved << ',' << std::llround(p.est_cycles) << '\n';
    } else {
      std::string extents = std::to_string(p.h_t) + "x" + std::to_string(p.kin_t) + "x" + std::to_string(p.kout_t);
      std::string fused;
      for (std::size_t j = 1; j < n.layers.size(); ++j) fused += (j > 1 ? "," : "") + n.layers[j];
      os << std::left << std::setw(9) << p.node << std::setw(14) << to_string(p.scheme) << std::right
         << std::setw(14) << extents << std::setw(8) << p.tiles() << std::setw(9) << p.footprint() << std::setw(11)
         << moved << std::setw(12) << std::llround(p.est_cycles) << "  " << (fused.empty() ? "-" : fused) << '\n';
    }
  }
  if (!csv && !s.fabric.empty()) {
    os << "fabric controller:";
    for (const auto& f : s.fabric) os << ' ' << f;
    os << '\n';
  }
}

}  // namespace nanotile
