#include "nanotile/exec.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

namespace nanotile {

const char* to_string(MemLevel level) {
  switch (level) {
    case MemLevel::L1: return "L1";
    case MemLevel::L2: return "L2";
    case MemLevel::L3: return "L3";
  }
  return "?";
}

const char* to_string(DmaTag tag) {
  switch (tag) {
    case DmaTag::L3toL2: return "L3->L2";
    case DmaTag::L2toL1: return "L2->L1";
    case DmaTag::L1toL2: return "L1->L2";
    case DmaTag::L2toL3: return "L2->L3";
  }
  return "?";
}

namespace {

std::pair<MemLevel, MemLevel> levels(DmaTag tag) {
  switch (tag) {
    case DmaTag::L3toL2: return {MemLevel::L3, MemLevel::L2};
    case DmaTag::L2toL1: return {MemLevel::L2, MemLevel::L1};
    case DmaTag::L1toL2: return {MemLevel::L1, MemLevel::L2};
    case DmaTag::L2toL3: return {MemLevel::L2, MemLevel::L3};
  }
  return {MemLevel::L2, MemLevel::L1};
}

}  // namespace

MemSim::MemSim(int64_t l1_capacity, int64_t l2_capacity) {
  region(MemLevel::L1).capacity = l1_capacity;
  region(MemLevel::L2).capacity = l2_capacity;
  region(MemLevel::L3).capacity = std::numeric_limits<int64_t>::max();
  region(MemLevel::L1).bytes.resize(static_cast<std::size_t>(l1_capacity));
  region(MemLevel::L2).bytes.resize(static_cast<std::size_t>(l2_capacity));
}

void MemSim::alloc(MemLevel level, const std::string& name, int64_t addr, int64_t size) {
  auto& r = region(level);
  const std::string where = std::string(to_string(level)) + " buffer '" + name + "'";
  if (addr < 0 || size < 0 || size > r.capacity - addr)
    throw MemoryError(where + " [" + std::to_string(addr) + ", +" + std::to_string(size) + ") exceeds capacity " +
                      std::to_string(r.capacity));
  for (const auto& a : r.live) {
    if (a.name == name) throw MemoryError(where + " allocated twice");
    if (addr < a.addr + a.size && a.addr < addr + size) throw MemoryError(where + " overlaps '" + a.name + "'");
  }
  if (level == MemLevel::L3 && static_cast<std::size_t>(addr + size) > r.bytes.size())
    r.bytes.resize(static_cast<std::size_t>(addr + size));
  r.live.push_back({name, addr, size});
  r.used += size;
  r.peak = std::max(r.peak, r.used);
  alloc_log_.push_back({level, true, r.live.back()});
}

void MemSim::free(MemLevel level, const std::string& name) {
  auto& r = region(level);
  auto it = std::find_if(r.live.begin(), r.live.end(), [&](const Allocation& a) { return a.name == name; });
  if (it == r.live.end()) throw MemoryError(std::string(to_string(level)) + " free of dead buffer '" + name + "'");
  r.used -= it->size;
  alloc_log_.push_back({level, false, *it});
  r.live.erase(it);
}

bool MemSim::live(MemLevel level, const std::string& name) const {
  const auto& l = region(level).live;
  return std::any_of(l.begin(), l.end(), [&](const Allocation& a) { return a.name == name; });
}

const MemSim::Allocation& MemSim::allocation(MemLevel level, const std::string& name) const {
  for (const auto& a : region(level).live)
    if (a.name == name) return a;
  throw MemoryError(std::string(to_string(level)) + " buffer '" + name + "' is not live");
}

void MemSim::check_access(MemLevel level, int64_t addr, int64_t bytes) const {
  for (const auto& a : region(level).live)
    if (addr >= a.addr && addr + bytes <= a.addr + a.size) return;
  throw MemoryError(std::string(to_string(level)) + " access [" + std::to_string(addr) + ", +" +
                    std::to_string(bytes) + ") outside live memory");
}

void MemSim::write(MemLevel level, int64_t addr, std::span<const uint8_t> bytes) {
  check_access(level, addr, static_cast<int64_t>(bytes.size()));
  std::memcpy(region(level).bytes.data() + addr, bytes.data(), bytes.size());
}

void MemSim::read(MemLevel level, int64_t addr, std::span<uint8_t> out) const {
  check_access(level, addr, static_cast<int64_t>(out.size()));
  std::memcpy(out.data(), region(level).bytes.data() + addr, out.size());
}

void MemSim::zero(MemLevel level, int64_t addr, int64_t bytes) {
  if (bytes == 0) return;
  check_access(level, addr, bytes);
  std::memset(region(level).bytes.data() + addr, 0, static_cast<std::size_t>(bytes));
}

void MemSim::dma(DmaTag tag, int64_t src_addr, int64_t src_stride, int64_t dst_addr, int64_t dst_stride,
                 int64_t count, int64_t chunk) {
  const auto [from, to] = levels(tag);
  auto& src = region(from);
  auto& dst = region(to);
  for (int64_t i = 0; i < count; ++i) {
    const int64_t s = src_addr + i * src_stride, d = dst_addr + i * dst_stride;
    check_access(from, s, chunk);
    check_access(to, d, chunk);
    std::memcpy(dst.bytes.data() + d, src.bytes.data() + s, static_cast<std::size_t>(chunk));
  }
  transfers_.push_back({tag, count * chunk});
}

int64_t MemSim::capacity(MemLevel level) const { return region(level).capacity; }
int64_t MemSim::used(MemLevel level) const { return region(level).used; }
int64_t MemSim::peak(MemLevel level) const { return region(level).peak; }

void TraceLog::write_csv(std::ostream& os) const {
  os << "event,node,tile,bytes,macs,tag,stream,workers,overlaps\n";
  for (const auto& e : events) {
    const bool compute = e.kind == TraceEvent::Kind::Compute;
    os << (compute ? "compute" : "dma") << ',' << e.node << ',' << e.tile << ',' << e.bytes << ',' << e.macs << ','
       << (compute ? "" : to_string(e.tag)) << ',' << e.stream << ',';
    for (std::size_t i = 0; i < e.workers.size(); ++i)
      os << (i ? " " : "") << e.workers[i].begin << '-' << e.workers[i].end;
    os << ',' << e.overlaps << '\n';
  }
}

namespace {

std::span<const uint8_t> as_bytes(std::span<const Q412> v) {
  return {reinterpret_cast<const uint8_t*>(v.data()), v.size() * sizeof(Q412)};
}

std::vector<Q412> read_q(const MemSim& mem, MemLevel level, int64_t addr, std::size_t n) {
  std::vector<Q412> out(n);
  mem.read(level, addr, {reinterpret_cast<uint8_t*>(out.data()), n * sizeof(Q412)});
  return out;
}

std::vector<uint8_t> weight_blob(const LayerWeights& w, int64_t size) {
  std::vector<uint8_t> blob(static_cast<std::size_t>(size), 0);
  const auto wb = as_bytes(w.weights);
  const auto bb = as_bytes(w.bias);
  if (static_cast<int64_t>(wb.size() + bb.size()) > size) throw ExecError(w.layer + ": weight buffer too small");
  std::copy(wb.begin(), wb.end(), blob.begin());
  std::copy(bb.begin(), bb.end(), blob.begin() + static_cast<std::ptrdiff_t>(wb.size()));
  return blob;
}

const char* stream_name(Stream s) {
  switch (s) {
    case Stream::Input: return "input";
    case Stream::Bypass: return "bypass";
    case Stream::Weights: return "weights";
    case Stream::Bias: return "bias";
    case Stream::Output: return "output";
  }
  return "?";
}

// L1 arena for one node: slot sizes come from the transfers and compute
// steps themselves, not from the planner's buffer arithmetic.
struct L1Layout {
  std::map<std::pair<Stream, int>, int64_t> slot_addr;
  std::map<std::pair<Stream, int>, int64_t> slot_size;
  int64_t acc_addr = -1, prepool_addr = -1;
  std::vector<std::string> names;
};

int64_t landed_bytes(const Transfer& t) { return t.count * (t.halo_before + t.chunk + t.halo_after); }

L1Layout layout_l1(const NodeKernel& n, const TilePlan& p, MemSim& mem) {
  L1Layout l;
  int64_t acc = 0, prepool = 0;
  for (const auto& s : p.steps) {
    if (s.kind == Step::Kind::Transfer) {
      auto& size = l.slot_size[{s.transfer.stream, s.transfer.slot}];
      size = std::max(size, landed_bytes(s.transfer));
    } else {
      const auto& c = s.compute;
      const int64_t cells = int64_t{c.k_out.size()} * c.rows.size() * n.W;
      if (p.n_kin > 1) acc = std::max(acc, cells * 4);
      if (n.pool) prepool = std::max(prepool, cells * 2);
    }
  }
  int64_t addr = 0;
  for (const auto& [key, size] : l.slot_size) {
    const std::string name = n.name + "/" + stream_name(key.first) + std::to_string(key.second);
    mem.alloc(MemLevel::L1, name, addr, size);
    l.names.push_back(name);
    l.slot_addr[key] = addr;
    addr += size;
  }
  auto extra = [&](const char* what, int64_t size, int64_t& at) {
    if (size == 0) return;
    const std::string name = n.name + "/" + what;
    mem.alloc(MemLevel::L1, name, addr, size);
    l.names.push_back(name);
    at = addr;
    addr += size;
  };
  extra("acc", acc, l.acc_addr);
  extra("prepool", prepool, l.prepool_addr);
  return l;
}

class Executor {
 public:
  Executor(const NetworkGraph& graph, const TileSchedule& schedule, const L2AllocPlan& l2, const WeightStore& weights,
           MemSim& mem)
      : graph_(graph), schedule_(schedule), l2_(l2), weights_(weights), mem_(mem) {}

  ExecResult run(const QTensor& input);

 private:
  int64_t l2_addr(const std::string& buffer) const {
    if (buffer.rfind("w:", 0) == 0) return mem_.allocation(MemLevel::L2, buffer).addr;
    auto it = l2_.buffer_of.find(buffer);
    if (it == l2_.buffer_of.end()) throw ExecError("tensor '" + buffer + "' has no L2 buffer");
    return mem_.allocation(MemLevel::L2, it->second).addr;
  }
  QTensor read_l2_tensor(const std::string& id) const {
    const Shape3 s = graph_.tensor(id).shape;
    return QTensor(s, read_q(mem_, MemLevel::L2, l2_addr(id), s.elems()));
  }
  QTensor read_l1(int64_t addr, Shape3 s) const { return QTensor(s, read_q(mem_, MemLevel::L1, addr, s.elems())); }
  void write_l1(int64_t addr, const QTensor& t) { mem_.write(MemLevel::L1, addr, as_bytes(t.data())); }

  void dma_event(const std::string& node, int tile, DmaTag tag, const std::string& stream, int64_t bytes,
                 int overlaps) {
    TraceEvent e;
    e.kind = TraceEvent::Kind::Dma;
    e.node = node;
    e.tile = tile;
    e.tag = tag;
    e.stream = stream;
    e.bytes = bytes;
    e.overlaps = overlaps;
    trace_.events.push_back(std::move(e));
  }

  void load_weights(const std::string& layer);
  void run_node(const NodeKernel& n, const TilePlan& p);
  void run_fabric(const LayerSpec& l);
  QTensor compute_tile(const NodeKernel& n, const TilePlan& p, const ComputeStep& c, const L1Layout& l1);

  const NetworkGraph& graph_;
  const TileSchedule& schedule_;
  const L2AllocPlan& l2_;
  const WeightStore& weights_;
  MemSim& mem_;
  TraceLog trace_;
  std::map<std::string, QTensor> activations_;
  std::vector<Q412> heads_;
};

void Executor::load_weights(const std::string& layer) {
  const auto buffer = weight_buffer(layer);
  const auto& l3 = mem_.allocation(MemLevel::L3, buffer);
  const int64_t dst = mem_.allocation(MemLevel::L2, buffer).addr;
  mem_.dma(DmaTag::L3toL2, l3.addr, l3.size, dst, l3.size, 1, l3.size);
  dma_event(layer, -1, DmaTag::L3toL2, "weights", l3.size, -1);
}

QTensor Executor::compute_tile(const NodeKernel& n, const TilePlan& p, const ComputeStep& c, const L1Layout& l1) {
  const auto& b = n.body;
  const int kout = c.k_out.size();
  const Shape3 in_shape{c.k_in.size(), c.in_rows.size(), b.w_in};
  const auto in = read_l1(l1.slot_addr.at({Stream::Input, c.in_slot}), in_shape);

  QTensor body;
  switch (n.kernel) {
    case BasicKernel::Conv: {
      LayerWeights w;
      w.layer = b.id;
      w.in_channels = c.k_in.size();
      w.out_channels = kout;
      w.kh = b.kh;
      w.kw = b.kw;
      w.stride = b.stride;
      w.weights = read_q(mem_, MemLevel::L1, l1.slot_addr.at({Stream::Weights, c.w_slot}),
                         static_cast<std::size_t>(kout) * w.in_channels * w.kh * w.kw);
      if (c.first_k_in) w.bias = read_q(mem_, MemLevel::L1, l1.slot_addr.at({Stream::Bias, c.w_slot}), kout);

      const Shape3 acc_shape{kout, c.rows.size(), n.W};
      Tensor3<Acc32> acc(acc_shape);
      if (c.first_k_in) {
        init_bias(w, 0, acc);
      } else {
        mem_.read(MemLevel::L1, l1.acc_addr,
                  {reinterpret_cast<uint8_t*>(acc.data().data()), acc_shape.elems() * sizeof(Acc32)});
      }
      ConvWindow win;
      win.in_row0 = c.in_rows.begin;
      win.in_height = b.h_in;
      win.y0 = c.rows.begin;
      for (const auto& r : c.workers) {
        if (r.size() == 0) continue;
        if (p.scheme == Scheme::Spatial) {
          win.x_begin = r.begin;
          win.x_end = r.end;
        } else {
          win.k_begin = r.begin;
          win.k_end = r.end;
        }
        conv_accumulate(in, w, b.pad_top(), b.pad_left(), win, acc);
      }
      if (!c.last_k_in) {
        mem_.write(MemLevel::L1, l1.acc_addr,
                   {reinterpret_cast<const uint8_t*>(acc.data().data()), acc_shape.elems() * sizeof(Acc32)});
        return {};
      }
      body = renorm(acc, b.fused_relu);
      break;
    }
    case BasicKernel::Add: {
      const auto other = read_l1(l1.slot_addr.at({Stream::Bypass, c.in_slot}), in_shape);
      body = add(in, other, b.fused_relu);
      break;
    }
    case BasicKernel::Relu:
      body = relu(in);
      break;
    default:
      throw ExecError(n.name + ": unsupported body kernel");
  }

  for (auto k : n.epilogue) {
    if (k == BasicKernel::MaxPool) {
      // The body tile goes through L1 ahead of pooling.
      write_l1(l1.prepool_addr, body);
      body = maxpool2(read_l1(l1.prepool_addr, body.shape()));
    } else if (k == BasicKernel::Relu) {
      body = relu(body);
    }
  }
  return body;
}

void Executor::run_node(const NodeKernel& n, const TilePlan& p) {
  if (p.node != n.name) throw ExecError("schedule plan '" + p.node + "' does not match node '" + n.name + "'");
  const auto l1 = layout_l1(n, p, mem_);
  int last_compute = -1;
  bool computed_since_store = false;

  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto& s = p.steps[i];
    if (s.kind == Step::Kind::Compute) {
      const auto out = compute_tile(n, p, s.compute, l1);
      if (s.compute.last_k_in) write_l1(l1.slot_addr.at({Stream::Output, s.compute.out_slot}), out);
      TraceEvent e;
      e.kind = TraceEvent::Kind::Compute;
      e.node = n.name;
      e.tile = s.compute.tile;
      e.macs = s.compute.macs;
      e.workers = s.compute.workers;
      trace_.events.push_back(std::move(e));
      last_compute = s.compute.tile;
      computed_since_store = true;
      continue;
    }

    const auto& t = s.transfer;
    const int64_t l1_addr = l1.slot_addr.at({t.stream, t.slot});
    const int64_t l2_base = l2_addr(t.buffer);
    int overlaps = -1;
    if (t.to_l1) {
      const int64_t row = t.halo_before + t.chunk + t.halo_after;
      for (int64_t c = 0; c < t.count; ++c) {
        mem_.zero(MemLevel::L1, l1_addr + c * row, t.halo_before);
        mem_.zero(MemLevel::L1, l1_addr + c * row + t.halo_before + t.chunk, t.halo_after);
      }
      mem_.dma(DmaTag::L2toL1, l2_base + t.offset, t.stride, l1_addr + t.halo_before, row, t.count, t.chunk);
      const bool doubled = t.stream == Stream::Input || t.stream == Stream::Bypass ? p.buffers.double_in
                                                                                  : p.buffers.double_w;
      // A double-buffered prefetch runs under the previous tile's compute.
      if (doubled && last_compute >= 0) overlaps = last_compute;
      dma_event(n.name, last_compute + 1, DmaTag::L2toL1, stream_name(t.stream), t.bytes(), overlaps);
    } else {
      if (!computed_since_store) throw ExecError(n.name + ": output stored before it was computed");
      mem_.dma(DmaTag::L1toL2, l1_addr, t.chunk, l2_base + t.offset, t.stride, t.count, t.chunk);
      // The store drains while the next tile computes.
      const bool more = std::any_of(p.steps.begin() + static_cast<std::ptrdiff_t>(i), p.steps.end(),
                                    [](const Step& x) { return x.kind == Step::Kind::Compute; });
      if (p.buffers.double_out && more) overlaps = last_compute + 1;
      dma_event(n.name, last_compute, DmaTag::L1toL2, "output", t.bytes(), overlaps);
      computed_since_store = false;
    }
  }
  for (auto it = l1.names.rbegin(); it != l1.names.rend(); ++it) mem_.free(MemLevel::L1, *it);
}

void Executor::run_fabric(const LayerSpec& l) {
  if (l.kind != LayerKind::FullyConnected) throw ExecError(l.id + ": only fully connected layers run on the fabric");
  const auto x = read_l2_tensor(l.inputs.at(0));
  LayerWeights w = weights_.at(l.id);
  const int64_t addr = l2_addr(weight_buffer(l.id));
  w.weights = read_q(mem_, MemLevel::L2, addr, w.weights.size());
  w.bias = read_q(mem_, MemLevel::L2, addr + static_cast<int64_t>(w.weights.size() * sizeof(Q412)), w.bias.size());
  heads_.push_back(fully_connected(x.data(), w));
  TraceEvent e;
  e.kind = TraceEvent::Kind::Compute;
  e.node = l.id;
  e.macs = int64_t{l.in_channels} * l.out_channels;
  trace_.events.push_back(std::move(e));
}

ExecResult Executor::run(const QTensor& input) {
  if (input.shape() != graph_.input_shape()) throw ExecError("input tensor does not match the graph input");
  const auto nodes = build_node_kernels(graph_);
  if (nodes.size() != schedule_.nodes.size()) throw ExecError("schedule does not cover the graph's nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name != schedule_.nodes[i].name || schedule_.plans.at(i).node != nodes[i].name)
      throw ExecError("schedule node '" + schedule_.nodes[i].name + "' does not match graph node '" + nodes[i].name +
                      "'");
  const auto steps = l2_steps(graph_);
  if (steps.size() != l2_.steps.size()) throw ExecError("L2 plan was made for a different graph");

  // Weights start in L3, back to back.
  int64_t l3 = 0;
  for (const auto& l : graph_.layers()) {
    if (!l.has_weights()) continue;
    const auto buffer = weight_buffer(l.id);
    const int64_t size = l2_sizes(graph_).at(buffer);
    mem_.alloc(MemLevel::L3, buffer, l3, size);
    mem_.write(MemLevel::L3, l3, weight_blob(weights_.at(l.id), size));
    l3 += size;
  }

  const auto frame = l2_.frame;
  mem_.alloc(MemLevel::L2, frame, 0, l2_.frame_bytes);
  mem_.write(MemLevel::L2, 0, as_bytes(input.data()));
  activations_.emplace(frame, input);

  std::map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < schedule_.nodes.size(); ++i) node_index[schedule_.nodes[i].name] = i;

  std::size_t ev = 0;
  for (int i = 0; i < static_cast<int>(l2_.steps.size()); ++i) {
    const auto& step = l2_.steps[i];
    // Allocations for this step precede its compute; frees follow it.
    for (; ev < l2_.events.size() && l2_.events[ev].step == i &&
           l2_.events[ev].action == AllocEvent::Action::Alloc;
         ++ev) {
      const auto& e = l2_.events[ev];
      mem_.alloc(MemLevel::L2, e.buffer, l2_.stack_base(e.stack) + e.offset, e.size);
    }
    if (!step.weights.empty()) load_weights(step.node);

    if (auto it = node_index.find(step.node); it != node_index.end()) {
      run_node(schedule_.nodes[it->second], schedule_.plans[it->second]);
    } else {
      run_fabric(graph_.layer(step.node));
    }
    if (!step.writes.empty()) activations_.insert_or_assign(step.writes, read_l2_tensor(step.writes));

    for (; ev < l2_.events.size() && l2_.events[ev].step == i; ++ev) {
      const auto& e = l2_.events[ev];
      if (e.action != AllocEvent::Action::Free) throw ExecError("L2 plan allocates '" + e.buffer + "' after a free");
      mem_.free(MemLevel::L2, e.buffer);
    }
  }
  if (ev != l2_.events.size()) throw ExecError("L2 plan has events past the last step");
  mem_.free(MemLevel::L2, frame);
  for (const auto& l : graph_.layers())
    if (l.has_weights()) mem_.free(MemLevel::L3, weight_buffer(l.id));

  if (heads_.size() != 2) throw ExecError("graph lacks the two output heads");
  ExecResult r;
  r.prediction = make_prediction(heads_[0], heads_[1]);
  r.trace = std::move(trace_);
  r.activations = std::move(activations_);
  return r;
}

}  // namespace

ExecResult execute_schedule(const NetworkGraph& graph, const TileSchedule& schedule, const L2AllocPlan& l2,
                            const WeightStore& weights, const QTensor& input, MemSim& mem) {
  return Executor(graph, schedule, l2, weights, mem).run(input);
}

AuditReport audit_trace(const TraceLog& trace, const MemSim& mem) {
  AuditReport r;
  std::map<MemLevel, int64_t> used;
  for (const auto& rec : mem.alloc_log()) {
    auto& u = used[rec.level];
    u += rec.alloc ? rec.what.size : -rec.what.size;
    if (u > mem.capacity(rec.level))
      r.violations.push_back(std::string(to_string(rec.level)) + " over capacity at '" + rec.what.name + "'");
    if (u < 0) r.violations.push_back(std::string(to_string(rec.level)) + " negative occupancy");
    if (rec.level == MemLevel::L1) r.peak_l1 = std::max(r.peak_l1, u);
    if (rec.level == MemLevel::L2) r.peak_l2 = std::max(r.peak_l2, u);
  }
  for (const auto& e : trace.events) {
    if (e.kind != TraceEvent::Kind::Dma) continue;
    r.bytes_by_tag[e.tag] += e.bytes;
    r.bytes_by_node_stream[e.node][e.stream] += e.bytes;
  }
  std::map<DmaTag, int64_t> logged;
  for (const auto& t : mem.transfers()) logged[t.tag] += t.bytes;
  if (logged != r.bytes_by_tag) r.violations.push_back("trace and memory transfer logs disagree");
  return r;
}

}  // namespace nanotile
