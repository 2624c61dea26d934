#include "nanotile/l2plan.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <set>

#include "nanotile/tiler.hpp"

namespace nanotile {

namespace {

int64_t align4(int64_t n) { return (n + 3) / 4 * 4; }

}  // namespace

int64_t L2Sizes::at(const std::string& id) const {
  auto it = bytes.find(id);
  if (it == bytes.end()) throw L2PlanError("no size for L2 buffer '" + id + "'");
  return it->second;
}

L2Sizes l2_sizes(const NetworkGraph& graph) {
  L2Sizes s;
  for (const auto& t : graph.tensors()) s.bytes[t.id] = align4(static_cast<int64_t>(t.shape.bytes()));
  for (const auto& l : graph.layers())
    if (l.has_weights()) s.bytes[weight_buffer(l.id)] = align4((l.weight_count() + l.bias_count()) * 2);
  return s;
}

std::vector<L2Step> l2_steps(const NetworkGraph& graph) {
  const auto nodes = build_node_kernels(graph);
  std::vector<std::pair<int, L2Step>> ordered;
  for (const auto& n : nodes) {
    L2Step s;
    s.node = n.name;
    s.reads = {n.input};
    s.writes = n.output;
    if (n.kernel == BasicKernel::Add) {
      s.reads.push_back(n.bypass);
      s.alias = n.bypass;
    } else if (n.kernel == BasicKernel::Relu) {
      s.alias = n.input;
    }
    if (n.body.has_weights()) s.weights = weight_buffer(n.name);
    ordered.emplace_back(graph.layer_index(n.name), std::move(s));
  }
  for (const auto& id : fabric_layers(graph)) {
    const auto& l = graph.layer(id);
    L2Step s;
    s.node = id;
    s.reads = l.inputs;
    s.weights = weight_buffer(id);
    ordered.emplace_back(graph.layer_index(id), std::move(s));
  }
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<L2Step> steps;
  for (auto& [_, s] : ordered) steps.push_back(std::move(s));
  return steps;
}

int64_t L2AllocPlan::peak() const {
  int64_t total = 0;
  for (int64_t p : stack_peak) total += p;
  return total;
}

int64_t L2AllocPlan::stack_base(int stack) const {
  int64_t base = frame_bytes;
  for (int s = 0; s < stack; ++s) base += stack_peak.at(s);
  return base;
}

namespace {

// The lifetime program shared by the search and the plan builder.
struct Program {
  struct Op {
    enum class Kind { Alloc, FreeWeights, EndStep } kind;
    std::string buffer;
    int64_t size = 0;
    int last_use = 0;  // step after which the buffer is dead
    int step = 0;
  };
  std::vector<Op> ops;
  std::map<std::string, std::string> buffer_of;
  int allocs = 0;
};

Program compile(const std::vector<L2Step>& steps, const L2Sizes& sizes, const std::string& frame) {
  Program prog;
  prog.buffer_of[frame] = frame;
  std::map<std::string, int> last_use;
  for (int i = 0; i < static_cast<int>(steps.size()); ++i) {
    const auto& s = steps[i];
    if (!s.writes.empty()) {
      prog.buffer_of[s.writes] = s.alias.empty() ? s.writes : prog.buffer_of.at(s.alias);
      last_use[prog.buffer_of[s.writes]] = i;
    }
    for (const auto& r : s.reads) {
      auto it = prog.buffer_of.find(r);
      if (it == prog.buffer_of.end()) throw L2PlanError(s.node + ": reads '" + r + "' before it is written");
      last_use[it->second] = std::max(last_use[it->second], i);
    }
  }
  for (int i = 0; i < static_cast<int>(steps.size()); ++i) {
    const auto& s = steps[i];
    if (!s.writes.empty() && s.alias.empty()) {
      prog.ops.push_back({Program::Op::Kind::Alloc, s.writes, sizes.at(s.writes), last_use.at(s.writes), i});
      ++prog.allocs;
    }
    if (!s.weights.empty()) {
      prog.ops.push_back({Program::Op::Kind::Alloc, s.weights, sizes.at(s.weights), i, i});
      ++prog.allocs;
      prog.ops.push_back({Program::Op::Kind::FreeWeights, s.weights, 0, i, i});
    }
    prog.ops.push_back({Program::Op::Kind::EndStep, "", 0, i, i});
  }
  return prog;
}

struct Live {
  std::string buffer;
  int64_t size;
  int last_use;
};

struct SearchState {
  std::vector<std::vector<Live>> stacks;
  std::vector<int64_t> used;
  std::vector<int64_t> peak;
};

int64_t sum(const std::vector<int64_t>& v) {
  int64_t t = 0;
  for (auto x : v) t += x;
  return t;
}

// Pops dead buffers sitting on top of each stack.
template <typename OnFree>
void cascade(SearchState& st, int step, OnFree on_free) {
  for (std::size_t s = 0; s < st.stacks.size(); ++s) {
    auto& stack = st.stacks[s];
    while (!stack.empty() && stack.back().last_use <= step) {
      on_free(static_cast<int>(s), stack.back());
      st.used[s] -= stack.back().size;
      stack.pop_back();
    }
  }
}

void search(const Program& prog, std::size_t op, SearchState& st, std::vector<int>& current, int64_t& best,
            std::vector<int>& best_assignment) {
  for (; op < prog.ops.size(); ++op) {
    const auto& o = prog.ops[op];
    if (o.kind == Program::Op::Kind::EndStep) {
      cascade(st, o.step, [](int, const Live&) {});
    } else if (o.kind == Program::Op::Kind::FreeWeights) {
      for (std::size_t s = 0; s < st.stacks.size(); ++s)
        if (!st.stacks[s].empty() && st.stacks[s].back().buffer == o.buffer) {
          st.used[s] -= st.stacks[s].back().size;
          st.stacks[s].pop_back();
        }
    } else {
      // Branch on the stack for this allocation; the first goes to stack 0 by symmetry.
      const int choices = current.empty() ? 1 : static_cast<int>(st.stacks.size());
      for (int s = 0; s < choices; ++s) {
        SearchState next = st;
        next.stacks[s].push_back({o.buffer, o.size, o.last_use});
        next.used[s] += o.size;
        next.peak[s] = std::max(next.peak[s], next.used[s]);
        if (sum(next.peak) >= best) continue;
        current.push_back(s);
        search(prog, op + 1, next, current, best, best_assignment);
        current.pop_back();
      }
      return;
    }
  }
  const int64_t total = sum(st.peak);
  if (total < best) {
    best = total;
    best_assignment = current;
  }
}

}  // namespace

L2AllocPlan build_plan(const NetworkGraph& graph, const L2Sizes& sizes, const std::vector<int>& assignment,
                       int stacks) {
  L2AllocPlan plan;
  plan.steps = l2_steps(graph);
  plan.frame = NetworkGraph::kInputTensor;
  plan.frame_bytes = graph.layers().empty() ? 0 : sizes.at(plan.frame);
  plan.stacks = stacks;
  const Program prog = compile(plan.steps, sizes, plan.frame);
  plan.buffer_of = prog.buffer_of;
  if (static_cast<int>(assignment.size()) != prog.allocs)
    throw L2PlanError("assignment covers " + std::to_string(assignment.size()) + " of " +
                      std::to_string(prog.allocs) + " allocations");

  SearchState st;
  st.stacks.resize(stacks);
  st.used.assign(stacks, 0);
  st.peak.assign(stacks, 0);
  plan.occupancy.assign(plan.steps.size(), std::vector<int64_t>(stacks, 0));
  std::size_t next = 0;
  auto free_event = [&](int step) {
    return [&plan, step](int s, const Live& l) {
      plan.events.push_back({l.buffer, s, AllocEvent::Action::Free, l.size, step, 0});
    };
  };
  for (const auto& o : prog.ops) {
    switch (o.kind) {
      case Program::Op::Kind::Alloc: {
        const int s = assignment[next++];
        if (s < 0 || s >= stacks) throw L2PlanError("stack index out of range");
        plan.events.push_back({o.buffer, s, AllocEvent::Action::Alloc, o.size, o.step, st.used[s]});
        st.stacks[s].push_back({o.buffer, o.size, o.last_use});
        st.used[s] += o.size;
        st.peak[s] = std::max(st.peak[s], st.used[s]);
        break;
      }
      case Program::Op::Kind::FreeWeights: {
        plan.occupancy[o.step] = st.used;
        for (int s = 0; s < stacks; ++s)
          if (!st.stacks[s].empty() && st.stacks[s].back().buffer == o.buffer) {
            plan.events.push_back({o.buffer, s, AllocEvent::Action::Free, st.stacks[s].back().size, o.step, 0});
            st.used[s] -= st.stacks[s].back().size;
            st.stacks[s].pop_back();
          }
        break;
      }
      case Program::Op::Kind::EndStep: {
        const auto& s = plan.steps[o.step];
        if (s.weights.empty()) plan.occupancy[o.step] = st.used;
        cascade(st, o.step, free_event(o.step));
        break;
      }
    }
  }
  // Free offsets mirror the allocation they release.
  std::map<std::pair<std::string, int>, int64_t> offsets;
  for (auto& e : plan.events) {
    if (e.action == AllocEvent::Action::Alloc)
      offsets[{e.buffer, e.stack}] = e.offset;
    else
      e.offset = offsets.at({e.buffer, e.stack});
  }
  plan.stack_peak = st.peak;
  return plan;
}

L2AllocPlan plan_two_stack(const NetworkGraph& graph, const L2Sizes& sizes) {
  const auto steps = l2_steps(graph);
  const Program prog = compile(steps, sizes, NetworkGraph::kInputTensor);
  SearchState st;
  st.stacks.resize(2);
  st.used.assign(2, 0);
  st.peak.assign(2, 0);
  int64_t best = std::numeric_limits<int64_t>::max();
  std::vector<int> current, assignment;
  search(prog, 0, st, current, best, assignment);
  if (prog.allocs > 0 && assignment.empty()) throw L2PlanError("no valid stack assignment");
  return build_plan(graph, sizes, assignment, 2);
}

L2AllocPlan plan_single_stack_plan(const NetworkGraph& graph, const L2Sizes& sizes) {
  const Program prog = compile(l2_steps(graph), sizes, NetworkGraph::kInputTensor);
  return build_plan(graph, sizes, std::vector<int>(prog.allocs, 0), 1);
}

int64_t plan_single_stack(const NetworkGraph& graph, const L2Sizes& sizes) {
  return plan_single_stack_plan(graph, sizes).peak();
}

std::vector<Violation> validate_plan(const L2AllocPlan& plan, const NetworkGraph& graph, int64_t capacity) {
  std::vector<Violation> out;
  auto report = [&](Violation::Kind k, std::string msg) { out.push_back({k, std::move(msg)}); };

  struct Entry {
    std::string buffer;
    int64_t size;
    int64_t offset;
  };
  std::vector<std::vector<Entry>> stacks(plan.stacks);
  std::vector<int64_t> used(plan.stacks, 0), peak(plan.stacks, 0);
  auto live = [&](const std::string& buffer) {
    for (const auto& s : stacks)
      for (const auto& e : s)
        if (e.buffer == buffer) return true;
    return false;
  };

  std::size_t ev = 0;
  for (int i = 0; i < static_cast<int>(plan.steps.size()); ++i) {
    const auto& step = plan.steps[i];
    const auto& layer = graph.layer(step.node);
    const std::string wbuf = layer.has_weights() ? weight_buffer(layer.id) : "";
    if (!wbuf.empty() && live(wbuf)) report(Violation::Kind::WeightLifetime, wbuf + " live before " + layer.id);

    for (; ev < plan.events.size() && plan.events[ev].step == i &&
           plan.events[ev].action == AllocEvent::Action::Alloc;
         ++ev) {
      const auto& e = plan.events[ev];
      if (e.stack < 0 || e.stack >= plan.stacks) {
        report(Violation::Kind::Accounting, e.buffer + ": bad stack index");
        continue;
      }
      if (e.offset != used[e.stack])
        report(Violation::Kind::Accounting, e.buffer + ": offset " + std::to_string(e.offset) + " but stack top at " +
                                                std::to_string(used[e.stack]));
      stacks[e.stack].push_back({e.buffer, e.size, e.offset});
      used[e.stack] += e.size;
      peak[e.stack] = std::max(peak[e.stack], used[e.stack]);
    }

    // Compute point: every operand and the layer's weights must be resident.
    for (const auto& t : layer.inputs) {
      if (t == plan.frame) continue;
      auto it = plan.buffer_of.find(t);
      if (it == plan.buffer_of.end() || !live(it->second))
        report(Violation::Kind::Liveness, layer.id + " reads '" + t + "' which is not live");
    }
    if (!wbuf.empty() && !live(wbuf)) report(Violation::Kind::WeightLifetime, wbuf + " not live at " + layer.id);
    if (i < static_cast<int>(plan.occupancy.size()) && plan.occupancy[i] != used)
      report(Violation::Kind::Accounting, "occupancy mismatch at step " + std::to_string(i));

    for (; ev < plan.events.size() && plan.events[ev].step == i; ++ev) {
      const auto& e = plan.events[ev];
      if (e.action == AllocEvent::Action::Alloc) {
        report(Violation::Kind::Accounting, e.buffer + ": allocated after its step's frees");
        continue;
      }
      if (e.stack < 0 || e.stack >= plan.stacks) continue;
      auto& s = stacks[e.stack];
      if (s.empty() || s.back().buffer != e.buffer) {
        report(Violation::Kind::Lifo, e.buffer + " freed but stack " + std::to_string(e.stack) + " top is " +
                                          (s.empty() ? std::string("empty") : s.back().buffer));
        auto it = std::find_if(s.begin(), s.end(), [&](const Entry& x) { return x.buffer == e.buffer; });
        if (it != s.end()) {
          used[e.stack] -= it->size;
          s.erase(it);
        }
        continue;
      }
      used[e.stack] -= s.back().size;
      s.pop_back();
    }
    if (!wbuf.empty() && live(wbuf)) report(Violation::Kind::WeightLifetime, wbuf + " still live after " + layer.id);
  }
  if (ev != plan.events.size()) report(Violation::Kind::Accounting, "events out of step order");
  if (peak != plan.stack_peak) report(Violation::Kind::Accounting, "declared stack peaks disagree with events");
  int64_t total = plan.frame_bytes;
  for (auto p : peak) total += p;
  if (total > capacity)
    report(Violation::Kind::Capacity,
           "L2 footprint " + std::to_string(total) + " exceeds capacity " + std::to_string(capacity));
  return out;
}

void write_l2_plan(const L2AllocPlan& plan, std::ostream& os, bool csv) {
  std::vector<std::vector<AllocEvent>> stacks(plan.stacks);
  auto names = [](const std::vector<AllocEvent>& s) {
    std::string out;
    for (const auto& e : s) out += (out.empty() ? "" : ";") + e.buffer;
    return out;
  };
  if (csv) {
    os << "step,node";
    for (int s = 0; s < plan.stacks; ++s) os << ",stack" << s << "_bytes,stack" << s << "_live";
    os << '\n';
  }
  std::size_t ev = 0;
  for (int i = 0; i < static_cast<int>(plan.steps.size()); ++i) {
    for (; ev < plan.events.size() && plan.events[ev].step == i &&
           plan.events[ev].action == AllocEvent::Action::Alloc;
         ++ev)
      stacks[plan.events[ev].stack].push_back(plan.events[ev]);
    if (csv) {
      os << i << ',' << plan.steps[i].node;
      for (int s = 0; s < plan.stacks; ++s) os << ',' << plan.occupancy[i][s] << ',' << names(stacks[s]);
      os << '\n';
    } else {
      os << std::setw(3) << i << "  " << std::left << std::setw(9) << plan.steps[i].node << std::right;
      for (int s = 0; s < plan.stacks; ++s)
        os << "  [" << s << "] " << std::setw(7) << plan.occupancy[i][s] << ' ' << std::left << std::setw(36)
           << names(stacks[s]) << std::right;
      os << '\n';
    }
    for (; ev < plan.events.size() && plan.events[ev].step == i; ++ev) {
      auto& s = stacks[plan.events[ev].stack];
      if (!s.empty()) s.pop_back();
    }
  }
  if (!csv) {
    os << std::fixed << std::setprecision(1);
    for (int s = 0; s < plan.stacks; ++s)
      os << "stack " << s << " peak " << plan.stack_peak[s] << " B\n";
    os << "total peak " << plan.peak() << " B (" << plan.peak() / 1000.0 << " kB)\n";
    os << "frame buffer " << plan.frame_bytes << " B, footprint " << plan.footprint() << " B\n";
    os << "L2 headroom " << plan.headroom() << " B (" << plan.headroom() / 1000.0 << " kB)\n";
    os.unsetf(std::ios::floatfield);
  }
}

}  // namespace nanotile
