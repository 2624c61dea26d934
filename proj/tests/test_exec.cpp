#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "common.hpp"
#include "nanotile/exec.hpp"

using namespace nanotile;

namespace {

struct Run {
  TileSchedule schedule;
  L2AllocPlan l2;
};

const Run& setup(int64_t budget) {
  static std::map<int64_t, Run> runs;
  auto it = runs.find(budget);
  if (it == runs.end()) {
    const auto& g = testutil::dronet();
    it = runs.emplace(budget, Run{plan_network(g, budget, plan_cost(testutil::calibration().calib)),
                                  plan_two_stack(g, l2_sizes(g))})
             .first;
  }
  return it->second;
}

}  // namespace

TEST_SUITE("exec") {

TEST_CASE("memory simulator traps") {
  MemSim m(1024, 2048);
  m.alloc(MemLevel::L1, "a", 0, 512);
  CHECK_THROWS_AS(m.alloc(MemLevel::L1, "b", 256, 512), MemoryError);
  CHECK_THROWS_AS(m.alloc(MemLevel::L1, "a", 600, 16), MemoryError);
  CHECK_THROWS_AS(m.alloc(MemLevel::L1, "c", 600, 512), MemoryError);
  m.alloc(MemLevel::L1, "b", 512, 512);
  CHECK(m.used(MemLevel::L1) == 1024);

  std::vector<uint8_t> buf(16, 7), out(16);
  m.write(MemLevel::L1, 500, std::span<const uint8_t>(buf.data(), 12));
  // Spanning two allocations is not one live buffer.
  CHECK_THROWS_AS(m.write(MemLevel::L1, 500, buf), MemoryError);
  m.free(MemLevel::L1, "a");
  CHECK_THROWS_AS(m.read(MemLevel::L1, 0, out), MemoryError);
  CHECK_THROWS_AS(m.free(MemLevel::L1, "a"), MemoryError);
  CHECK(m.peak(MemLevel::L1) == 1024);

  m.alloc(MemLevel::L3, "w", 0, 64);
  m.alloc(MemLevel::L2, "x", 100, 64);
  m.write(MemLevel::L3, 0, std::vector<uint8_t>(64, 3));
  m.dma(DmaTag::L3toL2, 0, 16, 100, 16, 4, 16);
  m.read(MemLevel::L2, 100, out);
  CHECK(out == std::vector<uint8_t>(16, 3));
  CHECK_THROWS_AS(m.dma(DmaTag::L2toL1, 100, 16, 0, 16, 5, 16), MemoryError);
  CHECK(m.transfers().size() == 1);
  CHECK(m.transfers()[0].bytes == 64);
}

TEST_CASE("zero network through the tiled path") {
  const auto& g = testutil::dronet();
  const auto& r = setup(kDefaultL1Budget);
  MemSim mem;
  const auto out = execute_schedule(g, r.schedule, r.l2, zero_weights(g), testutil::random_input(3), mem);
  CHECK(out.prediction.steering == 0.0);
  CHECK(out.prediction.collision == 0.5);
}

TEST_CASE("tiled equals untiled, tensor by tensor") {
  const auto& g = testutil::dronet();
  for (int64_t budget : {16 * 1024, 60 * 1024}) {
    const auto& r = setup(budget);
    for (uint64_t seed : {21u, 22u}) {
      const auto w = random_weights(g, seed);
      const auto in = testutil::random_input(seed);
      std::map<std::string, QTensor> acts;
      const auto ref = infer_untiled(g, w, in, Arithmetic::Q412, &acts);
      MemSim mem;
      const auto out = execute_schedule(g, r.schedule, r.l2, w, in, mem);
      CHECK(out.prediction.steering_raw == ref.steering_raw);
      CHECK(out.prediction.logit_raw == ref.logit_raw);
      for (const auto& [id, t] : out.activations)
        if (acts.count(id)) CHECK_MESSAGE(acts.at(id) == t, id);
    }
  }
}

TEST_CASE("trace audit") {
  const auto& g = testutil::dronet();
  const auto& r = setup(kDefaultL1Budget);
  MemSim mem;
  const auto out = execute_schedule(g, r.schedule, r.l2, random_weights(g, 5), testutil::random_input(5), mem);
  const auto a = audit_trace(out.trace, mem);
  CHECK(a.ok());
  CHECK(a.peak_l1 <= kDefaultL1Budget);
  CHECK(a.peak_l2 <= kL2Capacity);
  // Stacks peak at different steps, so live bytes stay at or under the footprint.
  int64_t live_peak = 0;
  for (const auto& occ : r.l2.occupancy) {
    int64_t sum = r.l2.frame_bytes;
    for (auto b : occ) sum += b;
    live_peak = std::max(live_peak, sum);
  }
  CHECK(a.peak_l2 == live_peak);
  CHECK(a.peak_l2 <= r.l2.footprint());

  // Per-node L1 stream totals agree with the plans.
  std::map<std::string, std::map<std::string, int64_t>> l1_bytes, all_bytes;
  for (const auto& e : out.trace.events) {
    if (e.kind != TraceEvent::Kind::Dma) continue;
    all_bytes[e.node][e.stream] += e.bytes;
    if (e.tag == DmaTag::L2toL1 || e.tag == DmaTag::L1toL2) l1_bytes[e.node][e.stream] += e.bytes;
  }
  CHECK(all_bytes == a.bytes_by_node_stream);
  for (const auto& p : r.schedule.plans) {
    const auto t = transfer_totals(p);
    auto& s = l1_bytes[p.node];
    CHECK_MESSAGE(s["input"] == t.in, p.node);
    CHECK(s["bypass"] == t.bypass);
    CHECK(s["weights"] + s["bias"] == t.weights);
    CHECK(s["output"] == t.out);
  }
  const auto& c9 = r.schedule.plan("conv_9");
  int64_t l2l1 = 0;
  for (const auto& e : out.trace.events)
    if (e.kind == TraceEvent::Kind::Dma && e.node == "conv_9" && e.tag == DmaTag::L2toL1) l2l1 += e.bytes;
  const auto t9 = transfer_totals(c9);
  CHECK(l2l1 == t9.in + t9.bypass + t9.weights);

  // All weights cross from L3 exactly once.
  int64_t weight_bytes = 0;
  for (const auto& [id, b] : l2_sizes(g).bytes)
    if (id.rfind("w:", 0) == 0) weight_bytes += b;
  CHECK(a.bytes_by_tag.at(DmaTag::L3toL2) == weight_bytes);

  // Each overlap annotation names a compute tile of the same node.
  std::set<std::pair<std::string, int>> tiles;
  for (const auto& e : out.trace.events)
    if (e.kind == TraceEvent::Kind::Compute) tiles.insert({e.node, e.tile});
  int annotated = 0;
  for (const auto& e : out.trace.events)
    if (e.kind == TraceEvent::Kind::Dma && e.overlaps >= 0) {
      ++annotated;
      CHECK(tiles.count({e.node, e.overlaps}) == 1);
    }
  CHECK(annotated > 0);

  const AuditReport empty = audit_trace(TraceLog{}, MemSim{});
  CHECK(empty.ok());
  CHECK(empty.peak_l1 == 0);
  CHECK(empty.peak_l2 == 0);
  CHECK(empty.bytes_by_tag.empty());
}

TEST_CASE("compute events follow the schedule") {
  const auto& g = testutil::dronet();
  const auto& r = setup(32 * 1024);
  MemSim mem;
  const auto out = execute_schedule(g, r.schedule, r.l2, random_weights(g, 8), testutil::random_input(8), mem);
  std::vector<std::pair<std::string, int>> seen, expected;
  for (const auto& e : out.trace.events)
    if (e.kind == TraceEvent::Kind::Compute && e.tile >= 0) seen.emplace_back(e.node, e.tile);
  for (const auto& p : r.schedule.plans)
    for (const auto& s : p.steps)
      if (s.kind == Step::Kind::Compute) expected.emplace_back(p.node, s.compute.tile);
  CHECK(seen == expected);
  int64_t macs = 0;
  for (const auto& e : out.trace.events) macs += e.macs;
  CHECK(macs == mac_count(g).total);
}

TEST_CASE("determinism") {
  const auto& g = testutil::dronet();
  const auto& r = setup(kDefaultL1Budget);
  const auto w = random_weights(g, 9);
  const auto in = testutil::random_input(9);
  MemSim m1, m2;
  const auto a = execute_schedule(g, r.schedule, r.l2, w, in, m1);
  const auto b = execute_schedule(g, r.schedule, r.l2, w, in, m2);
  CHECK(a.trace == b.trace);
  std::ostringstream ca, cb;
  a.trace.write_csv(ca);
  b.trace.write_csv(cb);
  CHECK(ca.str() == cb.str());
  CHECK(ca.str().rfind("event,node,tile,bytes,macs", 0) == 0);
}

TEST_CASE("mismatches and capacity violations") {
  const auto& g = testutil::dronet();
  const auto& r = setup(kDefaultL1Budget);
  const auto w = zero_weights(g);
  const auto in = testutil::random_input(1);

  auto short_schedule = r.schedule;
  short_schedule.nodes.pop_back();
  short_schedule.plans.pop_back();
  MemSim m1;
  CHECK_THROWS_AS(execute_schedule(g, short_schedule, r.l2, w, in, m1), ExecError);

  MemSim small_l2(kL1Capacity, 300 * 1024);
  CHECK_THROWS_AS(execute_schedule(g, r.schedule, r.l2, w, in, small_l2), MemoryError);

  MemSim m2;
  CHECK_THROWS_AS(execute_schedule(g, r.schedule, r.l2, w, QTensor({1, 100, 100}), m2), ExecError);
}

}
