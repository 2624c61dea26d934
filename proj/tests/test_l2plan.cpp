#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "common.hpp"
#include "nanotile/l2plan.hpp"

using namespace nanotile;

namespace {

bool has_kind(const std::vector<Violation>& v, Violation::Kind k) {
  return std::any_of(v.begin(), v.end(), [k](const Violation& x) { return x.kind == k; });
}

NetworkGraph single_conv() {
  LayerSpec c;
  c.id = "conv";
  c.kind = LayerKind::Conv;
  c.in_channels = 3;
  c.out_channels = 5;
  c.kh = c.kw = 3;
  c.stride = 1;
  c.h_in = c.w_in = c.h_out = c.w_out = 9;
  c.inputs = {NetworkGraph::kInputTensor};
  c.row = "conv";
  return NetworkGraph({3, 9, 9}, {c});
}

}  // namespace

TEST_SUITE("l2plan") {

TEST_CASE("DroNet two-stack and single-stack peaks") {
  const auto& g = testutil::dronet();
  const auto sizes = l2_sizes(g);
  const auto two = plan_two_stack(g, sizes);
  const int64_t single = plan_single_stack(g, sizes);
  MESSAGE("two-stack peak ", two.peak(), " B, single-stack peak ", single, " B");
  CHECK(two.peak() >= 330000);
  CHECK(two.peak() <= 410000);
  CHECK(two.headroom() == kL2Capacity - two.peak());
  CHECK(two.headroom() >= 100000);
  CHECK(two.footprint() <= kL2Capacity);
  CHECK(single >= 600000);
  CHECK(single <= 730000);
  CHECK(single > kL2Capacity);
  CHECK(single >= two.peak());
  CHECK(validate_plan(two, g).empty());
  // One stack may hold everything; only the footprint check objects.
  const auto one = plan_single_stack_plan(g, sizes);
  const auto v = validate_plan(one, g);
  CHECK(has_kind(v, Violation::Kind::Capacity));
  CHECK(std::all_of(v.begin(), v.end(), [](const Violation& x) { return x.kind == Violation::Kind::Capacity; }));
}

TEST_CASE("sizes are 4-byte aligned element counts") {
  const auto& g = testutil::dronet();
  const auto s = l2_sizes(g);
  CHECK(s.at("conv_1") == 32 * 100 * 100 * 2);
  CHECK(s.at("pool_1") == 32 * 50 * 50 * 2);
  CHECK(s.at("conv_6") == 64 * 13 * 13 * 2);
  CHECK(s.at("w:conv_1") == (32 * 25 + 32) * 2);
  CHECK(s.at("w:fully_1") == (6272 + 1) * 2 + 2);
  for (const auto& [id, b] : s.bytes) CHECK(b % 4 == 0);
}

TEST_CASE("single layer graph") {
  const auto g = single_conv();
  const auto s = l2_sizes(g);
  const auto p = plan_two_stack(g, s);
  CHECK(p.footprint() == s.at("input") + s.at("conv") + s.at("w:conv"));
  CHECK(p.peak() == s.at("conv") + s.at("w:conv"));
  CHECK(validate_plan(p, g).empty());
}

TEST_CASE("empty graph") {
  const NetworkGraph g({1, 4, 4}, {});
  CHECK(plan_single_stack(g, l2_sizes(g)) == 0);
  CHECK(plan_two_stack(g, l2_sizes(g)).peak() == 0);
}

TEST_CASE("occupancy and lifetimes recomputed from events") {
  const auto& g = testutil::dronet();
  const auto p = plan_two_stack(g, l2_sizes(g));
  std::vector<int64_t> used(p.stacks, 0), peak(p.stacks, 0);
  std::map<std::string, int> alloc_step, free_step;
  size_t ev = 0;
  for (int i = 0; i < static_cast<int>(p.steps.size()); ++i) {
    for (; ev < p.events.size() && p.events[ev].step == i && p.events[ev].action == AllocEvent::Action::Alloc; ++ev) {
      used[p.events[ev].stack] += p.events[ev].size;
      alloc_step[p.events[ev].buffer] = i;
    }
    for (int s = 0; s < p.stacks; ++s) peak[s] = std::max(peak[s], used[s]);
    CHECK(p.occupancy[i] == used);
    for (; ev < p.events.size() && p.events[ev].step == i; ++ev) {
      used[p.events[ev].stack] -= p.events[ev].size;
      free_step[p.events[ev].buffer] = i;
    }
  }
  CHECK(ev == p.events.size());
  CHECK(peak == p.stack_peak);
  for (int s = 0; s < p.stacks; ++s) CHECK(used[s] == 0);

  for (int i = 0; i < static_cast<int>(p.steps.size()); ++i) {
    const auto& l = g.layer(p.steps[i].node);
    if (!l.has_weights()) continue;
    CHECK(alloc_step.at(weight_buffer(l.id)) == i);
    CHECK(free_step.at(weight_buffer(l.id)) == i);
  }
  // The fused add writes in place over its bypass operand.
  CHECK(p.buffer_of.at("relu_2") == p.buffer_of.at("conv_4"));
}

TEST_CASE("validator reports LIFO and liveness violations") {
  const auto& g = testutil::dronet();
  const auto p = plan_two_stack(g, l2_sizes(g));

  // Two frees on one stack in the same step, swapped.
  auto lifo = p;
  bool swapped = false;
  for (size_t i = 0; i + 1 < lifo.events.size() && !swapped; ++i) {
    auto& a = lifo.events[i];
    auto& b = lifo.events[i + 1];
    if (a.action == AllocEvent::Action::Free && b.action == AllocEvent::Action::Free && a.step == b.step &&
        a.stack == b.stack) {
      std::swap(a, b);
      swapped = true;
    }
  }
  REQUIRE(swapped);
  CHECK(has_kind(validate_plan(lifo, g), Violation::Kind::Lifo));

  // The bypass branch freed right after it is produced, before the add reads it.
  auto early = p;
  const auto it = std::find_if(early.events.begin(), early.events.end(), [](const AllocEvent& e) {
    return e.buffer == "conv_4" && e.action == AllocEvent::Action::Free;
  });
  REQUIRE(it != early.events.end());
  AllocEvent f = *it;
  early.events.erase(it);
  f.step = static_cast<int>(std::find_if(p.steps.begin(), p.steps.end(),
                                          [](const L2Step& s) { return s.node == "conv_4"; }) -
                             p.steps.begin());
  auto pos = std::find_if(early.events.begin(), early.events.end(), [&](const AllocEvent& e) { return e.step > f.step; });
  early.events.insert(pos, f);
  CHECK(has_kind(validate_plan(early, g), Violation::Kind::Liveness));
}

TEST_CASE("determinism and dump") {
  const auto& g = testutil::dronet();
  const auto a = plan_two_stack(g, l2_sizes(g));
  const auto b = plan_two_stack(g, l2_sizes(g));
  CHECK(a == b);
  std::ostringstream text, csv;
  write_l2_plan(a, text, false);
  write_l2_plan(a, csv, true);
  CHECK(text.str().find("total peak " + std::to_string(a.peak()) + " B") != std::string::npos);
  CHECK(text.str().find("L2 headroom") != std::string::npos);
  CHECK(csv.str().rfind("step,node,stack0_bytes", 0) == 0);
}

}
