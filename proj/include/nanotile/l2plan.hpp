#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "nanotile/net.hpp"

namespace nanotile {

inline constexpr int64_t kL2Capacity = 512 * 1024;

// Byte sizes of everything that lives in L2, rounded up to 4-byte alignment.
// Weight buffers are keyed "w:<layer>" and hold the weights followed by the biases.
struct L2Sizes {
  std::map<std::string, int64_t> bytes;

  int64_t at(const std::string& id) const;
};

L2Sizes l2_sizes(const NetworkGraph& graph);
inline std::string weight_buffer(const std::string& layer) { return "w:" + layer; }

// One execution step as the L2 planner sees it: a node kernel on the cluster
// or a fully connected head on the fabric controller.
struct L2Step {
  std::string node;
  std::vector<std::string> reads;  // tensor ids
  std::string writes;              // tensor id, empty for scalar heads
  std::string alias;               // tensor whose buffer `writes` reuses, empty if fresh
  std::string weights;             // weight buffer id, empty if none

  friend bool operator==(const L2Step&, const L2Step&) = default;
};

std::vector<L2Step> l2_steps(const NetworkGraph& graph);

struct AllocEvent {
  enum class Action { Alloc, Free };
  std::string buffer;
  int stack = 0;
  Action action = Action::Alloc;
  int64_t size = 0;
  int step = 0;
  int64_t offset = 0;  // within its stack

  friend bool operator==(const AllocEvent&, const AllocEvent&) = default;
};

struct L2AllocPlan {
  std::vector<L2Step> steps;
  std::vector<AllocEvent> events;
  // Tensor id -> L2 buffer id holding it (identity unless computed in place).
  std::map<std::string, std::string> buffer_of;
  std::string frame;        // graph input, kept outside the stacks
  int64_t frame_bytes = 0;
  int stacks = 2;
  // Occupancy of each stack at each step's compute point.
  std::vector<std::vector<int64_t>> occupancy;  // [step][stack]
  std::vector<int64_t> stack_peak;

  // Sum of stack peaks.
  int64_t peak() const;
  // Everything resident in L2: frame buffer plus both stack regions.
  int64_t footprint() const { return frame_bytes + peak(); }
  // L2 left over once both stacks reach their peaks.
  int64_t headroom(int64_t capacity = kL2Capacity) const { return capacity - peak(); }
  // L2 address of a stack's base; stacks sit back to back after the frame.
  int64_t stack_base(int stack) const;

  friend bool operator==(const L2AllocPlan&, const L2AllocPlan&) = default;
};

class L2PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Replays the lifetime rules with a given stack per allocation, in order.
L2AllocPlan build_plan(const NetworkGraph& graph, const L2Sizes& sizes, const std::vector<int>& assignment,
                       int stacks);

L2AllocPlan plan_two_stack(const NetworkGraph& graph, const L2Sizes& sizes);
L2AllocPlan plan_single_stack_plan(const NetworkGraph& graph, const L2Sizes& sizes);
int64_t plan_single_stack(const NetworkGraph& graph, const L2Sizes& sizes);

struct Violation {
  enum class Kind { Lifo, Liveness, WeightLifetime, Accounting, Capacity };
  Kind kind;
  std::string message;
};

std::vector<Violation> validate_plan(const L2AllocPlan& plan, const NetworkGraph& graph,
                                     int64_t capacity = kL2Capacity);

void write_l2_plan(const L2AllocPlan& plan, std::ostream& os, bool csv);

}  // namespace nanotile
