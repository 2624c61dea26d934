#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanotile/net.hpp"

namespace nanotile {

inline constexpr int kClusterCores = 8;
inline constexpr int64_t kL1Capacity = 64 * 1024;
inline constexpr int64_t kDefaultL1Budget = 60 * 1024;

enum class Scheme { Spatial, FeatureWise };
enum class BasicKernel { Bias, Conv, MaxPool, Relu, Add };

const char* to_string(Scheme s);
const char* to_string(BasicKernel k);

struct Range {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  friend bool operator==(const Range&, const Range&) = default;
};

// A graph node as the tiler sees it: one body kernel plus the elementwise
// layers folded into its epilogue. Only cluster nodes are tiled; fully
// connected heads run on the fabric controller straight from L2.
struct NodeKernel {
  std::string name;                 // id of the body layer
  std::vector<std::string> layers;  // graph layers covered, body first
  LayerSpec body;
  std::vector<BasicKernel> prologue;
  BasicKernel kernel = BasicKernel::Conv;
  std::vector<BasicKernel> epilogue;
  bool pool = false;
  bool relu = false;
  std::string input;
  std::string bypass;  // second add operand, empty otherwise
  std::string output;  // tensor id written back to L2

  // Iteration space of the body.
  int W = 0, H = 0, K_in = 0, K_out = 0;
  // Final output written to L2 (after pooling).
  Shape3 output_shape;
};

std::vector<NodeKernel> build_node_kernels(const NetworkGraph& graph);
// Layers that stay on the fabric controller, in graph order.
std::vector<std::string> fabric_layers(const NetworkGraph& graph);

// Input rows, zero halo included, read by a stripe of body output rows.
Range stripe_rows(const NodeKernel& node, Range rows);
// Rows of the node's stored output produced by a stripe of body rows.
Range stored_rows(const NodeKernel& node, Range rows);

// Contiguous near-equal chunks of [0, units) for each worker; trailing
// workers may receive empty ranges.
std::vector<Range> split_workers(int units, int workers = kClusterCores);
// Fraction of worker-slots doing useful work: units / (workers * ceil(units / workers)).
double worker_efficiency(int units, int workers = kClusterCores);

enum class Stream { Input, Bypass, Weights, Bias, Output };
const char* to_string(Stream s);

// 2D DMA between L2 and L1: `count` chunks of `chunk` bytes, `stride` bytes
// apart in L2 starting at `offset` within the named L2 buffer. The L1 side is
// always packed.
struct Transfer {
  bool to_l1 = true;
  Stream stream = Stream::Input;
  std::string buffer;  // tensor id, or "w:<layer>" for weights and biases
  int64_t offset = 0;
  int64_t count = 0;
  int64_t chunk = 0;
  int64_t stride = 0;
  int slot = 0;  // double-buffer index in L1
  // L1 placement: rows of zero halo preceding the payload, per chunk.
  int64_t halo_before = 0;
  int64_t halo_after = 0;

  int64_t bytes() const { return count * chunk; }
};

struct ComputeStep {
  int tile = 0;  // running index of compute steps within the plan
  int ih = 0, iko = 0, iki = 0;
  Range rows;    // body output rows
  Range k_out;   // output channels
  Range k_in;    // input channels
  Range in_rows;  // global input rows the stripe spans, halo included
  bool first_k_in = false;
  bool last_k_in = false;
  int in_slot = 0, w_slot = 0, out_slot = 0;
  std::vector<Range> workers;  // over W_out (spatial) or the tile's k_out (feature-wise)
  int64_t macs = 0;
};

struct Step {
  enum class Kind { Transfer, Compute } kind = Kind::Transfer;
  Transfer transfer;
  ComputeStep compute;
};

struct TileBuffers {
  int64_t in = 0;        // per slot
  int64_t bypass = 0;    // per slot
  int64_t weights = 0;   // per slot, bias included
  int64_t out = 0;       // per slot
  int64_t acc = 0;       // 32-bit partial sums, only when K_in is tiled
  int64_t prepool = 0;   // body output ahead of the pooling epilogue
  bool double_in = false;
  bool double_w = false;
  bool double_out = false;

  int64_t footprint() const;
};

struct TilePlan {
  std::string node;
  Scheme scheme = Scheme::Spatial;
  int h_t = 0, kin_t = 0, kout_t = 0;  // tile extents (last tile may be smaller)
  int n_h = 0, n_kin = 0, n_kout = 0;
  TileBuffers buffers;
  double est_cycles = 0.0;
  std::vector<Step> steps;  // filled by plan_network / emit_steps

  int tiles() const { return n_h * n_kin * n_kout; }
  int64_t footprint() const { return buffers.footprint(); }
};

class TilingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lays out a plan for given extents; returns nothing when the extents violate
// the scheme's shape rules. Footprint is filled, cost is not.
std::optional<TilePlan> make_plan(const NodeKernel& node, Scheme scheme, int h_t, int kin_t, int kout_t);

using PlanCost = std::function<double(const NodeKernel&, const TilePlan&)>;

// Every feasible plan for the scheme, costed. Throws TilingError
// ("infeasible") when even the smallest tile exceeds the budget.
std::vector<TilePlan> enumerate_tilings(const NodeKernel& node, int64_t l1_budget, Scheme scheme,
                                        const PlanCost& cost);

// Cheapest plan; ties go to fewer tiles, then the larger H extent, then the
// spatial scheme. Throws TilingError naming the node when nothing fits.
TilePlan plan_layer(const NodeKernel& node, int64_t l1_budget, const PlanCost& cost);

// Transfer/compute sequence for a plan, following the loop nest
// h -> k_out -> k_in; a tile is fetched only when it differs from the one
// already resident in its slot.
std::vector<Step> emit_steps(const NodeKernel& node, const TilePlan& plan);

struct TileSchedule {
  int64_t l1_budget = 0;
  std::vector<NodeKernel> nodes;
  std::vector<TilePlan> plans;  // parallel to nodes
  std::vector<std::string> fabric;

  const TilePlan& plan(const std::string& node) const;
};

TileSchedule plan_network(const NetworkGraph& graph, int64_t l1_budget, const PlanCost& cost);

struct StreamTotals {
  int64_t in = 0, bypass = 0, weights = 0, out = 0;
  int64_t total() const { return in + bypass + weights + out; }
};
StreamTotals transfer_totals(const TilePlan& plan);

void write_schedule(const TileSchedule& schedule, std::ostream& os, bool csv);

}  // namespace nanotile
