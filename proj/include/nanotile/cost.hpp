#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanotile/l2plan.hpp"
#include "nanotile/net.hpp"
#include "nanotile/tiler.hpp"

namespace nanotile {

struct OperatingPoint {
  double vdd = 1.0;
  double f_fc_mhz = 50.0;
  double f_cl_mhz = 100.0;

  friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

struct CalibParams {
  // Fitted.
  double eta_kxk = 0.45;             // MAC/cycle/core on k x k convolutions
  double eta_1x1 = 0.11;             // MAC/cycle/core on pointwise convolutions
  double elem_cycles = 0.8;          // cluster cycles per element of an elementwise pass
  double channel_cycles = 240.0;     // cluster cycles per channel of an elementwise pass
  double l3_bytes_per_cycle = 0.62;  // L3 -> L2, per fabric controller cycle
  double dma_bytes_per_cycle = 8.0;  // L2 <-> L1, per cluster cycle

  // Fixed.
  int cores = kClusterCores;
  double eta_peak = 0.64;          // best per-core rate measured on a 3x3 layer
  double tile_overhead = 300.0;    // cluster cycles per tile iteration
  double l3_overlap = 0.0;         // cluster is clock-gated during L3 transfers
  double fc_macs_per_cycle = 1.0;  // fully connected heads on the fabric controller
  double l3_max_bytes_per_s = 333e6;

  static constexpr int kFitted = 6;

  bool calibrated() const;
};

struct PowerParams {
  double static_mw = 3.0;       // at 1.0 V, scales with V^3
  double k_dyn = 0.36;          // mW per V^2 per MHz of active cluster clock
  double fc_activity = 0.1;     // fabric controller switching relative to the cluster
  double dcdc_loss = 0.007;     // converter loss grows as dcdc_loss * P^2 (1/mW)
  double camera_mw = 4.5;
  double dram_mw = 8.0;

  static constexpr int kFitted = 2;

  // Power drawn ahead of the DC/DC converter.
  double soc_mw(const OperatingPoint& op, double cluster_duty) const;
};

struct LayerCost {
  std::string layer;
  std::string node;
  std::string row;
  bool fabric = false;           // runs on the fabric controller
  int64_t macs = 0;
  double compute = 0.0;          // cluster cycles, or FC cycles when fabric
  double dma_total = 0.0;        // L2 <-> L1 cycles if nothing overlapped
  double dma_exposed = 0.0;      // non-overlapped L2 <-> L1 cycles
  double l3 = 0.0;               // L3 -> L2 fabric controller cycles
  double l3_exposed = 0.0;

  double exec_seconds(const OperatingPoint& op) const;
  double l3_seconds(const OperatingPoint& op) const;
};

// Decomposition of a layer's cycle count into terms linear in the fitted
// efficiency parameters, shared by the cost model and the fit.
struct LayerFeatures {
  double kxk = 0.0;       // MAC / (cores * worker efficiency) on k x k bodies
  double pointwise = 0.0;  // same for 1x1 bodies
  double elements = 0.0;
  double channels = 0.0;
  double fixed = 0.0;     // tile iterations, each costing the per-tile overhead
  double dma_bytes = 0.0;  // exposed L2 <-> L1 bytes
  double dma_total_bytes = 0.0;
};

std::vector<std::pair<std::string, LayerFeatures>> node_features(const NodeKernel& node, const TilePlan& plan,
                                                                 int cores = kClusterCores);
double compute_cycles(const LayerFeatures& f, const CalibParams& c);

std::vector<LayerCost> layer_cycles(const NodeKernel& node, const TilePlan& plan, const CalibParams& calib);
LayerCost fabric_layer_cycles(const LayerSpec& layer, const CalibParams& calib);

PlanCost plan_cost(const CalibParams& calib);

struct CycleBreakdown {
  double l3 = 0.0;       // exposed L3 -> L2 cycles (fabric controller)
  double dma = 0.0;      // exposed L2 <-> L1 cycles (cluster)
  double compute = 0.0;  // cluster compute plus fabric-side head cycles
  double total() const { return l3 + dma + compute; }
};

struct CostReport {
  OperatingPoint op;
  std::vector<LayerCost> layers;
  CycleBreakdown cycles;
  int64_t macs = 0;
  double cluster_seconds = 0.0;
  double fabric_seconds = 0.0;
  double frame_seconds = 0.0;
  double fps = 0.0;
  double cluster_duty = 0.0;
  double power_mw = 0.0;        // SoC, including converter losses
  double board_power_mw = 0.0;  // plus camera and DRAM
  double energy_mj = 0.0;       // SoC energy per frame
  double l3_time_share = 0.0;

  double mac_per_cycle() const { return static_cast<double>(macs) / cycles.total(); }
  // L3 cycles as a share of all cycles, mixing the two clock domains.
  double l3_cycle_share() const { return cycles.l3 / cycles.total(); }
};

CostReport frame_report(const NetworkGraph& graph, const TileSchedule& schedule, const OperatingPoint& op,
                        const CalibParams& calib, const PowerParams& power);

// ---- Calibration ----------------------------------------------------------

struct LayerTarget {
  std::string row;
  double power_mw = 0.0;
  double exec_ms = 0.0;
  std::optional<double> l3_ms;
};

struct PowerTarget {
  OperatingPoint op;
  double power_mw = 0.0;
  double fps = 0.0;
};

struct Targets {
  OperatingPoint profile_point{1.0, 50.0, 100.0};
  std::vector<LayerTarget> layers;
  double l3_cycles = 0.0;
  double dma_cycles = 0.0;
  double compute_cycles = 0.0;
  double total_cycles = 0.0;
  std::vector<PowerTarget> power;
};

Targets load_targets(const std::filesystem::path& dir);

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RowResidual {
  std::string label;
  double target = 0.0;
  double model = 0.0;
  double rel_error() const { return model / target - 1.0; }
};

struct Calibration {
  CalibParams calib;
  PowerParams power;
  TileSchedule schedule;
  int iterations = 0;
  double minimax_error = 0.0;  // worst relative row error of the fit
  std::vector<RowResidual> layer_rows;      // exec time per profile row, ms
  std::vector<RowResidual> breakdown_rows;  // cycles
  std::vector<RowResidual> power_rows;      // mW
};

// Groups graph layers into consecutive profile rows; returns, per row, the
// layers it covers. Throws CalibrationError when labels disagree.
std::vector<std::vector<std::string>> profile_rows(const NetworkGraph& graph, const Targets& targets);

// Plans, fits, and replans until the schedule stops changing.
Calibration calibrate(const NetworkGraph& graph, const Targets& targets, int64_t l1_budget = kDefaultL1Budget);

// ---- Sweep ----------------------------------------------------------------

struct SweepRow {
  OperatingPoint op;
  double fps = 0.0;
  double power_mw = 0.0;
  double energy_mj = 0.0;
};

// Frequency grid {50..250} MHz for both domains; at 1.0 V only up to 175 MHz.
std::vector<OperatingPoint> default_grid();
std::vector<SweepRow> sweep(const NetworkGraph& graph, const TileSchedule& schedule,
                            const std::vector<OperatingPoint>& grid, const CalibParams& calib,
                            const PowerParams& power);
const SweepRow& min_energy(const std::vector<SweepRow>& rows);

void write_report(const CostReport& report, std::ostream& os, bool csv);
void write_sweep(const std::vector<SweepRow>& rows, std::ostream& os, bool csv);
void write_calibration(const Calibration& cal, std::ostream& os);

}  // namespace nanotile
