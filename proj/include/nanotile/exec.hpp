#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanotile/kernels.hpp"
#include "nanotile/l2plan.hpp"
#include "nanotile/net.hpp"
#include "nanotile/tiler.hpp"

namespace nanotile {

enum class MemLevel { L1, L2, L3 };
const char* to_string(MemLevel level);

enum class DmaTag { L3toL2, L2toL1, L1toL2, L2toL3 };
const char* to_string(DmaTag tag);

// Capacity overrun, overlapping allocation, or access outside live memory.
class MemoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ExecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Byte-addressed model of the three memory levels. Every access must fall
// inside a single live allocation. L3 has no capacity limit.
class MemSim {
 public:
  struct Allocation {
    std::string name;
    int64_t addr = 0;
    int64_t size = 0;
  };
  struct AllocRecord {
    MemLevel level = MemLevel::L1;
    bool alloc = true;
    Allocation what;
  };
  struct TransferRecord {
    DmaTag tag = DmaTag::L2toL1;
    int64_t bytes = 0;
  };

  explicit MemSim(int64_t l1_capacity = kL1Capacity, int64_t l2_capacity = kL2Capacity);

  void alloc(MemLevel level, const std::string& name, int64_t addr, int64_t size);
  void free(MemLevel level, const std::string& name);
  bool live(MemLevel level, const std::string& name) const;
  const Allocation& allocation(MemLevel level, const std::string& name) const;

  void write(MemLevel level, int64_t addr, std::span<const uint8_t> bytes);
  void read(MemLevel level, int64_t addr, std::span<uint8_t> out) const;
  void zero(MemLevel level, int64_t addr, int64_t bytes);

  // `count` chunks of `chunk` bytes; strides are per side.
  void dma(DmaTag tag, int64_t src_addr, int64_t src_stride, int64_t dst_addr, int64_t dst_stride,
           int64_t count, int64_t chunk);

  int64_t capacity(MemLevel level) const;
  int64_t used(MemLevel level) const;
  int64_t peak(MemLevel level) const;
  const std::vector<AllocRecord>& alloc_log() const { return alloc_log_; }
  const std::vector<TransferRecord>& transfers() const { return transfers_; }

 private:
  struct Region {
    int64_t capacity = 0;
    std::vector<uint8_t> bytes;
    std::vector<Allocation> live;
    int64_t used = 0;
    int64_t peak = 0;
  };

  Region& region(MemLevel level) { return regions_[static_cast<int>(level)]; }
  const Region& region(MemLevel level) const { return regions_[static_cast<int>(level)]; }
  void check_access(MemLevel level, int64_t addr, int64_t bytes) const;

  std::array<Region, 3> regions_;
  std::vector<AllocRecord> alloc_log_;
  std::vector<TransferRecord> transfers_;
};

struct TraceEvent {
  enum class Kind { Compute, Dma } kind = Kind::Compute;
  std::string node;
  int tile = -1;  // compute step index within the node; -1 outside tiled nodes
  int64_t macs = 0;
  std::vector<Range> workers;
  DmaTag tag = DmaTag::L2toL1;
  std::string stream;  // input, bypass, weights, bias, output or frame
  int64_t bytes = 0;
  // Compute tile this transfer is hidden under by double buffering, else -1.
  int overlaps = -1;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct TraceLog {
  std::vector<TraceEvent> events;

  void write_csv(std::ostream& os) const;
  friend bool operator==(const TraceLog&, const TraceLog&) = default;
};

struct ExecResult {
  Prediction prediction;
  TraceLog trace;
  // Every tensor as it stood in L2 after its producer finished.
  std::map<std::string, QTensor> activations;
};

// Runs the schedule against `mem`: weights start in L3, activations live in
// L2 at the addresses of `l2`, and every tile moves through L1 by DMA.
ExecResult execute_schedule(const NetworkGraph& graph, const TileSchedule& schedule, const L2AllocPlan& l2,
                            const WeightStore& weights, const QTensor& input, MemSim& mem);

struct AuditReport {
  int64_t peak_l1 = 0;
  int64_t peak_l2 = 0;
  std::map<DmaTag, int64_t> bytes_by_tag;
  std::map<std::string, std::map<std::string, int64_t>> bytes_by_node_stream;  // node -> stream -> bytes
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

// Replays the allocation log and the trace independently of the executor.
AuditReport audit_trace(const TraceLog& trace, const MemSim& mem);

}  // namespace nanotile
