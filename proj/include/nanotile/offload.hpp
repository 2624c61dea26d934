#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace nanotile {

enum class ProtocolStep { WakeInterrupt, KernelFetch, CameraConfig, FrameDma, WeightLoad, Compute, ResultSpi, AckInterrupt };
enum class Actor { Host, Accelerator, Udma };

const char* to_string(ProtocolStep s);
const char* to_string(Actor a);

// Model time is kept in integer nanoseconds so periods compare exactly.
using Nanos = int64_t;
Nanos to_nanos(double seconds);
double to_seconds(Nanos t);

struct ProtocolEvent {
  int frame = -1;  // -1 for once-per-mission steps
  ProtocolStep step = ProtocolStep::WakeInterrupt;
  Actor actor = Actor::Host;
  Nanos start = 0;
  Nanos end = 0;
  int buffer = -1;  // frame buffer written or read, -1 if none
};

struct MissionTimings {
  double frame_dma_s = 0.005;  // camera frame into L2
  double compute_s = 0.1565;   // inference, weight streaming included
  double result_s = 0.0001;    // SPI transfer of the two outputs
  double setup_s = 0.01;       // kernel fetch from flash
  double config_s = 0.0;       // camera configuration over I2C
  std::string kernel = "dronet";
};

struct Timeline {
  std::vector<ProtocolEvent> events;
  int frames = 0;

  const ProtocolEvent& find(ProtocolStep step, int frame) const;
};

Timeline run_mission(int n_frames, const MissionTimings& timings);

// Causal order, once-per-mission steps, and frame buffer usage. Empty when valid.
std::vector<std::string> validate_timeline(const Timeline& timeline);

// Interval between the last two acknowledgements; zero with fewer than two frames.
Nanos steady_state_period(const Timeline& timeline);
// Frame transfers that run while an earlier frame is being processed.
int overlap_count(const Timeline& timeline);
// Most frame buffers held at once.
int max_live_buffers(const Timeline& timeline);

void write_timeline_csv(const Timeline& timeline, std::ostream& os);

}  // namespace nanotile
