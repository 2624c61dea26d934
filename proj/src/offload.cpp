#include "nanotile/offload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace nanotile {

const char* to_string(ProtocolStep s) {
  switch (s) {
    case ProtocolStep::WakeInterrupt: return "wake_interrupt";
    case ProtocolStep::KernelFetch: return "kernel_fetch";
    case ProtocolStep::CameraConfig: return "camera_config";
    case ProtocolStep::FrameDma: return "frame_dma";
    case ProtocolStep::WeightLoad: return "weight_load";
    case ProtocolStep::Compute: return "compute";
    case ProtocolStep::ResultSpi: return "result_spi";
    case ProtocolStep::AckInterrupt: return "ack_interrupt";
  }
  return "?";
}

const char* to_string(Actor a) {
  switch (a) {
    case Actor::Host: return "host";
    case Actor::Accelerator: return "accelerator";
    case Actor::Udma: return "udma";
  }
  return "?";
}

Nanos to_nanos(double seconds) { return static_cast<Nanos>(std::llround(seconds * 1e9)); }
double to_seconds(Nanos t) { return static_cast<double>(t) * 1e-9; }

const ProtocolEvent& Timeline::find(ProtocolStep step, int frame) const {
  for (const auto& e : events)
    if (e.step == step && e.frame == frame) return e;
  throw std::out_of_range(std::string("no ") + to_string(step) + " event for frame " + std::to_string(frame));
}

Timeline run_mission(int n_frames, const MissionTimings& t) {
  if (n_frames < 1) throw std::invalid_argument("mission needs at least one frame");
  if (!(t.frame_dma_s > 0 && t.compute_s > 0 && t.result_s > 0 && t.setup_s > 0 && t.config_s >= 0))
    throw std::invalid_argument("mission timings must be positive");
  const Nanos dma = to_nanos(t.frame_dma_s), compute = to_nanos(t.compute_s), result = to_nanos(t.result_s);
  if (dma <= 0 || compute <= 0 || result <= 0) throw std::invalid_argument("mission timings below 1 ns");

  Timeline tl;
  tl.frames = n_frames;
  auto add = [&](int frame, ProtocolStep step, Actor actor, Nanos start, Nanos end, int buffer = -1) {
    tl.events.push_back({frame, step, actor, start, end, buffer});
    return end;
  };

  Nanos now = add(-1, ProtocolStep::WakeInterrupt, Actor::Host, 0, 0);
  now = add(-1, ProtocolStep::KernelFetch, Actor::Accelerator, now, now + to_nanos(t.setup_s));
  const Nanos ready = add(-1, ProtocolStep::CameraConfig, Actor::Accelerator, now, now + to_nanos(t.config_s));

  std::vector<Nanos> dma_end(n_frames), compute_end(n_frames), result_end(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    // Buffer k % 2 is free once frame k - 2 has been consumed.
    Nanos dma_start = ready;
    if (k >= 1) dma_start = std::max(dma_start, dma_end[k - 1]);
    if (k >= 2) dma_start = std::max(dma_start, compute_end[k - 2]);
    dma_end[k] = add(k, ProtocolStep::FrameDma, Actor::Udma, dma_start, dma_start + dma, k % 2);

    Nanos start = dma_end[k];
    if (k >= 1) start = std::max(start, result_end[k - 1]);
    add(k, ProtocolStep::WeightLoad, Actor::Accelerator, start, start);
    compute_end[k] = add(k, ProtocolStep::Compute, Actor::Accelerator, start, start + compute, k % 2);
    result_end[k] = add(k, ProtocolStep::ResultSpi, Actor::Accelerator, compute_end[k], compute_end[k] + result);
    add(k, ProtocolStep::AckInterrupt, Actor::Accelerator, result_end[k], result_end[k]);
  }
  return tl;
}

std::vector<std::string> validate_timeline(const Timeline& tl) {
  std::vector<std::string> bad;
  std::map<std::pair<int, ProtocolStep>, std::vector<const ProtocolEvent*>> by_key;
  for (const auto& e : tl.events) {
    if (e.end < e.start || e.start < 0)
      bad.push_back(std::string(to_string(e.step)) + " of frame " + std::to_string(e.frame) + " has bad times");
    if (e.frame < -1 || e.frame >= tl.frames) bad.push_back("event for unknown frame " + std::to_string(e.frame));
    by_key[{e.frame, e.step}].push_back(&e);
  }

  auto one = [&](int frame, ProtocolStep step) -> const ProtocolEvent* {
    auto it = by_key.find({frame, step});
    const std::size_t n = it == by_key.end() ? 0 : it->second.size();
    if (n != 1) {
      bad.push_back(std::string(to_string(step)) + " occurs " + std::to_string(n) + " times for frame " +
                    std::to_string(frame));
      return nullptr;
    }
    return it->second.front();
  };
  auto before = [&](const ProtocolEvent* a, const ProtocolEvent* b) {
    if (a && b && a->end > b->start)
      bad.push_back(std::string(to_string(a->step)) + " of frame " + std::to_string(a->frame) + " ends after " +
                    to_string(b->step) + " of frame " + std::to_string(b->frame) + " starts");
  };

  for (auto step : {ProtocolStep::WakeInterrupt, ProtocolStep::KernelFetch, ProtocolStep::CameraConfig})
    for (int f = 0; f < tl.frames; ++f)
      if (by_key.count({f, step})) bad.push_back(std::string(to_string(step)) + " repeated for frame " + std::to_string(f));
  const auto* wake = one(-1, ProtocolStep::WakeInterrupt);
  const auto* fetch = one(-1, ProtocolStep::KernelFetch);
  const auto* config = one(-1, ProtocolStep::CameraConfig);
  before(wake, fetch);
  before(fetch, config);

  const ProtocolEvent* prev_result = nullptr;
  for (int f = 0; f < tl.frames; ++f) {
    const auto* dma = one(f, ProtocolStep::FrameDma);
    const auto* weights = one(f, ProtocolStep::WeightLoad);
    const auto* compute = one(f, ProtocolStep::Compute);
    const auto* result = one(f, ProtocolStep::ResultSpi);
    const auto* ack = one(f, ProtocolStep::AckInterrupt);
    before(config, dma);
    before(config, weights);
    before(dma, compute);
    before(weights, compute);
    before(compute, result);
    before(result, ack);
    // One accelerator: the previous frame's results leave before this compute.
    before(prev_result, compute);
    prev_result = result;
    if (dma && compute && dma->buffer != compute->buffer)
      bad.push_back("frame " + std::to_string(f) + " computes on a buffer it did not fill");
  }

  // A buffer is held from the start of its fill until its frame's compute ends.
  struct Hold {
    int frame, buffer;
    Nanos start, end;
  };
  std::vector<Hold> holds;
  for (int f = 0; f < tl.frames; ++f) {
    auto d = by_key.find({f, ProtocolStep::FrameDma});
    auto c = by_key.find({f, ProtocolStep::Compute});
    if (d == by_key.end() || c == by_key.end() || d->second.size() != 1 || c->second.size() != 1) continue;
    holds.push_back({f, d->second.front()->buffer, d->second.front()->start, c->second.front()->end});
  }
  for (std::size_t i = 0; i < holds.size(); ++i)
    for (std::size_t j = i + 1; j < holds.size(); ++j)
      if (holds[i].buffer == holds[j].buffer && holds[i].start < holds[j].end && holds[j].start < holds[i].end)
        bad.push_back("frames " + std::to_string(holds[i].frame) + " and " + std::to_string(holds[j].frame) +
                      " share buffer " + std::to_string(holds[i].buffer));
  if (max_live_buffers(tl) > 2) bad.push_back("more than two frame buffers live");
  return bad;
}

Nanos steady_state_period(const Timeline& tl) {
  if (tl.frames < 2) return 0;
  return tl.find(ProtocolStep::AckInterrupt, tl.frames - 1).end - tl.find(ProtocolStep::AckInterrupt, tl.frames - 2).end;
}

int overlap_count(const Timeline& tl) {
  int n = 0;
  for (int k = 1; k < tl.frames; ++k) {
    const auto& dma = tl.find(ProtocolStep::FrameDma, k);
    for (int j = 0; j < k; ++j) {
      const Nanos busy_start = tl.find(ProtocolStep::Compute, j).start;
      const Nanos busy_end = tl.find(ProtocolStep::ResultSpi, j).end;
      if (dma.start < busy_end && busy_start < dma.end) {
        ++n;
        break;
      }
    }
  }
  return n;
}

int max_live_buffers(const Timeline& tl) {
  // +1 at fill start, -1 at compute end; releases sort before acquisitions at equal times.
  std::vector<std::pair<Nanos, int>> edges;
  for (const auto& e : tl.events) {
    if (e.step == ProtocolStep::FrameDma) edges.emplace_back(e.start, +1);
    if (e.step == ProtocolStep::Compute) edges.emplace_back(e.end, -1);
  }
  std::sort(edges.begin(), edges.end());
  int live = 0, most = 0;
  for (const auto& [t, d] : edges) most = std::max(most, live += d);
  return most;
}

void write_timeline_csv(const Timeline& tl, std::ostream& os) {
  os << "frame,step,actor,t_start,t_end\n";
  char buf[64];
  for (const auto& e : tl.events) {
    os << e.frame << ',' << to_string(e.step) << ',' << to_string(e.actor) << ',';
    std::snprintf(buf, sizeof buf, "%.9f,%.9f", to_seconds(e.start), to_seconds(e.end));
    os << buf << '\n';
  }
}

}  // namespace nanotile
