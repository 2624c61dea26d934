#pragma once

#include <map>
#include <random>

#include "nanotile/cost.hpp"
#include "nanotile/csv.hpp"
#include "nanotile/kernels.hpp"
#include "nanotile/net.hpp"
#include "nanotile/tiler.hpp"

namespace testutil {

inline const nanotile::NetworkGraph& dronet() {
  static const auto g = nanotile::build_dronet();
  return g;
}

inline const nanotile::Calibration& calibration() {
  static const auto cal = nanotile::calibrate(dronet(), nanotile::load_targets(nanotile::data_dir()));
  return cal;
}

// Uniform pixels in [0, 1], as a camera frame would arrive.
inline nanotile::QTensor random_input(uint64_t seed, nanotile::Shape3 shape = {1, 200, 200}) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nanotile::QTensor t(shape);
  for (auto& v : t.data()) v = nanotile::quantize(u(rng));
  return t;
}

// L1 bytes a plan's step list actually lands, counted per stream and slot
// from the transfers themselves; partial sums and the pre-pool map are sized
// from the compute steps.
inline int64_t walk_l1_bytes(const nanotile::NodeKernel& node, const nanotile::TilePlan& plan) {
  using namespace nanotile;
  std::map<std::pair<Stream, int>, int64_t> slot_bytes;
  int64_t acc = 0, prepool = 0, weight_tile = 0;
  for (const auto& s : plan.steps) {
    if (s.kind == Step::Kind::Transfer) {
      const auto& t = s.transfer;
      const int64_t landed = t.count * (t.halo_before + t.chunk + t.halo_after);
      if (t.stream == Stream::Weights) {
        weight_tile = landed;
      } else if (t.stream == Stream::Bias) {
        // Biases land right behind their weight tile.
        auto& b = slot_bytes[{Stream::Weights, t.slot}];
        b = std::max(b, weight_tile + landed);
      } else {
        auto& b = slot_bytes[{t.stream, t.slot}];
        b = std::max(b, landed);
      }
    } else {
      const auto& c = s.compute;
      const int64_t elems = int64_t{c.k_out.size()} * c.rows.size() * node.W;
      if (plan.n_kin > 1) acc = std::max(acc, elems * 4);
      if (node.pool) prepool = std::max(prepool, elems * 2);
    }
  }
  int64_t total = acc + prepool;
  for (const auto& [key, bytes] : slot_bytes) total += bytes;
  return total;
}

}  // namespace testutil
