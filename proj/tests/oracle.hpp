#pragma once

// Reference interpreter for fixed-point DroNet: plain int64 loops over the
// layer list, written without the library's kernels or tensor helpers.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nanotile/net.hpp"

namespace oracle {

struct Map {
  int k = 0, h = 0, w = 0;
  std::vector<int64_t> v;  // raw Q4.12 values, [k][h][w]

  int64_t& at(int c, int y, int x) { return v[(static_cast<size_t>(c) * h + y) * w + x]; }
  int64_t at(int c, int y, int x) const { return v[(static_cast<size_t>(c) * h + y) * w + x]; }
};

inline int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int64_t clamp16(int64_t x) { return std::clamp<int64_t>(x, -32768, 32767); }

// Total same-zero padding along one axis, the smaller half before.
inline int pad_before(int in, int out, int k, int s) {
  const int total = std::max((out - 1) * s + k - in, 0);
  return total / 2;
}

inline Map conv(const Map& in, const nanotile::LayerWeights& lw, int stride, int out_h, int out_w, bool relu) {
  Map out{lw.out_channels, out_h, out_w, std::vector<int64_t>(size_t(lw.out_channels) * out_h * out_w)};
  const int pt = pad_before(in.h, out_h, lw.kh, stride), pl = pad_before(in.w, out_w, lw.kw, stride);
  for (int ko = 0; ko < lw.out_channels; ++ko)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        int64_t acc = int64_t{lw.bias[ko].raw} * 4096;
        for (int c = 0; c < lw.in_channels; ++c)
          for (int dy = 0; dy < lw.kh; ++dy)
            for (int dx = 0; dx < lw.kw; ++dx) {
              const int iy = y * stride + dy - pt, ix = x * stride + dx - pl;
              if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
              const size_t widx = ((size_t(ko) * lw.in_channels + c) * lw.kh + dy) * lw.kw + dx;
              acc += int64_t{lw.weights[widx].raw} * in.at(c, iy, ix);
            }
        int64_t r = clamp16(floor_div(acc, 4096));
        if (relu && r < 0) r = 0;
        out.at(ko, y, x) = r;
      }
  return out;
}

inline Map pool(const Map& in) {
  Map out{in.k, (in.h + 1) / 2, (in.w + 1) / 2, {}};
  out.v.assign(size_t(out.k) * out.h * out.w, 0);
  for (int c = 0; c < in.k; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        int64_t m = INT64_MIN;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            if (2 * y + dy < in.h && 2 * x + dx < in.w) m = std::max(m, in.at(c, 2 * y + dy, 2 * x + dx));
        out.at(c, y, x) = m;
      }
  return out;
}

struct Result {
  int64_t steering = 0;
  int64_t logit = 0;
  std::map<std::string, Map> maps;
};

inline Result run(const nanotile::NetworkGraph& g, const nanotile::WeightStore& ws, const nanotile::Tensor3<nanotile::Q412>& input) {
  using nanotile::LayerKind;
  Result res;
  Map x{input.channels(), input.height(), input.width(), {}};
  for (auto q : input.data()) x.v.push_back(q.raw);
  res.maps[nanotile::NetworkGraph::kInputTensor] = x;
  std::vector<int64_t> heads;
  for (const auto& l : g.layers()) {
    const Map& a = res.maps.at(l.inputs[0]);
    Map out;
    switch (l.kind) {
      case LayerKind::Conv:
        out = conv(a, ws.at(l.id), l.stride, l.h_out, l.w_out, l.fused_relu);
        break;
      case LayerKind::MaxPool:
        out = pool(a);
        break;
      case LayerKind::Relu:
        out = a;
        for (auto& v : out.v) v = std::max<int64_t>(v, 0);
        break;
      case LayerKind::Add: {
        const Map& b = res.maps.at(l.inputs[1]);
        out = a;
        for (size_t i = 0; i < out.v.size(); ++i) {
          out.v[i] = clamp16(a.v[i] + b.v[i]);
          if (l.fused_relu && out.v[i] < 0) out.v[i] = 0;
        }
        break;
      }
      case LayerKind::FullyConnected: {
        const auto& lw = ws.at(l.id);
        int64_t acc = int64_t{lw.bias[0].raw} * 4096;
        for (size_t i = 0; i < a.v.size(); ++i) acc += int64_t{lw.weights[i].raw} * a.v[i];
        heads.push_back(clamp16(floor_div(acc, 4096)));
        continue;
      }
    }
    res.maps[l.id] = std::move(out);
  }
  res.steering = heads.at(0);
  res.logit = heads.at(1);
  return res;
}

}  // namespace oracle
