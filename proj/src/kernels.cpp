#include "nanotile/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace nanotile {

namespace {

int out_extent(int in, int stride) { return (in + stride - 1) / stride; }

int same_pad(int in, int k, int stride) {
  const int out = out_extent(in, stride);
  return std::max((out - 1) * stride + k - in, 0) / 2;
}

void check_conv_shapes(Shape3 in, const LayerWeights& w) {
  if (w.kind != LayerKind::Conv) throw ShapeError(w.layer + ": not a convolution");
  if (in.k != w.in_channels)
    throw ShapeError(w.layer + ": input has " + std::to_string(in.k) + " channels, weights expect " +
                     std::to_string(w.in_channels));
}

}  // namespace

void conv_accumulate(const QTensor& in, const LayerWeights& weights, int pad_top, int pad_left,
                     const ConvWindow& win, Tensor3<Acc32>& acc) {
  const int s = weights.stride;
  const int width = in.width();
  const int x_end = win.x_end < 0 ? acc.width() : win.x_end;
  const int k_end = win.k_end < 0 ? acc.channels() : win.k_end;
  if (win.c0 + in.channels() > weights.in_channels || win.k0 + acc.channels() > weights.out_channels)
    throw ShapeError(weights.layer + ": tile exceeds layer channels");

  for (int k = win.k_begin; k < k_end; ++k) {
    for (int y = 0; y < acc.height(); ++y) {
      const int oy = win.y0 + y;
      for (int c = 0; c < in.channels(); ++c) {
        for (int dy = 0; dy < weights.kh; ++dy) {
          const int gy = oy * s + dy - pad_top;
          if (gy < 0 || gy >= win.in_height) continue;
          const int ly = gy - win.in_row0;
          if (ly < 0 || ly >= in.height())
            throw ShapeError(weights.layer + ": input row " + std::to_string(gy) + " not resident");
          for (int x = win.x_begin; x < x_end; ++x) {
            Acc32 a = acc.at(k, y, x);
            for (int dx = 0; dx < weights.kw; ++dx) {
              const int gx = x * s + dx - pad_left;
              if (gx < 0 || gx >= width) continue;
              a = mac(a, weights.w(win.k0 + k, win.c0 + c, dy, dx), in.at(c, ly, gx));
            }
            acc.at(k, y, x) = a;
          }
        }
      }
    }
  }
}

void init_bias(const LayerWeights& weights, int k0, Tensor3<Acc32>& acc) {
  for (int k = 0; k < acc.channels(); ++k) {
    const Acc32 b = bias_to_acc(weights.bias.at(k0 + k));
    for (int y = 0; y < acc.height(); ++y)
      for (int x = 0; x < acc.width(); ++x) acc.at(k, y, x) = b;
  }
}

QTensor renorm(const Tensor3<Acc32>& acc, bool fused_relu) {
  QTensor out(acc.shape());
  auto src = acc.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Q412 v = renorm(src[i]);
    dst[i] = fused_relu ? relu(v) : v;
  }
  return out;
}

QTensor conv2d(const QTensor& in, const LayerWeights& w, int stride, bool fused_relu) {
  check_conv_shapes(in.shape(), w);
  if (stride != w.stride) throw ShapeError(w.layer + ": stride mismatch");
  Tensor3<Acc32> acc({w.out_channels, out_extent(in.height(), stride), out_extent(in.width(), stride)});
  init_bias(w, 0, acc);
  ConvWindow win;
  win.in_height = in.height();
  conv_accumulate(in, w, same_pad(in.height(), w.kh, stride), same_pad(in.width(), w.kw, stride), win, acc);
  return renorm(acc, fused_relu);
}

namespace {

template <typename T>
Tensor3<T> maxpool2_impl(const Tensor3<T>& in) {
  Tensor3<T> out({in.channels(), out_extent(in.height(), 2), out_extent(in.width(), 2)});
  for (int c = 0; c < out.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        T m = in.at(c, 2 * y, 2 * x);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * y + dy, sx = 2 * x + dx;
            if (sy < in.height() && sx < in.width()) m = std::max(m, in.at(c, sy, sx));
          }
        out.at(c, y, x) = m;
      }
  return out;
}

void check_same(Shape3 a, Shape3 b) {
  if (a != b) throw ShapeError("elementwise operands differ in shape");
}

}  // namespace

QTensor maxpool2(const QTensor& in) { return maxpool2_impl(in); }
RTensor maxpool2(const RTensor& in) { return maxpool2_impl(in); }

QTensor relu(const QTensor& in) {
  QTensor out = in;
  for (auto& v : out.data()) v = relu(v);
  return out;
}

RTensor relu(const RTensor& in) {
  RTensor out = in;
  for (auto& v : out.data()) v = std::max(v, 0.0);
  return out;
}

QTensor add(const QTensor& a, const QTensor& b, bool fused_relu) {
  check_same(a.shape(), b.shape());
  QTensor out(a.shape());
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    const Q412 v = sat_add(a.data()[i], b.data()[i]);
    out.data()[i] = fused_relu ? relu(v) : v;
  }
  return out;
}

RTensor add(const RTensor& a, const RTensor& b, bool fused_relu) {
  check_same(a.shape(), b.shape());
  RTensor out(a.shape());
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    const double v = a.data()[i] + b.data()[i];
    out.data()[i] = fused_relu ? std::max(v, 0.0) : v;
  }
  return out;
}

Q412 fully_connected(std::span<const Q412> in, const LayerWeights& w) {
  if (w.kind != LayerKind::FullyConnected || w.out_channels != 1)
    throw ShapeError(w.layer + ": not a single-output fully connected layer");
  if (static_cast<int>(in.size()) != w.in_channels)
    throw ShapeError(w.layer + ": input length " + std::to_string(in.size()) + ", expected " +
                     std::to_string(w.in_channels));
  Acc32 acc = bias_to_acc(w.bias.at(0));
  for (std::size_t i = 0; i < in.size(); ++i) acc = mac(acc, w.weights[i], in[i]);
  return renorm(acc);
}

RTensor conv2d(const RTensor& in, const LayerWeights& w, int stride, bool fused_relu) {
  check_conv_shapes(in.shape(), w);
  if (stride != w.stride) throw ShapeError(w.layer + ": stride mismatch");
  const int pt = same_pad(in.height(), w.kh, stride);
  const int pl = same_pad(in.width(), w.kw, stride);
  RTensor out({w.out_channels, out_extent(in.height(), stride), out_extent(in.width(), stride)});
  for (int k = 0; k < out.channels(); ++k)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        double a = dequantize(w.bias[k]);
        for (int c = 0; c < in.channels(); ++c)
          for (int dy = 0; dy < w.kh; ++dy) {
            const int gy = y * stride + dy - pt;
            if (gy < 0 || gy >= in.height()) continue;
            for (int dx = 0; dx < w.kw; ++dx) {
              const int gx = x * stride + dx - pl;
              if (gx < 0 || gx >= in.width()) continue;
              a += dequantize(w.w(k, c, dy, dx)) * in.at(c, gy, gx);
            }
          }
        out.at(k, y, x) = fused_relu ? std::max(a, 0.0) : a;
      }
  return out;
}

double fully_connected(std::span<const double> in, const LayerWeights& w) {
  if (static_cast<int>(in.size()) != w.in_channels) throw ShapeError(w.layer + ": input length mismatch");
  double acc = dequantize(w.bias.at(0));
  for (std::size_t i = 0; i < in.size(); ++i) acc += dequantize(w.weights[i]) * in[i];
  return acc;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Prediction make_prediction(Q412 steering, Q412 logit) {
  Prediction p;
  p.steering_raw = steering;
  p.logit_raw = logit;
  p.steering = dequantize(steering);
  p.collision_logit = dequantize(logit);
  p.collision = sigmoid(p.collision_logit);
  return p;
}

RTensor to_real(const QTensor& t) {
  RTensor out(t.shape());
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = dequantize(t.data()[i]);
  return out;
}

namespace {

template <typename T>
struct Ops;

template <>
struct Ops<Q412> {
  using Tensor = QTensor;
  static Tensor from_input(const QTensor& in) { return in; }
};

template <>
struct Ops<double> {
  using Tensor = RTensor;
  static Tensor from_input(const QTensor& in) { return to_real(in); }
};

template <typename T>
std::map<std::string, Tensor3<T>> run_layers(const NetworkGraph& graph, const WeightStore& weights,
                                             const QTensor& input, T& steering, T& logit) {
  using Tensor = Tensor3<T>;
  if (input.shape() != graph.input_shape()) throw ShapeError("input tensor does not match the graph input");
  std::map<std::string, Tensor> env;
  env.emplace(NetworkGraph::kInputTensor, Ops<T>::from_input(input));
  bool have_steering = false, have_logit = false;
  int heads = 0;
  for (const auto& l : graph.layers()) {
    const Tensor& x = env.at(l.inputs.at(0));
    switch (l.kind) {
      case LayerKind::Conv:
        env.insert_or_assign(l.id, conv2d(x, weights.at(l.id), l.stride, l.fused_relu));
        break;
      case LayerKind::MaxPool:
        env.insert_or_assign(l.id, maxpool2(x));
        break;
      case LayerKind::Relu:
        env.insert_or_assign(l.id, relu(x));
        break;
      case LayerKind::Add:
        env.insert_or_assign(l.id, add(x, env.at(l.inputs.at(1)), l.fused_relu));
        break;
      case LayerKind::FullyConnected: {
        // The first head predicts steering, the second the collision logit.
        const T v = fully_connected(x.data(), weights.at(l.id));
        if (heads++ == 0) {
          steering = v;
          have_steering = true;
        } else {
          logit = v;
          have_logit = true;
        }
        break;
      }
    }
  }
  if (!have_steering || !have_logit) throw ShapeError("graph lacks the two output heads");
  return env;
}

}  // namespace

Prediction infer_untiled(const NetworkGraph& graph, const WeightStore& weights, const QTensor& input,
                         Arithmetic arithmetic, std::map<std::string, QTensor>* activations) {
  if (arithmetic == Arithmetic::Q412) {
    Q412 steering{}, logit{};
    auto env = run_layers<Q412>(graph, weights, input, steering, logit);
    if (activations) *activations = std::move(env);
    return make_prediction(steering, logit);
  }
  double steering = 0, logit = 0;
  run_layers<double>(graph, weights, input, steering, logit);
  Prediction p;
  p.steering = steering;
  p.collision_logit = logit;
  p.collision = sigmoid(logit);
  return p;
}

}  // namespace nanotile
