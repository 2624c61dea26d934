#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include "nanotile/fxp.hpp"
#include "nanotile/net.hpp"
#include "nanotile/tensor.hpp"

namespace nanotile {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using QTensor = Tensor3<Q412>;
using RTensor = Tensor3<double>;

// Convolution over a row window of the input, accumulated at 32-bit scale.
//
// `in` holds input channels [c0, c0 + in.channels()) and global input rows
// starting at `in_row0`; rows before 0 or past the image may be present as
// materialized zero halo. Global rows outside the image read as zero whether
// present or not, any other row missing from the window is an error.
// `weights` is laid out [K_out][K_in][kh][kw] over the full layer.
// `acc` covers output channels starting at `k0` and output rows starting at
// `y0`, always the full output width.
struct ConvWindow {
  int c0 = 0;
  int in_row0 = 0;
  int in_height = 0;  // full image height, for padding
  int k0 = 0;
  int y0 = 0;
  // Restrict work to a worker's share; -1 means the full extent of `acc`.
  int x_begin = 0;
  int x_end = -1;
  int k_begin = 0;
  int k_end = -1;
};

void conv_accumulate(const QTensor& in, const LayerWeights& weights, int pad_top, int pad_left,
                     const ConvWindow& window, Tensor3<Acc32>& acc);

// Prologue: every accumulator starts at its output channel's pre-shifted bias.
void init_bias(const LayerWeights& weights, int k0, Tensor3<Acc32>& acc);

QTensor renorm(const Tensor3<Acc32>& acc, bool fused_relu);

QTensor conv2d(const QTensor& in, const LayerWeights& weights, int stride, bool fused_relu);
QTensor maxpool2(const QTensor& in);
QTensor relu(const QTensor& in);
QTensor add(const QTensor& a, const QTensor& b, bool fused_relu);
Q412 fully_connected(std::span<const Q412> in, const LayerWeights& weights);

RTensor conv2d(const RTensor& in, const LayerWeights& weights, int stride, bool fused_relu);
RTensor maxpool2(const RTensor& in);
RTensor relu(const RTensor& in);
RTensor add(const RTensor& a, const RTensor& b, bool fused_relu);
double fully_connected(std::span<const double> in, const LayerWeights& weights);

double sigmoid(double x);

enum class Arithmetic { Real, Q412 };

struct Prediction {
  double steering = 0.0;
  double collision = 0.0;        // probability, after the sigmoid
  double collision_logit = 0.0;  // before the sigmoid
  // Raw head outputs; only meaningful for fixed-point runs.
  Q412 steering_raw{};
  Q412 logit_raw{};
};

Prediction make_prediction(Q412 steering, Q412 logit);

// Runs every layer in graph order on whole tensors. When `activations` is
// non-null it receives every fixed-point tensor keyed by tensor id.
Prediction infer_untiled(const NetworkGraph& graph, const WeightStore& weights, const QTensor& input,
                         Arithmetic arithmetic, std::map<std::string, QTensor>* activations = nullptr);

RTensor to_real(const QTensor& t);

}  // namespace nanotile
