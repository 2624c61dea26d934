#include <doctest.h>

#include <cmath>
#include <random>

#include "common.hpp"
#include "nanotile/kernels.hpp"
#include "oracle.hpp"

using namespace nanotile;

namespace {

LayerWeights conv_weights(int k_in, int k_out, int k, int stride, uint64_t seed, double scale = 0.25) {
  LayerWeights w;
  w.layer = "t";
  w.kind = LayerKind::Conv;
  w.in_channels = k_in;
  w.out_channels = k_out;
  w.kh = w.kw = k;
  w.stride = stride;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  w.weights.resize(size_t(k_in) * k_out * k * k);
  for (auto& v : w.weights) v = quantize(u(rng));
  w.bias.resize(k_out);
  for (auto& v : w.bias) v = quantize(u(rng));
  return w;
}

oracle::Map to_map(const QTensor& t) {
  oracle::Map m{t.channels(), t.height(), t.width(), {}};
  for (auto v : t.data()) m.v.push_back(v.raw);
  return m;
}

bool same(const QTensor& t, const oracle::Map& m) {
  if (t.channels() != m.k || t.height() != m.h || t.width() != m.w) return false;
  for (size_t i = 0; i < m.v.size(); ++i)
    if (t.data()[i].raw != m.v[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("identity and bias-only convolutions") {
  auto in = testutil::random_input(1, {3, 9, 9});
  LayerWeights id = conv_weights(3, 3, 1, 1, 0);
  for (int ko = 0; ko < 3; ++ko)
    for (int ki = 0; ki < 3; ++ki) id.weights[ko * 3 + ki] = ko == ki ? quantize(1.0) : Q412{};
  for (auto& b : id.bias) b = Q412{};
  CHECK(conv2d(in, id, 1, false) == in);

  LayerWeights zero = conv_weights(3, 4, 3, 2, 0);
  for (auto& v : zero.weights) v = Q412{};
  for (auto& b : zero.bias) b = quantize(0.5);
  const auto out = conv2d(in, zero, 2, false);
  CHECK(out.shape() == Shape3{4, 5, 5});
  for (auto v : out.data()) REQUIRE(v == quantize(0.5));
}

TEST_CASE("strided 3x3 convolution matches the integer oracle") {
  const auto in = testutil::random_input(2, {32, 50, 50});
  const auto w = conv_weights(32, 32, 3, 2, 3, 0.1);
  for (bool relu : {false, true}) {
    const auto out = conv2d(in, w, 2, relu);
    CHECK(same(out, oracle::conv(to_map(in), w, 2, 25, 25, relu)));
  }
  const auto w5 = conv_weights(1, 8, 5, 2, 4);
  const auto in5 = testutil::random_input(5, {1, 21, 21});
  CHECK(same(conv2d(in5, w5, 2, false), oracle::conv(to_map(in5), w5, 2, 11, 11, false)));
}

TEST_CASE("accumulation order does not change the result") {
  const auto in = testutil::random_input(7, {16, 12, 12});
  const auto w = conv_weights(16, 8, 3, 1, 8, 0.5);
  const auto whole = conv2d(in, w, 1, false);

  // Channel halves accumulated high half first.
  Tensor3<Acc32> acc({8, 12, 12});
  init_bias(w, 0, acc);
  for (int c0 : {8, 0}) {
    QTensor part({8, 12, 12});
    for (int c = 0; c < 8; ++c)
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) part.at(c, y, x) = in.at(c0 + c, y, x);
    ConvWindow win;
    win.c0 = c0;
    win.in_height = 12;
    conv_accumulate(part, w, 1, 1, win, acc);
  }
  CHECK(renorm(acc, false) == whole);
}

TEST_CASE("zero padding is visible at the border") {
  QTensor ones({1, 6, 6}, quantize(1.0));
  LayerWeights w = conv_weights(1, 1, 3, 1, 0);
  for (auto& v : w.weights) v = quantize(1.0);
  w.bias[0] = Q412{};
  const auto out = conv2d(ones, w, 1, false);
  CHECK(out.at(0, 0, 0) == quantize(4.0));
  CHECK(out.at(0, 0, 3) == quantize(6.0));
  CHECK(out.at(0, 3, 3) == quantize(9.0) );
  CHECK(out.at(0, 3, 3).raw > out.at(0, 0, 0).raw);
}

TEST_CASE("shape errors") {
  const auto in = testutil::random_input(1, {3, 8, 8});
  CHECK_THROWS_AS(conv2d(in, conv_weights(4, 2, 3, 1, 0), 1, false), ShapeError);
  CHECK_THROWS_AS(add(in, QTensor({3, 8, 7}), false), ShapeError);
  LayerWeights fc;
  fc.kind = LayerKind::FullyConnected;
  fc.in_channels = 10;
  fc.out_channels = 1;
  fc.weights.resize(10);
  fc.bias.resize(1);
  std::vector<Q412> v(9);
  CHECK_THROWS_AS(fully_connected(v, fc), ShapeError);
}

TEST_CASE("max pooling") {
  QTensor c({2, 100, 100}, quantize(0.75));
  const auto p = maxpool2(c);
  CHECK(p.shape() == Shape3{2, 50, 50});
  for (auto v : p.data()) REQUIRE(v == quantize(0.75));
  QTensor w({1, 2, 2});
  w.at(0, 0, 0) = Q412::from_raw(1);
  w.at(0, 0, 1) = Q412::from_raw(2);
  w.at(0, 1, 0) = Q412::from_raw(3);
  w.at(0, 1, 1) = Q412::from_raw(4);
  CHECK(maxpool2(w).at(0, 0, 0).raw == 4);
  QTensor odd({1, 3, 3}, Q412::from_raw(-5));
  odd.at(0, 2, 2) = Q412::from_raw(-1);
  const auto po = maxpool2(odd);
  CHECK(po.shape() == Shape3{1, 2, 2});
  CHECK(po.at(0, 1, 1).raw == -1);
}

TEST_CASE("relu and add") {
  auto x = testutil::random_input(9, {4, 6, 6});
  for (auto& v : x.data()) v = Q412::from_raw(v.raw - 2048);
  CHECK(relu(relu(x)) == relu(x));
  const auto y = testutil::random_input(10, {4, 6, 6});
  CHECK(add(x, y, false) == add(y, x, false));
  CHECK(add(x, QTensor(x.shape()), false) == x);
  QTensor big(x.shape(), quantize(7.5));
  const auto sum = add(big, big, false);
  for (auto v : sum.data()) REQUIRE(v.raw == 32767);
  CHECK(add(x, y, true) == relu(add(x, y, false)));
}

TEST_CASE("fully connected") {
  LayerWeights fc;
  fc.kind = LayerKind::FullyConnected;
  fc.in_channels = 6272;
  fc.out_channels = 1;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> r(-400, 400);
  for (int i = 0; i < 6272; ++i) fc.weights.push_back(Q412::from_raw(r(rng)));
  fc.bias = {quantize(0.375)};
  std::vector<Q412> in(6272);
  CHECK(fully_connected(in, fc) == quantize(0.375));
  in[100] = quantize(1.0);
  CHECK(fully_connected(in, fc).raw == fc.weights[100].raw + fc.bias[0].raw);
  int64_t acc = int64_t{fc.bias[0].raw} * 4096;
  for (int i = 0; i < 6272; ++i) {
    in[i] = Q412::from_raw(r(rng) * 8);
    acc += int64_t{in[i].raw} * fc.weights[i].raw;
  }
  CHECK(fully_connected(in, fc).raw == oracle::clamp16(oracle::floor_div(acc, 4096)));
}

TEST_CASE("untiled inference") {
  const auto& g = testutil::dronet();
  const auto zero = infer_untiled(g, zero_weights(g), testutil::random_input(1), Arithmetic::Q412);
  CHECK(zero.steering == 0.0);
  CHECK(zero.collision == 0.5);

  for (uint64_t seed : {11u, 12u}) {
    const auto w = random_weights(g, seed);
    const auto in = testutil::random_input(seed);
    std::map<std::string, QTensor> acts;
    const auto q = infer_untiled(g, w, in, Arithmetic::Q412, &acts);
    const auto ref = oracle::run(g, w, in);
    CHECK(q.steering_raw.raw == ref.steering);
    CHECK(q.logit_raw.raw == ref.logit);
    for (const auto& [id, m] : ref.maps) CHECK_MESSAGE(same(acts.at(id), m), id);

    // Real arithmetic on the same quantized weights stays close.
    const auto r = infer_untiled(g, w, in, Arithmetic::Real);
    CHECK(std::abs(r.steering - q.steering) < 0.05);
    CHECK(std::abs(r.collision - q.collision) < 0.05);
  }
}

}
