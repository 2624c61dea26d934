#include "nanotile/net.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace nanotile {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Relu: return "relu";
    case LayerKind::Add: return "add";
    case LayerKind::FullyConnected: return "fully-connected";
  }
  return "?";
}

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

int same_pad_begin(int in, int out, int k, int stride) {
  const int total = std::max((out - 1) * stride + k - in, 0);
  return total / 2;
}

}  // namespace

int LayerSpec::pad_top() const {
  if (kind != LayerKind::Conv) return 0;
  return same_pad_begin(h_in, h_out, kh, stride);
}

int LayerSpec::pad_left() const {
  if (kind != LayerKind::Conv) return 0;
  return same_pad_begin(w_in, w_out, kw, stride);
}

int64_t LayerSpec::weight_count() const {
  if (!has_weights()) return 0;
  return int64_t{out_channels} * in_channels * kh * kw;
}

NetworkGraph::NetworkGraph(Shape3 input, std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  tensors_.push_back({kInputTensor, input, -1, {}});
  std::map<std::string, int> index;
  index[kInputTensor] = 0;
  for (int i = 0; i < static_cast<int>(layers_.size()); ++i) {
    const auto& l = layers_[i];
    for (const auto& in : l.inputs) {
      auto it = index.find(in);
      if (it == index.end()) throw GraphError(l.id + ": input '" + in + "' has no producer before it");
      tensors_[it->second].consumers.push_back(i);
    }
    if (index.count(l.id)) throw GraphError("tensor '" + l.id + "' produced twice");
    index[l.id] = static_cast<int>(tensors_.size());
    tensors_.push_back({l.id, l.output_shape(), i, {}});
  }
  validate();
}

void NetworkGraph::validate() const {
  for (const auto& l : layers_) {
    auto fail = [&](const std::string& msg) { throw GraphError(l.id + ": " + msg); };
    if (l.inputs.empty()) fail("no inputs");
    const Shape3 in = tensor(l.inputs[0]).shape;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::MaxPool: {
        if (in != l.input_shape()) fail("declared input shape does not match producer");
        if (l.h_out != ceil_div(l.h_in, l.stride) || l.w_out != ceil_div(l.w_in, l.stride))
          fail("output extents violate ceil(in / stride)");
        if (l.kind == LayerKind::MaxPool && l.out_channels != l.in_channels) fail("pool changes channels");
        if (l.fan_in() > kMaxAccumulationLength) fail("dot product longer than accumulator headroom");
        break;
      }
      case LayerKind::Relu:
        if (in != l.input_shape() || l.input_shape() != l.output_shape()) fail("relu shape mismatch");
        break;
      case LayerKind::Add: {
        if (l.inputs.size() != 2) fail("add needs two inputs");
        if (!l.bypass_source || *l.bypass_source != l.inputs[1]) fail("add bypass must be its second input");
        if (tensor(l.inputs[1]).shape != in || in != l.output_shape()) fail("add operands differ in shape");
        break;
      }
      case LayerKind::FullyConnected:
        if (static_cast<int64_t>(in.elems()) != l.in_channels) fail("fan-in does not match flattened input");
        if (l.in_channels > kMaxAccumulationLength) fail("dot product longer than accumulator headroom");
        break;
    }
  }
}

const LayerSpec& NetworkGraph::layer(const std::string& id) const { return layers_.at(layer_index(id)); }

int NetworkGraph::layer_index(const std::string& id) const {
  for (int i = 0; i < static_cast<int>(layers_.size()); ++i)
    if (layers_[i].id == id) return i;
  throw GraphError("unknown layer '" + id + "'");
}

const TensorInfo& NetworkGraph::tensor(const std::string& id) const {
  for (const auto& t : tensors_)
    if (t.id == id) return t;
  throw GraphError("unknown tensor '" + id + "'");
}

namespace {

LayerSpec conv(std::string id, std::string input, Shape3 in, int k_out, int k, int stride, bool relu,
               std::string row) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Conv;
  l.in_channels = in.k;
  l.out_channels = k_out;
  l.kh = l.kw = k;
  l.stride = stride;
  l.h_in = in.h;
  l.w_in = in.w;
  l.h_out = ceil_div(in.h, stride);
  l.w_out = ceil_div(in.w, stride);
  l.fused_relu = relu;
  l.inputs = {std::move(input)};
  l.row = std::move(row);
  return l;
}

LayerSpec elementwise(std::string id, LayerKind kind, std::vector<std::string> inputs, Shape3 s, bool relu,
                      std::string row) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = kind;
  l.in_channels = l.out_channels = s.k;
  l.h_in = l.h_out = s.h;
  l.w_in = l.w_out = s.w;
  l.fused_relu = relu;
  if (kind == LayerKind::Add) l.bypass_source = inputs.at(1);
  l.inputs = std::move(inputs);
  l.row = std::move(row);
  return l;
}

LayerSpec fully_connected(std::string id, std::string input, Shape3 in, std::string row) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::FullyConnected;
  l.in_channels = static_cast<int>(in.elems());
  l.out_channels = 1;
  l.h_in = l.w_in = l.h_out = l.w_out = 1;
  l.inputs = {std::move(input)};
  l.row = std::move(row);
  return l;
}

}  // namespace

NetworkGraph build_dronet() {
  const Shape3 input{1, 200, 200};
  std::vector<LayerSpec> layers;

  layers.push_back(conv("conv_1", NetworkGraph::kInputTensor, input, 32, 5, 2, false, "conv_1 + pool"));
  {
    LayerSpec pool;
    pool.id = "pool_1";
    pool.kind = LayerKind::MaxPool;
    pool.in_channels = pool.out_channels = 32;
    pool.kh = pool.kw = 2;
    pool.stride = 2;
    pool.h_in = pool.w_in = 100;
    pool.h_out = pool.w_out = 50;
    pool.inputs = {"conv_1"};
    pool.row = "conv_1 + pool";
    layers.push_back(pool);
  }
  layers.push_back(elementwise("relu_1", LayerKind::Relu, {"pool_1"}, {32, 50, 50}, false, "ReLU"));

  // Residual block: two 3x3 convs on the main path, strided 1x1 conv on the bypass.
  struct Block {
    int conv;  // number of the first conv in the block
    int k_out;
    std::string add_row;
    bool add_fused_relu;
  };
  const Block blocks[] = {{2, 32, "add", false}, {5, 64, "add", false}, {8, 128, "add + ReLU", true}};
  std::string block_in = "relu_1";
  Shape3 in{32, 50, 50};
  for (int b = 0; b < 3; ++b) {
    const auto& blk = blocks[b];
    const auto name = [](int n) { return "conv_" + std::to_string(n); };
    auto c1 = conv(name(blk.conv), block_in, in, blk.k_out, 3, 2, true, name(blk.conv) + " + ReLU");
    const Shape3 mid = c1.output_shape();
    auto c2 = conv(name(blk.conv + 1), c1.id, mid, blk.k_out, 3, 1, false, name(blk.conv + 1));
    auto c3 = conv(name(blk.conv + 2), block_in, in, blk.k_out, 1, 2, false, name(blk.conv + 2));
    const std::string add_id = "add_" + std::to_string(b + 1);
    auto add = elementwise(add_id, LayerKind::Add, {c2.id, c3.id}, mid, blk.add_fused_relu, blk.add_row);
    layers.push_back(std::move(c1));
    layers.push_back(std::move(c2));
    layers.push_back(std::move(c3));
    layers.push_back(std::move(add));
    block_in = add_id;
    if (!blk.add_fused_relu) {
      const std::string relu_id = "relu_" + std::to_string(b + 2);
      layers.push_back(elementwise(relu_id, LayerKind::Relu, {add_id}, mid, false, "ReLU"));
      block_in = relu_id;
    }
    in = mid;
  }
  layers.push_back(fully_connected("fully_1", block_in, in, "fully_1"));
  layers.push_back(fully_connected("fully_2", block_in, in, "fully_2"));
  return NetworkGraph(input, std::move(layers));
}

MacCount mac_count(const NetworkGraph& graph) {
  MacCount out;
  for (const auto& l : graph.layers()) {
    int64_t macs = 0;
    if (l.kind == LayerKind::Conv) {
      macs = int64_t{l.in_channels} * l.out_channels * l.kh * l.kw * l.h_out * l.w_out;
      out.conv_total += macs;
    } else if (l.kind == LayerKind::FullyConnected) {
      macs = int64_t{l.in_channels} * l.out_channels;
    }
    out.total += macs;
    out.per_layer.push_back({l.id, macs});
  }
  return out;
}

ParamCount param_count(const NetworkGraph& graph) {
  ParamCount out;
  for (const auto& l : graph.layers()) out.params += l.weight_count() + l.bias_count();
  return out;
}

const LayerWeights& WeightStore::at(const std::string& layer) const {
  for (const auto& w : layers_)
    if (w.layer == layer) return w;
  throw GraphError("no weights for layer '" + layer + "'");
}

namespace {

bool shape_matches(const LayerWeights& w, const LayerSpec& l) {
  return w.kind == l.kind && w.in_channels == l.in_channels && w.out_channels == l.out_channels &&
         w.kh == l.kh && w.kw == l.kw && w.stride == l.stride &&
         static_cast<int64_t>(w.weights.size()) == l.weight_count() &&
         static_cast<int64_t>(w.bias.size()) == l.bias_count();
}

LayerWeights empty_weights(const LayerSpec& l) {
  LayerWeights w;
  w.layer = l.id;
  w.kind = l.kind;
  w.in_channels = l.in_channels;
  w.out_channels = l.out_channels;
  w.kh = l.kh;
  w.kw = l.kw;
  w.stride = l.stride;
  w.weights.assign(l.weight_count(), Q412{});
  w.bias.assign(l.bias_count(), Q412{});
  return w;
}

}  // namespace

void WeightStore::check_against(const NetworkGraph& graph) const {
  std::size_t n = 0;
  for (const auto& l : graph.layers()) {
    if (!l.has_weights()) continue;
    if (n >= layers_.size() || layers_[n].layer != l.id || !shape_matches(layers_[n], l))
      throw GraphError("weights do not match layer '" + l.id + "'");
    ++n;
  }
  if (n != layers_.size()) throw GraphError("weight store has extra layers");
}

WeightStore zero_weights(const NetworkGraph& graph) {
  std::vector<LayerWeights> out;
  for (const auto& l : graph.layers())
    if (l.has_weights()) out.push_back(empty_weights(l));
  return WeightStore(std::move(out));
}

WeightStore random_weights(const NetworkGraph& graph, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<LayerWeights> out;
  for (const auto& l : graph.layers()) {
    if (!l.has_weights()) continue;
    auto w = empty_weights(l);
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
    for (auto& v : w.weights) v = quantize(unit(rng) * scale);
    for (auto& v : w.bias) v = quantize(unit(rng) * scale);
    out.push_back(std::move(w));
  }
  return WeightStore(std::move(out));
}

// ---- PDRN weight files ----------------------------------------------------

namespace {

class Writer {
 public:
  void u8(uint8_t v) { bytes_.push_back(v); }
  void u16(uint16_t v) {
    bytes_.push_back(static_cast<uint8_t>(v & 0xff));
    bytes_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void q(Q412 v) { u16(static_cast<uint16_t>(v.raw)); }
  std::vector<uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  Q412 q() { return Q412::from_raw(static_cast<int16_t>(u16())); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw WeightFileError(WeightFileErrc::Truncated, "truncated file");
  }

  std::span<const uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> encode_weights(const WeightStore& store) {
  Writer out;
  for (char c : kWeightMagic) out.u8(static_cast<uint8_t>(c));
  out.u16(kWeightVersion);
  out.u16(static_cast<uint16_t>(store.layers().size()));
  for (const auto& l : store.layers()) {
    out.u8(static_cast<uint8_t>(l.kind));
    out.u16(static_cast<uint16_t>(l.in_channels));
    out.u16(static_cast<uint16_t>(l.out_channels));
    out.u8(static_cast<uint8_t>(l.kh));
    out.u8(static_cast<uint8_t>(l.kw));
    out.u8(static_cast<uint8_t>(l.stride));
    for (Q412 v : l.weights) out.q(v);
    for (Q412 v : l.bias) out.q(v);
  }
  return out.take();
}

WeightStore decode_weights(std::span<const uint8_t> bytes, const NetworkGraph& graph) {
  if (bytes.size() < 4) throw WeightFileError(WeightFileErrc::Truncated, "truncated file");
  if (std::memcmp(bytes.data(), kWeightMagic, 4) != 0) throw WeightFileError(WeightFileErrc::BadMagic, "bad magic");
  Reader in(bytes.subspan(4));
  const uint16_t version = in.u16();
  if (version != kWeightVersion)
    throw WeightFileError(WeightFileErrc::VersionMismatch, "version mismatch: " + std::to_string(version));

  std::vector<const LayerSpec*> expected;
  for (const auto& l : graph.layers())
    if (l.has_weights()) expected.push_back(&l);
  const uint16_t count = in.u16();
  if (count != expected.size())
    throw WeightFileError(WeightFileErrc::ShapeMismatch, "shape mismatch: layer count " + std::to_string(count));

  std::vector<LayerWeights> layers;
  for (const LayerSpec* spec : expected) {
    LayerWeights w;
    w.layer = spec->id;
    w.kind = static_cast<LayerKind>(in.u8());
    w.in_channels = in.u16();
    w.out_channels = in.u16();
    w.kh = in.u8();
    w.kw = in.u8();
    w.stride = in.u8();
    w.weights.resize(static_cast<std::size_t>(w.out_channels) * w.in_channels * w.kh * w.kw);
    w.bias.resize(w.out_channels);
    if (!shape_matches(w, *spec))
      throw WeightFileError(WeightFileErrc::ShapeMismatch, "shape mismatch at layer '" + spec->id + "'");
    for (auto& v : w.weights) v = in.q();
    for (auto& v : w.bias) v = in.q();
    layers.push_back(std::move(w));
  }
  if (!in.at_end()) throw WeightFileError(WeightFileErrc::ShapeMismatch, "shape mismatch: trailing bytes");
  return WeightStore(std::move(layers));
}

void save_weights(const WeightStore& store, const std::filesystem::path& file) {
  const auto bytes = encode_weights(store);
  std::ofstream os(file, std::ios::binary);
  if (!os) throw WeightFileError(WeightFileErrc::Io, "cannot write " + file.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

std::vector<uint8_t> read_all(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) return {};
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

WeightStore load_weights(const std::filesystem::path& file, const NetworkGraph& graph) {
  if (!std::filesystem::exists(file))
    throw WeightFileError(WeightFileErrc::NotFound, "file not found: " + file.string());
  return decode_weights(read_all(file), graph);
}

// ---- PGM images -----------------------------------------------------------

GrayImage parse_pgm(std::span<const uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw ImageError("malformed PGM header");
    return t;
  };
  auto number = [&]() {
    const auto t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      throw ImageError("malformed PGM header");
    return std::stoi(t);
  };
  if (token() != "P5") throw ImageError("malformed PGM header: expected P5");
  GrayImage img;
  img.width = number();
  img.height = number();
  const int maxval = number();
  if (img.width <= 0 || img.height <= 0) throw ImageError("malformed PGM header: empty image");
  if (maxval != 255) throw ImageError("wrong bit depth: maxval " + std::to_string(maxval));
  ++pos;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (pos + n > bytes.size()) throw ImageError("truncated PGM data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

GrayImage read_pgm(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw ImageError("file not found: " + file.string());
  return parse_pgm(read_all(file));
}

void write_pgm(const GrayImage& image, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw ImageError("cannot write " + file.string());
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

Tensor3<Q412> image_to_tensor(const GrayImage& image, int side) {
  const int crop = std::min(image.width, image.height);
  const int x0 = (image.width - crop) / 2;
  const int y0 = (image.height - crop) / 2;
  Tensor3<Q412> out({1, side, side});
  for (int y = 0; y < side; ++y) {
    const int sy = y0 + y * crop / side;
    for (int x = 0; x < side; ++x) {
      const int sx = x0 + x * crop / side;
      const uint8_t p = image.pixels[static_cast<std::size_t>(sy) * image.width + sx];
      out.at(0, y, x) = quantize(p / 255.0);
    }
  }
  return out;
}

Tensor3<Q412> load_image(const std::filesystem::path& file, int side) {
  return image_to_tensor(read_pgm(file), side);
}

void write_graph_summary(const NetworkGraph& graph, std::ostream& os, bool csv) {
  const auto macs = mac_count(graph);
  if (csv) {
    os << "layer,kind,k_in,k_out,kh,kw,stride,h_in,w_in,h_out,w_out,fused_relu,inputs,macs,params\n";
  } else {
    os << std::left << std::setw(9) << "layer" << std::setw(16) << "kind" << std::setw(16) << "in"
       << std::setw(16) << "out" << std::setw(8) << "kernel" << std::right << std::setw(12) << "MACs"
       << std::setw(10) << "params" << "\n";
  }
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const auto& l = graph.layers()[i];
    const int64_t params = l.weight_count() + l.bias_count();
    if (csv) {
      os << l.id << ',' << to_string(l.kind) << ',' << l.in_channels << ',' << l.out_channels << ',' << l.kh << ','
         << l.kw << ',' << l.stride << ',' << l.h_in << ',' << l.w_in << ',' << l.h_out << ',' << l.w_out << ','
         << (l.fused_relu ? 1 : 0) << ',';
      for (std::size_t j = 0; j < l.inputs.size(); ++j) os << (j ? ";" : "") << l.inputs[j];
      os << ',' << macs.per_layer[i].macs << ',' << params << '\n';
    } else {
      std::ostringstream in, out, k;
      in << l.input_shape().k << 'x' << l.h_in << 'x' << l.w_in;
      out << l.out_channels << 'x' << l.h_out << 'x' << l.w_out;
      k << l.kh << 'x' << l.kw << "/s" << l.stride;
      os << std::left << std::setw(9) << l.id << std::setw(16)
         << (std::string(to_string(l.kind)) + (l.fused_relu ? "+relu" : "")) << std::setw(16) << in.str()
         << std::setw(16) << out.str() << std::setw(8) << k.str() << std::right << std::setw(12)
         << macs.per_layer[i].macs << std::setw(10) << params << "\n";
    }
  }
  if (!csv) os << "total conv MACs " << macs.conv_total << ", params " << param_count(graph).params << "\n";
}

}  // namespace nanotile
