#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nanotile/fxp.hpp"
#include "nanotile/tensor.hpp"

namespace nanotile {

enum class LayerKind : uint8_t { Conv = 0, MaxPool = 1, Relu = 2, Add = 3, FullyConnected = 4 };

const char* to_string(LayerKind kind);

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  int h_in = 0;
  int w_in = 0;
  int h_out = 0;
  int w_out = 0;
  bool fused_relu = false;
  // For add layers: the residual operand (the other input is inputs[0]).
  std::optional<std::string> bypass_source;
  // Tensor ids read by this layer; the layer's output tensor is named by id.
  std::vector<std::string> inputs;
  // Row label of the per-layer timing table this layer is reported under.
  std::string row;

  bool has_weights() const { return kind == LayerKind::Conv || kind == LayerKind::FullyConnected; }
  // Same-zero padding, TensorFlow convention: extra padding goes to the bottom/right.
  int pad_top() const;
  int pad_left() const;
  int64_t fan_in() const { return int64_t{in_channels} * kh * kw; }
  int64_t weight_count() const;
  int64_t bias_count() const { return has_weights() ? out_channels : 0; }
  Shape3 input_shape() const { return {in_channels, h_in, w_in}; }
  Shape3 output_shape() const { return {out_channels, h_out, w_out}; }
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorInfo {
  std::string id;
  Shape3 shape;
  int producer = -1;  // layer index, -1 for the graph input
  std::vector<int> consumers;
};

class NetworkGraph {
 public:
  static constexpr const char* kInputTensor = "input";

  NetworkGraph(Shape3 input, std::vector<LayerSpec> layers);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const LayerSpec& layer(const std::string& id) const;
  int layer_index(const std::string& id) const;
  const TensorInfo& tensor(const std::string& id) const;
  Shape3 input_shape() const { return tensors_.front().shape; }

 private:
  void validate() const;

  std::vector<LayerSpec> layers_;
  std::vector<TensorInfo> tensors_;
};

// The deployed DroNet variant: 200x200 grayscale input, three residual blocks,
// 2x2 max pooling, steering and collision heads.
NetworkGraph build_dronet();

struct MacCount {
  struct Entry {
    std::string layer;
    int64_t macs = 0;
  };
  std::vector<Entry> per_layer;
  int64_t conv_total = 0;
  int64_t total = 0;  // conv + fully connected
};

MacCount mac_count(const NetworkGraph& graph);

struct ParamCount {
  int64_t params = 0;
  int64_t bytes_at(int bytes_per_param) const { return params * bytes_per_param; }
};

ParamCount param_count(const NetworkGraph& graph);

// Layout [K_out][K_in][kh][kw]; fully connected layers use kh = kw = 1.
struct LayerWeights {
  std::string layer;
  LayerKind kind = LayerKind::Conv;
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  std::vector<Q412> weights;
  std::vector<Q412> bias;

  Q412 w(int ko, int ki, int dy, int dx) const {
    return weights[((static_cast<std::size_t>(ko) * in_channels + ki) * kh + dy) * kw + dx];
  }

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

class WeightStore {
 public:
  WeightStore() = default;
  explicit WeightStore(std::vector<LayerWeights> layers) : layers_(std::move(layers)) {}

  const std::vector<LayerWeights>& layers() const { return layers_; }
  const LayerWeights& at(const std::string& layer) const;
  // Throws GraphError unless every weighted layer of the graph has matching shapes.
  void check_against(const NetworkGraph& graph) const;

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::vector<LayerWeights> layers_;
};

WeightStore zero_weights(const NetworkGraph& graph);
// Uniform in [-1, 1] scaled by 1/sqrt(fan_in), then quantized.
WeightStore random_weights(const NetworkGraph& graph, uint64_t seed);

enum class WeightFileErrc { NotFound, BadMagic, VersionMismatch, ShapeMismatch, Truncated, Io };

class WeightFileError : public std::runtime_error {
 public:
  WeightFileError(WeightFileErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  WeightFileErrc code() const { return code_; }

 private:
  WeightFileErrc code_;
};

inline constexpr char kWeightMagic[4] = {'P', 'D', 'R', 'N'};
inline constexpr uint16_t kWeightVersion = 1;

std::vector<uint8_t> encode_weights(const WeightStore& store);
WeightStore decode_weights(std::span<const uint8_t> bytes, const NetworkGraph& graph);
void save_weights(const WeightStore& store, const std::filesystem::path& file);
WeightStore load_weights(const std::filesystem::path& file, const NetworkGraph& graph);

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major
};

GrayImage read_pgm(const std::filesystem::path& file);
GrayImage parse_pgm(std::span<const uint8_t> bytes);
void write_pgm(const GrayImage& image, const std::filesystem::path& file);

// Center-crop to a square, nearest-neighbour resize to `side`, scale to [0, 1].
Tensor3<Q412> image_to_tensor(const GrayImage& image, int side = 200);
Tensor3<Q412> load_image(const std::filesystem::path& file, int side = 200);

void write_graph_summary(const NetworkGraph& graph, std::ostream& os, bool csv);

}  // namespace nanotile
