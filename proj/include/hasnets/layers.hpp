#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hasnets/rng.hpp"
#include "hasnets/tensor.hpp"

namespace hasnets::nn {

enum class LayerKind { dense, conv2d, maxpool, dropout, elu, relu, tanh, softmax };

/// Textual layer descriptor: "dense(10)", "conv2d(32,3)", "maxpool(2)",
/// "dropout(0.2)", "elu", "relu", "tanh", "softmax".
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;   // dense outputs or conv filters
  std::size_t kernel = 0;  // conv kernel edge or pool window edge
  double rate = 0.0;       // dropout

  static LayerSpec parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const LayerSpec&) const = default;
};

std::vector<LayerSpec> parse_layer_list(std::string_view text);
std::string layer_list_string(const std::vector<LayerSpec>& specs);

struct ForwardContext {
  bool training = false;
  Rng* dropout_rng = nullptr;
};

/// One stage of a sequential network. Batches carry a leading batch axis;
/// shapes reported here are per sample. forward() caches whatever backward()
/// needs, and backward() accumulates into parameter gradients.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerSpec spec() const = 0;
  virtual Shape output_shape() const = 0;
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  virtual Tensor backward(const Tensor& grad_out, bool need_input_grad) = 0;
  virtual std::vector<Tensor*> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

/// Builds a layer for the given per-sample input shape and initializes its
/// parameters (Glorot-uniform weights, zero biases).
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& input_shape, Rng& init_rng);

}  // namespace hasnets::nn
