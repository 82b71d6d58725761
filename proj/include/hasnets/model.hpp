#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hasnets/layers.hpp"

namespace hasnets::nn {

/// Named architectures. "fmnist": two 32-filter 3x3 convs, elu, maxpool,
/// dropout, dense head (no normalization layers). "fmnist-desk" keeps a
/// single conv layer of that block for CPU-scale runs.
std::vector<LayerSpec> architecture(std::string_view name, std::size_t classes);
/// Accepts a registered architecture name or a literal ';'-separated layer list.
std::vector<LayerSpec> resolve_architecture(std::string_view name_or_layers, std::size_t classes);

/// Sequential network ending in softmax.
class Model {
 public:
  Model(Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t init_seed);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  ~Model() = default;

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  /// "input(h,w,c);conv2d(32,3);...". Enough to rebuild the model's structure.
  std::string descriptor() const;
  static Model from_descriptor(std::string_view descriptor);

  /// Per-sample class-probability rows. Dropout is active only when training.
  Tensor forward(const Tensor& batch, bool training);
  /// Reverse pass from dLoss/dProbs; accumulates into parameter gradients.
  void backward(const Tensor& grad_probs);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  void seed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

 private:
  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::size_t classes_ = 0;
  Rng dropout_rng_;
};

}  // namespace hasnets::nn
