#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "hasnets/model.hpp"

namespace hasnets::nn {

enum class OptimizerKind { sgd, sgd_momentum };

OptimizerKind parse_optimizer_kind(std::string_view text);
std::string to_string(OptimizerKind kind);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;

  void validate() const;
};

/// SGD with optional heavy-ball momentum: v <- mu v + g; w <- w - lr v.
class Optimizer {
 public:
  Optimizer(OptimizerSettings settings, const Model& model);

  const OptimizerSettings& settings() const noexcept { return settings_; }

  /// Applies the gradients currently stored on the model's parameters.
  void step(Model& model);
  /// Same update, but with an explicit gradient per parameter.
  void step(Model& model, const std::vector<std::vector<double>>& grads);

 private:
  OptimizerSettings settings_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace hasnets::nn
