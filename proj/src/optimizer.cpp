#include "hasnets/optimizer.hpp"

#include "hasnets/errors.hpp"

namespace hasnets::nn {

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "sgd-momentum") return OptimizerKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (sgd | sgd-momentum)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "sgd-momentum";
}

void OptimizerSettings::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

Optimizer::Optimizer(OptimizerSettings settings, const Model& model) : settings_(settings) {
  settings_.validate();
  for (const Tensor* p : model.parameters()) velocity_.emplace_back(p->size(), 0.0);
}

void Optimizer::step(Model& model) {
  auto params = model.parameters();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    auto g = p->grad();
    grads.emplace_back(g.begin(), g.end());
  }
  step(model, grads);
}

void Optimizer::step(Model& model, const std::vector<std::vector<double>>& grads) {
  auto params = model.parameters();
  if (params.size() != velocity_.size() || grads.size() != params.size()) {
    throw ConfigError("optimizer state does not match model parameters");
  }
  const double lr = settings_.learning_rate;
  const double mu = settings_.kind == OptimizerKind::sgd_momentum ? settings_.momentum : 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto& v = velocity_[i];
    const auto& g = grads[i];
    if (g.size() != w.size() || v.size() != w.size()) {
      throw ConfigError("optimizer state does not match parameter " + std::to_string(i));
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] + g[k];
      w[k] -= lr * v[k];
    }
  }
}

}  // namespace hasnets::nn
