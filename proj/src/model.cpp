#include "hasnets/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hasnets/errors.hpp"

namespace hasnets::nn {
namespace {

std::string layer_name(const LayerSpec& spec, std::size_t index) {
  return "layer " + std::to_string(index) + " (" + spec.to_string() + ")";
}

}  // namespace

std::vector<LayerSpec> architecture(std::string_view name, std::size_t classes) {
  const std::string head = "dense(" + std::to_string(classes) + ");softmax";
  if (name == "fmnist") {
    return parse_layer_list("conv2d(32,3);elu;conv2d(32,3);elu;maxpool(2);dropout(0.2);" + head);
  }
  if (name == "fmnist-desk") {
    return parse_layer_list("conv2d(32,3);elu;maxpool(2);dropout(0.2);" + head);
  }
  if (name == "mlp") return parse_layer_list("dense(128);relu;" + head);
  if (name == "linear") return parse_layer_list(head);
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

std::vector<LayerSpec> resolve_architecture(std::string_view text, std::size_t classes) {
  if (text.find('(') != std::string_view::npos || text.find(';') != std::string_view::npos) {
    return parse_layer_list(text);
  }
  return architecture(text, classes);
}

Model::Model(Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t init_seed)
    : input_shape_(std::move(input_shape)), specs_(std::move(specs)) {
  if (specs_.empty() || specs_.back().kind != LayerKind::softmax) {
    throw ConfigError("model must end with a softmax layer");
  }
  Rng init_rng(init_seed);
  Shape shape = input_shape_;
  layers_.reserve(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    try {
      layers_.push_back(make_layer(specs_[i], shape, init_rng));
    } catch (const ConfigError& e) {
      throw ConfigError(layer_name(specs_[i], i) + ": " + e.what());
    }
    shape = layers_.back()->output_shape();
  }
  classes_ = shape.at(0);
  dropout_rng_.seed(mix64(init_seed));
}

Model::Model(const Model& other)
    : input_shape_(other.input_shape_), specs_(other.specs_), classes_(other.classes_),
      dropout_rng_(other.dropout_rng_) {
  layers_.reserve(other.layers_.size());
  for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::string Model::descriptor() const {
  std::ostringstream out;
  out << "input(";
  for (std::size_t i = 0; i < input_shape_.size(); ++i) out << (i ? "," : "") << input_shape_[i];
  out << ");" << layer_list_string(specs_);
  return out.str();
}

Model Model::from_descriptor(std::string_view descriptor) {
  const auto semi = descriptor.find(';');
  const std::string_view head = descriptor.substr(0, semi);
  if (head.substr(0, 6) != "input(" || head.back() != ')' || semi == std::string_view::npos) {
    throw ConfigError("model descriptor must start with input(...): '" + std::string(descriptor) + "'");
  }
  Shape shape;
  std::string dims(head.substr(6, head.size() - 7));
  std::istringstream in(dims);
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      shape.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad input dimension '" + tok + "'");
    }
  }
  return Model(shape, parse_layer_list(descriptor.substr(semi + 1)), 0);
}

Tensor Model::forward(const Tensor& batch, bool training) {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    throw ConfigError("batch shape " + shape_string(batch.shape()) +
                      " does not match model input " + shape_string(input_shape_));
  }
  ForwardContext ctx{training, &dropout_rng_};
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, ctx);
    if (!x.all_finite()) throw NumericError("non-finite activation in " + layer_name(specs_[i], i));
  }
  return x;
}

void Model::backward(const Tensor& grad_probs) {
  Tensor g = grad_probs;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, i > 0);
  }
  for (const Tensor* p : parameters()) {
    for (double v : p->grad()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in model parameters");
    }
  }
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    for (Tensor* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    for (Tensor* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

void Model::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

}  // namespace hasnets::nn
