#include "hasnets/training.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>
#include <algorithm>

#include "hasnets/errors.hpp"

namespace hasnets::nn {

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  Shape shape = src.shape();
  shape.at(0) = rows.size();
  Tensor out(shape);
  const std::size_t stride = src.row_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= src.dim(0)) throw ConfigError("row index out of range");
    std::memcpy(out.raw() + i * stride, src.raw() + rows[i] * stride, stride * sizeof(double));
  }
  return out;
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

double compute_gradients(Model& model, const Tensor& batch, const Tensor& targets, LossKind loss,
                         bool training) {
  if (batch.dim(0) == 0) throw ConfigError("empty batch");
  model.zero_grad();
  const Tensor probs = model.forward(batch, training);
  const auto losses = loss_per_sample(probs, targets, loss);
  const double n = static_cast<double>(losses.size());
  model.backward(loss_gradient(probs, targets, loss, 1.0 / n));
  return std::accumulate(losses.begin(), losses.end(), 0.0) / n;
}

double backward_and_step(Model& model, const Tensor& batch, const Tensor& targets,
                         Optimizer& optimizer, LossKind loss) {
  const double mean = compute_gradients(model, batch, targets, loss, /*training=*/true);
  optimizer.step(model);
  return mean;
}

std::vector<double> per_sample_grad_norms(Model& model, const Tensor& batch, const Tensor& targets,
                                          LossKind loss) {
  if (batch.dim(0) == 0) throw ConfigError("per-sample gradient norms need a nonempty batch");
  std::vector<double> norms(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    const std::size_t row[] = {i};
    compute_gradients(model, gather_rows(batch, row), gather_rows(targets, row), loss, false);
    double sq = 0.0;
    for (const Tensor* p : std::as_const(model).parameters()) {
      for (double g : p->grad()) sq += g * g;
    }
    norms[i] = std::sqrt(sq);
  }
  return norms;
}

Tensor predict(Model& model, const Tensor& inputs, std::span<const std::size_t> rows,
               std::size_t chunk) {
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(inputs.dim(0));
    std::iota(all.begin(), all.end(), 0);
    rows = all;
  }
  Tensor out({rows.size(), model.num_classes()});
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const auto part = rows.subspan(start, std::min(chunk, rows.size() - start));
    const Tensor probs = model.forward(gather_rows(inputs, part), false);
    std::memcpy(out.raw() + start * model.num_classes(), probs.raw(), probs.size() * sizeof(double));
  }
  return out;
}

}  // namespace hasnets::nn
