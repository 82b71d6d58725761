#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hasnets/loss.hpp"
#include "hasnets/model.hpp"
#include "hasnets/optimizer.hpp"

namespace hasnets::nn {

/// Copies the selected leading-axis rows of `src` into a new batch tensor.
Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> row);

/// Forward pass + reverse pass of the mean loss + one optimizer step.
/// Returns the mean loss before the update.
double backward_and_step(Model& model, const Tensor& batch, const Tensor& targets,
                         Optimizer& optimizer, LossKind loss = LossKind::cross_entropy);

/// Fills the model's parameter gradients with d(mean loss)/d(theta) for the
/// batch and returns the mean loss. Does not step.
double compute_gradients(Model& model, const Tensor& batch, const Tensor& targets, LossKind loss,
                         bool training);

/// L2 norm of the full parameter gradient of each sample taken alone.
/// Evaluation mode (no dropout).
std::vector<double> per_sample_grad_norms(Model& model, const Tensor& batch, const Tensor& targets,
                                          LossKind loss = LossKind::cross_entropy);

/// Evaluation-mode probabilities for the given rows (all rows when empty),
/// processed in chunks of `chunk`.
Tensor predict(Model& model, const Tensor& inputs, std::span<const std::size_t> rows = {},
               std::size_t chunk = 256);

}  // namespace hasnets::nn
