#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hasnets/tensor.hpp"

namespace hasnets::nn {

enum class LossKind { cross_entropy, squared_error };

LossKind parse_loss_kind(std::string_view text);
std::string to_string(LossKind kind);

/// Added inside the logarithm so that near-zero probabilities give finite losses.
inline constexpr double kLogFloor = 1e-12;

/// cross-entropy: -sum_c t_c ln(p_c + floor); squared-error: sum_c (p_c - t_c)^2.
std::vector<double> loss_per_sample(const Tensor& probs, const Tensor& targets, LossKind kind);

/// dLoss/dProbs of `scale * sum_i loss_i`. Exact for the floored cross-entropy.
Tensor loss_gradient(const Tensor& probs, const Tensor& targets, LossKind kind, double scale);

/// Throws ConfigError unless every row is a distribution (sums to 1 within 1e-6).
void validate_distribution_rows(const Tensor& rows, double tolerance = 1e-6);

}  // namespace hasnets::nn
