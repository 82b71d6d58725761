#pragma once

#include <cstdint>
#include <span>

#include "hasnets/dataset.hpp"
#include "hasnets/model.hpp"

namespace hasnets::eval {

/// Fraction of rows whose argmax prediction equals the argmax of the label
/// row (lowest index on ties, for both).
double match_rate(const nn::Tensor& probs, const nn::Tensor& labels);

/// Clean test accuracy. Throws ConfigError on an empty set.
double compute_accuracy(nn::Model& model, const data::LabeledDataset& test);

/// Fraction of a trigger-stamped evaluation set classified as its (target)
/// label. Throws ConfigError on an empty set.
double compute_asr(nn::Model& model, const data::LabeledDataset& eval_poison_set);

/// (baseline - accuracy) / baseline.
double relative_accuracy_drop(double baseline_accuracy, double accuracy);

/// Probability that a random positive scores above a random negative; ties
/// count one half. Throws ConfigError unless both classes are present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

}  // namespace hasnets::eval
