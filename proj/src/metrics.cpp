#include "hasnets/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "hasnets/errors.hpp"
#include "hasnets/training.hpp"

namespace hasnets::eval {

double match_rate(const nn::Tensor& probs, const nn::Tensor& labels) {
  if (probs.rank() != 2 || probs.shape() != labels.shape()) {
    throw ConfigError("prediction and label shapes differ");
  }
  const std::size_t n = probs.dim(0);
  if (n == 0) throw ConfigError("cannot score an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (nn::argmax(probs.row(i)) == nn::argmax(labels.row(i))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double compute_accuracy(nn::Model& model, const data::LabeledDataset& test) {
  if (test.size() == 0) throw ConfigError("accuracy over an empty test set");
  return match_rate(nn::predict(model, test.inputs), test.labels);
}

double compute_asr(nn::Model& model, const data::LabeledDataset& eval_poison_set) {
  if (eval_poison_set.size() == 0) throw ConfigError("attack success rate over an empty evaluation set");
  return match_rate(nn::predict(model, eval_poison_set.inputs), eval_poison_set.labels);
}

double relative_accuracy_drop(double baseline_accuracy, double accuracy) {
  if (!(baseline_accuracy > 0.0)) throw ConfigError("baseline accuracy must be positive");
  return (baseline_accuracy - accuracy) / baseline_accuracy;
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ConfigError("auc inputs differ in length");
  // Rank-sum form: sort once, give tied runs their average rank.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw ConfigError("auc needs both positive and negative samples");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

}  // namespace hasnets::eval
