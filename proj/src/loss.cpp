#include "hasnets/loss.hpp"

#include <cmath>

#include "hasnets/errors.hpp"

namespace hasnets::nn {
namespace {

void check_pair(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape() || probs.rank() != 2) {
    throw ConfigError("loss: probabilities " + shape_string(probs.shape()) + " vs targets " +
                      shape_string(targets.shape()));
  }
}

}  // namespace

LossKind parse_loss_kind(std::string_view text) {
  if (text == "cross-entropy") return LossKind::cross_entropy;
  if (text == "squared-error") return LossKind::squared_error;
  throw ConfigError("unknown loss '" + std::string(text) + "' (cross-entropy | squared-error)");
}

std::string to_string(LossKind kind) {
  return kind == LossKind::cross_entropy ? "cross-entropy" : "squared-error";
}

void validate_distribution_rows(const Tensor& rows, double tolerance) {
  for (std::size_t i = 0; i < rows.dim(0); ++i) {
    double total = 0.0;
    for (double v : rows.row(i)) {
      if (!(v >= 0.0)) throw ConfigError("row " + std::to_string(i) + " has a negative entry");
      total += v;
    }
    if (std::abs(total - 1.0) > tolerance) {
      throw ConfigError("row " + std::to_string(i) + " sums to " + std::to_string(total) + ", not 1");
    }
  }
}

std::vector<double> loss_per_sample(const Tensor& probs, const Tensor& targets, LossKind kind) {
  check_pair(probs, targets);
  const std::size_t n = probs.dim(0);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = probs.row(i);
    const auto t = targets.row(i);
    double acc = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (kind == LossKind::cross_entropy) {
        if (t[c] != 0.0) acc -= t[c] * std::log(p[c] + kLogFloor);
      } else {
        const double d = p[c] - t[c];
        acc += d * d;
      }
    }
    // -ln(1 + 1e-12) is a hair below zero for a perfect prediction.
    out[i] = acc < 0.0 ? 0.0 : acc;
  }
  return out;
}

Tensor loss_gradient(const Tensor& probs, const Tensor& targets, LossKind kind, double scale) {
  check_pair(probs, targets);
  Tensor grad(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    grad[i] = kind == LossKind::cross_entropy ? -scale * targets[i] / (probs[i] + kLogFloor)
                                              : 2.0 * scale * (probs[i] - targets[i]);
  }
  return grad;
}

}  // namespace hasnets::nn
