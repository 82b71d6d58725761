#include "hasnets/strip.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <unordered_set>

#include "hasnets/errors.hpp"
#include "hasnets/rng.hpp"

namespace hasnets::detect {

namespace {
constexpr double kEntropyFloor = 1e-12;
}

void StripConfig::validate() const {
  if (K == 0) throw ConfigError("strip K must be at least 1");
  if (!(frr > 0.0 && frr < 1.0)) throw ConfigError("strip frr must be in (0, 1)");
  if (!(blend > 0.0 && blend < 1.0)) throw ConfigError("strip blend weight must be in (0, 1)");
  if (overlay_pool.size() < K) {
    throw ConfigError("strip overlay pool has " + std::to_string(overlay_pool.size()) +
                      " images, need at least K = " + std::to_string(K));
  }
}

double entropy(std::span<const double> probs) {
  if (probs.empty()) throw ConfigError("entropy of an empty row");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("entropy: negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("entropy: row does not sum to 1");
  double h = 0.0;
  for (double p : probs) h -= p * std::log2(p + kEntropyFloor);
  return std::clamp(h, 0.0, std::log2(static_cast<double>(probs.size())));
}

double strip_score(nn::Model& model, std::span<const double> input, const StripConfig& cfg,
                   std::uint64_t seed) {
  cfg.validate();
  const nn::Tensor& pool = cfg.overlay_pool.inputs;
  const std::size_t stride = pool.row_size();
  if (input.size() != stride) throw ConfigError("strip input does not match the overlay image shape");

  std::vector<std::size_t> all(pool.dim(0));
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  std::vector<std::size_t> picks;
  picks.reserve(cfg.K);
  std::sample(all.begin(), all.end(), std::back_inserter(picks), cfg.K, rng);

  nn::Shape shape = pool.shape();
  shape[0] = cfg.K;
  nn::Tensor batch(shape);
  for (std::size_t k = 0; k < cfg.K; ++k) {
    const auto overlay = pool.row(picks[k]);
    auto out = batch.row(k);
    for (std::size_t i = 0; i < stride; ++i) {
      out[i] = std::clamp((1.0 - cfg.blend) * input[i] + cfg.blend * overlay[i], 0.0, 1.0);
    }
  }
  const nn::Tensor probs = model.forward(batch, false);
  double total = 0.0;
  for (std::size_t k = 0; k < cfg.K; ++k) total += entropy(probs.row(k));
  return total / static_cast<double>(cfg.K);
}

std::uint64_t strip_input_seed(std::uint64_t run_seed, std::uint64_t id) {
  return combine_seed(substream_seed(run_seed, "strip"), id);
}

std::vector<double> strip_scores(nn::Model& model, const data::LabeledDataset& inputs,
                                 const StripConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  std::unordered_set<std::uint64_t> pool_ids(cfg.overlay_pool.ids.begin(), cfg.overlay_pool.ids.end());
  std::vector<double> scores(inputs.size());
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    if (pool_ids.count(inputs.ids[r])) {
      throw ConfigError("input id " + std::to_string(inputs.ids[r]) + " is also in the overlay pool");
    }
    scores[r] = strip_score(model, inputs.inputs.row(r), cfg, strip_input_seed(run_seed, inputs.ids[r]));
  }
  return scores;
}

double threshold_from_scores(std::vector<double> scores, double frr) {
  if (scores.empty()) throw ConfigError("cannot calibrate a threshold from no scores");
  if (!(frr > 0.0 && frr < 1.0)) throw ConfigError("strip frr must be in (0, 1)");
  std::sort(scores.begin(), scores.end());
  const auto allowed = static_cast<std::size_t>(std::ceil(frr * static_cast<double>(scores.size())));
  return scores[allowed == 0 ? 0 : allowed - 1];
}

Calibration calibrate_threshold(nn::Model& model, const data::LabeledDataset& clean,
                                const StripConfig& cfg, std::uint64_t run_seed) {
  Calibration c;
  c.scores = strip_scores(model, clean, cfg, run_seed);
  c.threshold = threshold_from_scores(c.scores, cfg.frr);
  c.small_sample_warning = static_cast<double>(clean.size()) < 1.0 / cfg.frr;
  return c;
}

StripReport make_report(std::span<const std::uint64_t> ids, std::span<const double> scores,
                        std::span<const std::uint8_t> poison_flags, double threshold) {
  if (ids.size() != scores.size() || ids.size() != poison_flags.size()) {
    throw ConfigError("strip report inputs differ in length");
  }
  StripReport rep;
  rep.threshold = threshold;
  rep.ids.assign(ids.begin(), ids.end());
  rep.scores.assign(scores.begin(), scores.end());
  rep.poison_flags.assign(poison_flags.begin(), poison_flags.end());
  std::size_t poisoned = 0, missed = 0, clean = 0, rejected = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool flag = scores[i] < threshold;
    rep.flagged.push_back(flag ? 1 : 0);
    if (poison_flags[i]) {
      ++poisoned;
      if (!flag) ++missed;
    } else {
      ++clean;
      if (flag) ++rejected;
    }
  }
  if (poisoned) rep.far = static_cast<double>(missed) / static_cast<double>(poisoned);
  if (clean) rep.frr = static_cast<double>(rejected) / static_cast<double>(clean);
  return rep;
}

StripReport scan(nn::Model& model, const data::LabeledDataset& inputs, double threshold,
                 const StripConfig& cfg, std::uint64_t run_seed) {
  const auto scores = strip_scores(model, inputs, cfg, run_seed);
  return make_report(inputs.ids, scores, inputs.poison_flags, threshold);
}

void write_scan_csv(const std::filesystem::path& path, const StripReport& report) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "id,score,flagged,poison_flag\n" << std::setprecision(17);
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    out << report.ids[i] << ',' << report.scores[i] << ',' << int(report.flagged[i]) << ','
        << int(report.poison_flags[i]) << '\n';
  }
}

}  // namespace hasnets::detect
