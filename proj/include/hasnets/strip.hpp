#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "hasnets/dataset.hpp"
#include "hasnets/model.hpp"

namespace hasnets::detect {

struct StripConfig {
  std::size_t K = 100;
  double frr = 0.01;
  double blend = 0.5;              // weight of the overlay image
  data::LabeledDataset overlay_pool;  // clean images; labels are ignored

  void validate() const;
};

/// Shannon entropy in bits with a 1e-12 floor inside the log, clamped to
/// [0, log2(classes)].
double entropy(std::span<const double> probs);

/// Mean output entropy over K blended copies of `input`. The overlays are
/// drawn without replacement from the pool using `seed`.
double strip_score(nn::Model& model, std::span<const double> input, const StripConfig& cfg,
                   std::uint64_t seed);

/// Seed used for the input with the given id under a run seed.
std::uint64_t strip_input_seed(std::uint64_t run_seed, std::uint64_t id);

/// Scores for every sample of `inputs`, seeded per id.
std::vector<double> strip_scores(nn::Model& model, const data::LabeledDataset& inputs,
                                 const StripConfig& cfg, std::uint64_t run_seed);

/// t = sorted[max(0, ceil(frr * n) - 1)]. Since flagging is strict (score < t)
/// at most ceil(frr * n) - 1 calibration inputs fall below it.
double threshold_from_scores(std::vector<double> scores, double frr);

struct Calibration {
  double threshold = 0.0;
  std::vector<double> scores;
  bool small_sample_warning = false;  // fewer than 1/frr calibration inputs
};

Calibration calibrate_threshold(nn::Model& model, const data::LabeledDataset& clean,
                                const StripConfig& cfg, std::uint64_t run_seed);

struct StripReport {
  double threshold = 0.0;
  std::vector<std::uint64_t> ids;
  std::vector<double> scores;
  std::vector<std::uint8_t> flagged;
  std::vector<std::uint8_t> poison_flags;
  std::optional<double> far;  // poisoned inputs not flagged; empty without poisoned inputs
  std::optional<double> frr;  // clean inputs flagged; empty without clean inputs
};

/// Flags inputs with score < threshold. Ground-truth flags are only used for
/// the FAR / FRR tallies.
StripReport make_report(std::span<const std::uint64_t> ids, std::span<const double> scores,
                        std::span<const std::uint8_t> poison_flags, double threshold);

StripReport scan(nn::Model& model, const data::LabeledDataset& inputs, double threshold,
                 const StripConfig& cfg, std::uint64_t run_seed);

/// id,score,flagged,poison_flag
void write_scan_csv(const std::filesystem::path& path, const StripReport& report);

}  // namespace hasnets::detect
