#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "hasnets/tensor.hpp"

namespace hasnets::data {

/// Images with soft labels. `poison_flags` is ground truth for evaluation
/// only; trainers and defenses never consult it.
struct LabeledDataset {
  nn::Tensor inputs;  // [n, H, W, C], values in [0, 1]
  nn::Tensor labels;  // [n, classes], rows are distributions
  std::vector<std::uint64_t> ids;
  std::vector<std::uint8_t> poison_flags;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t num_classes() const { return labels.rank() == 2 ? labels.dim(1) : 0; }
  nn::Shape sample_shape() const;
  /// argmax of the label row (lowest index on ties).
  std::size_t label_class(std::size_t row) const;
  std::size_t poisoned_count() const;

  LabeledDataset select(std::span<const std::size_t> rows) const;
  /// Throws ConfigError when any structural invariant is broken.
  void validate() const;

  bool operator==(const LabeledDataset& other) const;
};

std::vector<double> one_hot(std::size_t cls, std::size_t classes);

/// MNIST-style IDX files (big-endian headers, magic 0x803 / 0x801). Pixels are
/// scaled by 1/255 and labels become one-hot rows. `max_samples` > 0 keeps
/// only the leading samples.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t classes = 10, std::size_t max_samples = 0);

struct SynthOptions {
  double radius_fraction = 0.28;  // class-centre ring radius / canvas edge
  double blob_sigma_fraction = 0.1;
  double centre_jitter = 0.6;     // pixels
  double background_noise = 0.08;
};

/// Class c is a Gaussian blob centred on a ring position specific to c, with
/// jittered centre and amplitude and additive background noise. Classes are
/// balanced (counts differ by at most one) and assigned in a seeded order.
LabeledDataset synth_blobs(std::size_t n, std::size_t classes, std::size_t hw, std::uint64_t seed,
                           const SynthOptions& options = {});

struct SplitSpec {
  double healing_fraction = 0.15;  // of the input size, in (0, 0.5)
  std::size_t test_count = 0;
  std::uint64_t seed = 0;
  bool stratified = true;  // equal per-class healing quota, remainder random
};

struct Split {
  LabeledDataset train;
  LabeledDataset heal;
  LabeledDataset test;
};

/// Disjoint train / heal / test partition. Must run before poisoning. Each
/// output keeps the input's row order.
Split split(const LabeledDataset& dataset, const SplitSpec& spec);

// Cache layout: "HND1", u64 n, H, W, C, classes, then n*H*W*C f64 inputs,
// n*classes f64 labels, n u64 ids, n u8 flags; little-endian.
void write_dataset(std::ostream& out, const LabeledDataset& dataset);
LabeledDataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& dataset);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace hasnets::data
