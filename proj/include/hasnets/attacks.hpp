#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hasnets/dataset.hpp"

namespace hasnets::attack {

enum class TriggerKind { patch, noise };

struct PatchCell {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t channel = 0;
  double value = 1.0;

  auto position() const { return std::tuple(row, col, channel); }
  bool operator==(const PatchCell&) const = default;
};

/// A patch overwrites a fixed set of cells; a noise trigger adds a full-image
/// field bounded by +-amplitude and clamps to [0, 1].
struct Trigger {
  TriggerKind kind = TriggerKind::patch;
  std::vector<PatchCell> cells;  // patch; sorted by position, unique
  nn::Tensor field;              // noise; per-sample image shape
  double amplitude = 0.0;
  std::uint64_t seed = 0;

  static Trigger from_cells(std::vector<PatchCell> cells);
  void validate(const nn::Shape& image) const;
};

/// size x size square of `value` in the bottom-right corner, `inset` pixels
/// from both edges, on every channel.
Trigger corner_patch(const nn::Shape& image, std::size_t size = 4, std::size_t inset = 1,
                     double value = 1.0);
/// Cells of `patch` in the right half of its column range (a subset of it).
Trigger right_half(const Trigger& patch);
/// Field drawn once from U(-amplitude, amplitude) with the given seed.
Trigger noise_trigger(const nn::Shape& image, double amplitude, std::uint64_t seed);

bool is_subset(const Trigger& inner, const Trigger& outer);
/// Cell-set union; shared cells must carry equal values.
Trigger patch_union(const Trigger& a, const Trigger& b);

void stamp(std::span<double> image, const nn::Shape& image_shape, const Trigger& trigger);

/// Structured text: "kind = patch" plus one "cell = row col channel value"
/// line per cell, or "kind = noise" with "amplitude" and "seed".
Trigger parse_trigger(std::string_view text, const nn::Shape& image);
std::string format_trigger(const Trigger& trigger);
Trigger load_trigger_file(const std::filesystem::path& path, const nn::Shape& image);

/// eps on the target class, (1 - eps)/(N - 1) elsewhere. eps in [0.1, 1].
std::vector<double> distributed_label(std::span<const double> one_hot, double epsilon);
std::vector<double> distributed_label(std::size_t target, double epsilon, std::size_t classes);

enum class AttackMode { none, conventional, epsilon, epsilon2, invisible, all_trojan };
enum class SelectionMode { first_k, seeded_random };

AttackMode parse_attack_mode(std::string_view text);
std::string to_string(AttackMode mode);
SelectionMode parse_selection_mode(std::string_view text);
std::string to_string(SelectionMode mode);

/// Either a sample count ("600") or a percentage of the training set ("1%").
struct Budget {
  bool is_fraction = false;
  double fraction = 0.0;
  std::size_t count = 0;

  static Budget parse(std::string_view text);
  static Budget samples(std::size_t n) { return {false, 0.0, n}; }
  static Budget percent(double p) { return {true, p / 100.0, 0}; }
  std::size_t resolve(std::size_t n) const;
  std::string to_string() const;
};

struct PoisonPlan {
  AttackMode mode = AttackMode::conventional;
  Budget budget = Budget::samples(0);
  double epsilon = 1.0;
  std::size_t target_class = 0;  // C1 for epsilon2
  std::size_t second_target = 1;  // C2, epsilon2 only
  Trigger primary;    // Z1 (or the noise field for invisible)
  Trigger secondary;  // Z2, epsilon2 only
  SelectionMode selection = SelectionMode::first_k;

  void validate(const nn::Shape& image, std::size_t classes) const;
};

/// Stamps and relabels the selected samples and sets their poison flags.
/// epsilon2 splits the budget into thirds: Z1 -> C1, Z2 -> C2, Z1 u Z2 -> C1.
data::LabeledDataset apply_plan(const data::LabeledDataset& train, const PoisonPlan& plan,
                                std::uint64_t seed);

/// Every test sample whose label class differs from `target_class`, stamped
/// and labelled as `target_class`. Used only to measure attack success.
data::LabeledDataset make_eval_poison_set(const data::LabeledDataset& test, const Trigger& trigger,
                                          std::size_t target_class);

}  // namespace hasnets::attack
