#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hasnets/attacks.hpp"
#include "hasnets/dataset.hpp"
#include "hasnets/hasnet.hpp"
#include "hasnets/loss.hpp"
#include "hasnets/optimizer.hpp"

namespace hasnets::harness {

struct RunSection {
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string reference_model;   // checkpoint of a clean model; empty for none
  bool train_reference = false;  // train one on the unpoisoned split instead
};

struct DataSection {
  std::string source = "synth";  // synth | idx
  std::size_t synth_n = 10000;
  std::size_t classes = 10;
  std::size_t hw = 16;
  data::SynthOptions synth;
  std::string images;
  std::string labels;
  std::size_t max_samples = 0;
};

struct SplitSection {
  double healing_fraction = 0.15;
  std::size_t test_count = 2000;
  bool stratified = true;
};

struct AttackSection {
  attack::AttackMode mode = attack::AttackMode::conventional;
  attack::Budget budget = attack::Budget::percent(1.0);
  double epsilon = 1.0;
  std::size_t target_class = 0;
  std::size_t second_target = 1;
  attack::SelectionMode selection = attack::SelectionMode::first_k;
  std::size_t patch_size = 4;
  std::size_t patch_inset = 1;
  double patch_value = 1.0;
  double noise_amplitude = 0.1;
  std::string trigger_file;  // overrides the generated primary trigger
};

struct ModelSection {
  std::string architecture = "fmnist-desk";
  nn::LossKind loss = nn::LossKind::cross_entropy;
};

enum class TrainerKind { undefended, hasnet, gradshape };
TrainerKind parse_trainer_kind(std::string_view text);
std::string to_string(TrainerKind kind);

struct TrainerSection {
  TrainerKind kind = TrainerKind::undefended;
  std::size_t epochs = 20;  // undefended, gradshape and the reference model
  std::size_t checkpoint_every = 0;  // epochs or iterations between checkpoints; 0 = final only
};

struct StripSection {
  bool enabled = false;
  std::size_t K = 100;
  double frr = 0.01;
  double blend = 0.5;
  std::size_t pool_size = 500;         // overlay images, taken from the healing set
  std::size_t calibration_size = 500;  // clean calibration inputs, also from the healing set
  std::size_t scan_size = 500;         // clean test inputs and stamped inputs scanned
};

struct ExperimentConfig {
  RunSection run;
  DataSection data;
  SplitSection split;
  AttackSection attack;
  ModelSection model;
  nn::OptimizerSettings optimizer;
  TrainerSection trainer;
  defense::HasNetConfig hasnet;
  defense::GradShapeConfig gradshape;
  StripSection strip;

  /// Throws ConfigError on any value that cannot be used.
  void validate() const;
  /// Every key with its current value, one section per block.
  std::string serialize() const;
};

/// "section.key=value"
struct Override {
  std::string section;
  std::string key;
  std::string value;

  static Override parse(std::string_view text);
};

/// Parses key = value text with [section] headers, applies the overrides, and
/// validates. Unknown sections or keys are errors.
ExperimentConfig parse_config(std::string_view text, const std::vector<Override>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<Override>& overrides = {});

/// All known "section.key" names in serialization order.
std::vector<std::string> config_keys();

}  // namespace hasnets::harness
