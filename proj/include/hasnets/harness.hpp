#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hasnets/attacks.hpp"
#include "hasnets/config.hpp"
#include "hasnets/dataset.hpp"
#include "hasnets/hasnet.hpp"
#include "hasnets/model.hpp"
#include "hasnets/strip.hpp"

namespace hasnets::harness {

inline constexpr const char* kReportSchema = "hnr1";

/// Split, poisoned training set and the stamped evaluation set.
struct PreparedData {
  data::LabeledDataset clean_train;
  data::LabeledDataset train;  // after the poison plan
  data::LabeledDataset heal;
  data::LabeledDataset test;
  data::LabeledDataset eval_poison;  // empty when the attack mode is none
  attack::PoisonPlan plan;
};

/// Loads or synthesizes the data, splits it and applies the poison plan.
PreparedData prepare_data(const ExperimentConfig& cfg);
/// Dataset caches plus the primary trigger, as written by the poison command.
void save_prepared(const std::filesystem::path& dir, const PreparedData& prepared);
PreparedData load_prepared(const std::filesystem::path& dir, const ExperimentConfig& cfg);

nn::Model build_model(const ExperimentConfig& cfg, const nn::Shape& sample_shape);

struct ReportRow {
  std::string trainer;
  std::size_t iteration = 0;  // epoch for the epoch-loop trainers
  double accuracy = 0.0;
  std::optional<double> asr;
  std::size_t ds_size = 0;
  std::size_t dt_size = 0;
  std::size_t removed = 0;
  std::optional<double> neg_gamma_poisoned;
  std::optional<double> neg_gamma_clean;
  std::optional<double> auc;
};

std::string report_header();
std::string format_report(const std::vector<ReportRow>& rows);

/// Concatenates hnr1 reports, prefixing each row with its label. Throws
/// ConfigError when a header does not match.
std::string merge_reports(const std::vector<std::pair<std::string, std::string>>& labelled_reports);
/// Label is the parent directory name for files called report.csv, else the stem.
std::string merge_report_files(const std::vector<std::filesystem::path>& paths);

/// Ledger CSV rows for one snapshot: iteration,id,neg_gamma,l1,l2,status,poison_flag.
std::string format_ledger(std::size_t iteration, const defense::TrustLedger& ledger,
                          const data::LabeledDataset& train);

struct StripOutcome {
  detect::Calibration calibration;
  detect::StripReport report;
};

/// Overlay pool and calibration inputs come from the healing set; the scan
/// covers clean test inputs and stamped evaluation inputs.
StripOutcome run_strip(const ExperimentConfig& cfg, nn::Model& model, const PreparedData& prepared);

struct TrainOutcome {
  nn::Model model;
  std::vector<ReportRow> rows;
  std::optional<defense::HasNetResult> hasnet;
  std::optional<defense::GradShapeStats> gradshape;
};

/// Trains with the configured trainer, emitting one row per epoch or iteration.
/// With trainer.checkpoint_every > 0 and a nonempty checkpoint_dir, writes
/// checkpoint_dir/step_NNNN.hnm every that many epochs or iterations.
TrainOutcome train_stage(const ExperimentConfig& cfg, const PreparedData& prepared,
                         const std::filesystem::path& checkpoint_dir = {});

struct Summary {
  std::string trainer;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::optional<double> asr;
  std::optional<double> baseline_accuracy;
  std::optional<double> rad;
  std::optional<std::size_t> survivors;          // hasnet: final |D_T|
  std::optional<double> survivor_fraction;       // of the training set
  std::optional<double> survivor_target_rate;    // reference model votes for the target
  std::optional<double> strip_threshold;
  std::optional<double> strip_far;
  std::optional<double> strip_frr;
};

std::string summary_json(const Summary& summary);

struct ExperimentReport {
  std::vector<ReportRow> rows;
  Summary summary;
};

/// Full pipeline. Writes config.ini, report.csv, summary.json, model.hnm,
/// timings.csv, plus ledger.csv (hasnet) and strip_scan.csv (strip enabled).
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// --out flag, then HNF_OUT, then run.out.
std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg, const std::string& flag_value);

}  // namespace hasnets::harness
