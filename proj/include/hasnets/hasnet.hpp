#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hasnets/dataset.hpp"
#include "hasnets/loss.hpp"
#include "hasnets/model.hpp"
#include "hasnets/optimizer.hpp"
#include "hasnets/rng.hpp"

namespace hasnets::defense {

enum class SampleStatus { selected, retained, removed };
std::string to_string(SampleStatus status);

struct LedgerEntry {
  std::uint64_t id = 0;
  std::size_t row = 0;  // row in the training dataset the ledger was built from
  double neg_gamma = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  SampleStatus status = SampleStatus::selected;
};

/// Per-sample trust state across heal-and-select iterations. Starts with
/// every sample selected and -gamma = 0. Removal is absorbing.
class TrustLedger {
 public:
  TrustLedger() = default;
  explicit TrustLedger(std::span<const std::uint64_t> ids);

  const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }
  bool contains(std::uint64_t id) const { return index_.count(id) != 0; }
  const LedgerEntry& at(std::uint64_t id) const;
  LedgerEntry& at(std::uint64_t id);

  /// Dataset rows of the candidate pool D_T (everything not removed).
  std::vector<std::size_t> active_rows() const;
  /// Dataset rows of D_S.
  std::vector<std::size_t> selected_rows() const;
  std::size_t active_count() const;
  std::size_t selected_count() const;
  std::size_t removed_count() const;

  void set_status(std::uint64_t id, SampleStatus status);

 private:
  std::vector<LedgerEntry> entries_;  // sorted by id
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

using LossProbe = std::map<std::uint64_t, double>;

/// Evaluation-mode per-sample losses for the given dataset rows, keyed by id.
LossProbe probe_losses(nn::Model& model, const data::LabeledDataset& dataset,
                       std::span<const std::size_t> rows, nn::LossKind loss,
                       std::size_t chunk = 256);
LossProbe probe_losses(nn::Model& model, const data::LabeledDataset& dataset, nn::LossKind loss);

/// -gamma <- s (l2 - l1) + (1 - s)(-gamma) for every non-removed id; also
/// records l1 and l2 on the entries.
void update_trust(TrustLedger& ledger, const LossProbe& l1, const LossProbe& l2, double s);

struct Thresholds {
  double mean = 0.0;  // of -gamma over non-removed samples
  double max = 0.0;
  double m = 0.0;     // selection threshold: mean
  double m2 = 0.0;    // removal threshold: (1 - d) mean + d max
};

/// Throws DefenseCollapse when no sample is left.
Thresholds thresholds(const TrustLedger& ledger, double d);

enum class Policy { policy1, policy2 };
Policy parse_policy(std::string_view text);
std::string to_string(Policy policy);

struct SelectionResult {
  std::vector<std::uint64_t> selected;    // D_S
  std::vector<std::uint64_t> retained;    // D_T
  std::vector<std::uint64_t> removed_now;
  bool collapse_warning = false;          // D_S came out empty
};

/// policy2: D_S = {-gamma < m, l1 > tau}, D_T = {-gamma < m2, l1 > tau}.
/// policy1: one cut at 0.9 mean + 0.1 max, D_S = D_T. Everything else in the
/// current pool is removed.
SelectionResult select(TrustLedger& ledger, const Thresholds& t, double tau, Policy policy);

struct HasNetConfig {
  double s = 0.3;
  double d = 0.4;
  double tau = 1e-8;
  std::size_t heal_epochs = 2;
  std::size_t max_iterations = 15;
  Policy policy = Policy::policy2;

  void validate() const;
};

struct GradShapeConfig {
  double clip_norm = 4.0;
  double noise_multiplier = 0.01;
  std::size_t microbatch = 1;

  void validate(std::size_t batch_size) const;
};

struct IterationRecord {
  std::size_t iteration = 0;  // 1-based
  std::size_t trained_on = 0; // |D_S| used for this iteration's training epoch
  std::size_t selected = 0;   // |D_S| after selection
  std::size_t retained = 0;   // |D_T| after selection
  std::size_t removed_now = 0;
  std::size_t removed_total = 0;
  Thresholds thresholds;
  bool collapse_warning = false;
  TrustLedger snapshot;       // ledger state after selection
};

using IterationObserver = std::function<void(const IterationRecord&, nn::Model&)>;
/// Called after each completed epoch (1-based) of the epoch-loop trainers.
using EpochObserver = std::function<void(std::size_t epoch, nn::Model&)>;

struct HasNetResult {
  TrustLedger ledger;
  std::vector<IterationRecord> history;
};

/// Shuffles `rows` and runs one pass of minibatch SGD over them. Returns the
/// mean training loss.
double train_epoch(nn::Model& model, nn::Optimizer& optimizer, const data::LabeledDataset& dataset,
                   std::vector<std::size_t> rows, Rng& shuffle_rng, nn::LossKind loss);

/// Heal-and-select training. Each iteration: one epoch on D_S, probe l1 over
/// D_T, heal_epochs epochs on the healing set, probe l2 over D_T, update
/// trust, compute thresholds, select.
HasNetResult train_hasnet(nn::Model& model, const data::LabeledDataset& train,
                          const data::LabeledDataset& heal, const HasNetConfig& cfg,
                          nn::Optimizer& optimizer, std::uint64_t seed,
                          nn::LossKind loss = nn::LossKind::cross_entropy,
                          const IterationObserver& observer = {});

void train_undefended(nn::Model& model, const data::LabeledDataset& train, std::size_t epochs,
                      nn::Optimizer& optimizer, std::uint64_t seed,
                      nn::LossKind loss = nn::LossKind::cross_entropy,
                      const EpochObserver& observer = {});

struct GradShapeStats {
  std::size_t microbatches = 0;
  std::size_t clipped = 0;
  double max_raw_norm = 0.0;
  double max_clipped_norm = 0.0;
};

/// Scales `grad` in place to norm at most clip_norm; returns the original norm.
double clip_to_norm(std::span<double> grad, double clip_norm);

/// Per-microbatch clipping plus Gaussian noise (std noise_multiplier *
/// clip_norm per coordinate) on the summed gradient, averaged over the
/// microbatches of each batch.
GradShapeStats train_gradshape(nn::Model& model, const data::LabeledDataset& train,
                               std::size_t epochs, const GradShapeConfig& cfg,
                               nn::Optimizer& optimizer, std::uint64_t seed,
                               nn::LossKind loss = nn::LossKind::cross_entropy,
                               const EpochObserver& observer = {});

/// Common interface over the three training strategies.
class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual std::string name() const = 0;
  virtual void train(nn::Model& model, const data::LabeledDataset& train, nn::Optimizer& optimizer,
                     std::uint64_t seed) = 0;
};

class UndefendedTrainer final : public Trainer {
 public:
  UndefendedTrainer(std::size_t epochs, nn::LossKind loss, EpochObserver observer = {})
      : epochs_(epochs), loss_(loss), observer_(std::move(observer)) {}
  std::string name() const override { return "undefended"; }
  void train(nn::Model& model, const data::LabeledDataset& train, nn::Optimizer& optimizer,
             std::uint64_t seed) override;

 private:
  std::size_t epochs_;
  nn::LossKind loss_;
  EpochObserver observer_;
};

class GradShapeTrainer final : public Trainer {
 public:
  GradShapeTrainer(std::size_t epochs, GradShapeConfig cfg, nn::LossKind loss,
                   EpochObserver observer = {})
      : epochs_(epochs), cfg_(cfg), loss_(loss), observer_(std::move(observer)) {}
  std::string name() const override { return "gradshape"; }
  void train(nn::Model& model, const data::LabeledDataset& train, nn::Optimizer& optimizer,
             std::uint64_t seed) override;
  const GradShapeStats& stats() const noexcept { return stats_; }

 private:
  std::size_t epochs_;
  GradShapeConfig cfg_;
  nn::LossKind loss_;
  EpochObserver observer_;
  GradShapeStats stats_;
};

class HasNetTrainer final : public Trainer {
 public:
  HasNetTrainer(const data::LabeledDataset& heal, HasNetConfig cfg, nn::LossKind loss,
                IterationObserver observer = {})
      : heal_(heal), cfg_(cfg), loss_(loss), observer_(std::move(observer)) {}
  std::string name() const override { return "hasnet"; }
  void train(nn::Model& model, const data::LabeledDataset& train, nn::Optimizer& optimizer,
             std::uint64_t seed) override;
  const HasNetResult& result() const noexcept { return result_; }

 private:
  const data::LabeledDataset& heal_;
  HasNetConfig cfg_;
  nn::LossKind loss_;
  IterationObserver observer_;
  HasNetResult result_;
};

}  // namespace hasnets::defense
