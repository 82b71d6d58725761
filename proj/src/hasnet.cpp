#include "hasnets/hasnet.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include "hasnets/errors.hpp"
#include "hasnets/training.hpp"

// Nothing in this file may consult ground-truth poison labels; the defense
// and the baselines see only inputs and (possibly poisoned) label rows.

namespace hasnets::defense {

std::string to_string(SampleStatus status) {
  switch (status) {
    case SampleStatus::selected: return "selected";
    case SampleStatus::retained: return "retained";
    case SampleStatus::removed: return "removed";
  }
  return "removed";
}

TrustLedger::TrustLedger(std::span<const std::uint64_t> ids) {
  entries_.reserve(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) entries_.push_back({ids[r], r});
  std::sort(entries_.begin(), entries_.end(),
            [](const LedgerEntry& a, const LedgerEntry& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i].id, i).second) throw ConfigError("duplicate id in ledger");
  }
}

const LedgerEntry& TrustLedger::at(std::uint64_t id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw ConsistencyError("id " + std::to_string(id) + " not in ledger");
  return entries_[it->second];
}

LedgerEntry& TrustLedger::at(std::uint64_t id) {
  return const_cast<LedgerEntry&>(std::as_const(*this).at(id));
}

std::vector<std::size_t> TrustLedger::active_rows() const {
  std::vector<std::size_t> rows;
  for (const auto& e : entries_) {
    if (e.status != SampleStatus::removed) rows.push_back(e.row);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::vector<std::size_t> TrustLedger::selected_rows() const {
  std::vector<std::size_t> rows;
  for (const auto& e : entries_) {
    if (e.status == SampleStatus::selected) rows.push_back(e.row);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::size_t TrustLedger::active_count() const { return entries_.size() - removed_count(); }

std::size_t TrustLedger::selected_count() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) {
    return e.status == SampleStatus::selected;
  }));
}

std::size_t TrustLedger::removed_count() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) {
    return e.status == SampleStatus::removed;
  }));
}

void TrustLedger::set_status(std::uint64_t id, SampleStatus status) {
  LedgerEntry& e = at(id);
  if (e.status == SampleStatus::removed && status != SampleStatus::removed) {
    throw ConsistencyError("id " + std::to_string(id) + " was removed and cannot re-enter");
  }
  e.status = status;
}

LossProbe probe_losses(nn::Model& model, const data::LabeledDataset& dataset,
                       std::span<const std::size_t> rows, nn::LossKind loss, std::size_t chunk) {
  if (rows.empty()) throw ConfigError("loss probe over an empty set");
  LossProbe out;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const auto part = rows.subspan(start, std::min(chunk, rows.size() - start));
    const nn::Tensor probs = model.forward(nn::gather_rows(dataset.inputs, part), false);
    const auto losses = nn::loss_per_sample(probs, nn::gather_rows(dataset.labels, part), loss);
    for (std::size_t i = 0; i < part.size(); ++i) out.emplace(dataset.ids[part[i]], losses[i]);
  }
  return out;
}

LossProbe probe_losses(nn::Model& model, const data::LabeledDataset& dataset, nn::LossKind loss) {
  std::vector<std::size_t> rows(dataset.size());
  std::iota(rows.begin(), rows.end(), 0);
  return probe_losses(model, dataset, rows, loss);
}

void update_trust(TrustLedger& ledger, const LossProbe& l1, const LossProbe& l2, double s) {
  if (!(s > 0.0 && s <= 1.0)) throw ConfigError("smoothing s must be in (0, 1]");
  for (const auto& e : ledger.entries()) {
    if (e.status == SampleStatus::removed) continue;
    const auto a = l1.find(e.id);
    const auto b = l2.find(e.id);
    if (a == l1.end() || b == l2.end()) {
      throw ConsistencyError("loss probe is missing id " + std::to_string(e.id));
    }
    LedgerEntry& entry = ledger.at(e.id);
    entry.l1 = a->second;
    entry.l2 = b->second;
    entry.neg_gamma = s * (entry.l2 - entry.l1) + (1.0 - s) * entry.neg_gamma;
  }
}

Thresholds thresholds(const TrustLedger& ledger, double d) {
  if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("deviation d must be in [0, 1]");
  double sum = 0.0;
  double max = -std::numeric_limits<double>::infinity();
  std::size_t n = 0;
  for (const auto& e : ledger.entries()) {
    if (e.status == SampleStatus::removed) continue;
    sum += e.neg_gamma;
    max = std::max(max, e.neg_gamma);
    ++n;
  }
  if (n == 0) throw DefenseCollapse("every training sample has been removed");
  Thresholds t;
  t.mean = sum / static_cast<double>(n);
  // Rounding in the sum can nudge the mean past the max when all values tie.
  t.mean = std::min(t.mean, max);
  t.max = max;
  t.m = t.mean;
  t.m2 = (1.0 - d) * t.mean + d * t.max;
  t.m2 = std::max(t.m2, t.m);
  return t;
}

Policy parse_policy(std::string_view text) {
  if (text == "policy1") return Policy::policy1;
  if (text == "policy2") return Policy::policy2;
  throw ConfigError("unknown policy '" + std::string(text) + "' (policy1 | policy2)");
}

std::string to_string(Policy policy) { return policy == Policy::policy1 ? "policy1" : "policy2"; }

SelectionResult select(TrustLedger& ledger, const Thresholds& t, double tau, Policy policy) {
  const double select_cut = policy == Policy::policy1 ? 0.9 * t.mean + 0.1 * t.max : t.m;
  const double retain_cut = policy == Policy::policy1 ? select_cut : t.m2;
  SelectionResult result;
  std::vector<std::pair<std::uint64_t, SampleStatus>> updates;
  for (const auto& e : ledger.entries()) {
    if (e.status == SampleStatus::removed) continue;
    const bool above_floor = e.l1 > tau;
    if (above_floor && e.neg_gamma < select_cut) {
      result.selected.push_back(e.id);
      result.retained.push_back(e.id);
      updates.emplace_back(e.id, SampleStatus::selected);
    } else if (above_floor && e.neg_gamma < retain_cut) {
      result.retained.push_back(e.id);
      updates.emplace_back(e.id, SampleStatus::retained);
    } else {
      result.removed_now.push_back(e.id);
      updates.emplace_back(e.id, SampleStatus::removed);
    }
  }
  for (const auto& [id, status] : updates) ledger.set_status(id, status);
  result.collapse_warning = result.selected.empty();
  return result;
}

void HasNetConfig::validate() const {
  if (!(s > 0.0 && s <= 1.0)) throw ConfigError("hasnet s must be in (0, 1]");
  if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("hasnet d must be in [0, 1]");
  if (!(tau >= 0.0)) throw ConfigError("hasnet tau must be nonnegative");
  if (heal_epochs == 0) throw ConfigError("hasnet heal_epochs must be positive");
  if (max_iterations == 0) throw ConfigError("hasnet max_iterations must be at least 1");
}

void GradShapeConfig::validate(std::size_t batch_size) const {
  if (!(clip_norm > 0.0)) throw ConfigError("gradshape clip_norm must be positive");
  if (!(noise_multiplier >= 0.0)) throw ConfigError("gradshape noise_multiplier must be nonnegative");
  if (microbatch == 0 || batch_size % microbatch != 0) {
    throw ConfigError("gradshape microbatch size must divide the batch size");
  }
}

double train_epoch(nn::Model& model, nn::Optimizer& optimizer, const data::LabeledDataset& dataset,
                   std::vector<std::size_t> rows, Rng& shuffle_rng, nn::LossKind loss) {
  if (rows.empty()) return 0.0;
  std::shuffle(rows.begin(), rows.end(), shuffle_rng);
  const std::size_t batch = optimizer.settings().batch_size;
  double total = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += batch) {
    const std::span<const std::size_t> part(rows.data() + start, std::min(batch, rows.size() - start));
    const double mean = nn::backward_and_step(model, nn::gather_rows(dataset.inputs, part),
                                              nn::gather_rows(dataset.labels, part), optimizer, loss);
    total += mean * static_cast<double>(part.size());
  }
  return total / static_cast<double>(rows.size());
}

HasNetResult train_hasnet(nn::Model& model, const data::LabeledDataset& train,
                          const data::LabeledDataset& heal, const HasNetConfig& cfg,
                          nn::Optimizer& optimizer, std::uint64_t seed, nn::LossKind loss,
                          const IterationObserver& observer) {
  cfg.validate();
  if (train.size() == 0 || heal.size() == 0) throw ConfigError("hasnet needs training and healing data");
  const std::set<std::uint64_t> train_ids(train.ids.begin(), train.ids.end());
  for (std::uint64_t id : heal.ids) {
    if (train_ids.count(id)) {
      throw ConfigError("healing id " + std::to_string(id) + " also appears in the training set");
    }
  }
  std::vector<std::size_t> heal_rows(heal.size());
  std::iota(heal_rows.begin(), heal_rows.end(), 0);

  Rng shuffle_rng(substream_seed(seed, "shuffle"));
  HasNetResult result;
  result.ledger = TrustLedger(train.ids);
  TrustLedger& ledger = result.ledger;

  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    IterationRecord record;
    record.iteration = it;
    try {
      const auto selected = ledger.selected_rows();
      record.trained_on = selected.size();
      if (selected.empty()) {
        std::cerr << "warning: iteration " << it << ": no selected samples, healing only\n";
      } else {
        train_epoch(model, optimizer, train, selected, shuffle_rng, loss);
      }
      const auto pool = ledger.active_rows();
      const LossProbe l1 = probe_losses(model, train, pool, loss);
      for (std::size_t e = 0; e < cfg.heal_epochs; ++e) {
        train_epoch(model, optimizer, heal, heal_rows, shuffle_rng, loss);
      }
      const LossProbe l2 = probe_losses(model, train, pool, loss);
      update_trust(ledger, l1, l2, cfg.s);
      record.thresholds = thresholds(ledger, cfg.d);
      const SelectionResult sel = select(ledger, record.thresholds, cfg.tau, cfg.policy);
      record.selected = sel.selected.size();
      record.retained = sel.retained.size();
      record.removed_now = sel.removed_now.size();
      record.removed_total = ledger.removed_count();
      record.collapse_warning = sel.collapse_warning;
      if (sel.collapse_warning) {
        std::cerr << "warning: iteration " << it << ": selection left D_S empty\n";
      }
    } catch (const NumericError& e) {
      throw NumericError("hasnet iteration " + std::to_string(it) + ": " + e.what());
    } catch (const DefenseCollapse& e) {
      throw DefenseCollapse("hasnet iteration " + std::to_string(it) + ": " + e.what());
    }
    record.snapshot = ledger;
    if (observer) observer(record, model);
    result.history.push_back(std::move(record));
    // reported first, so the ledger shows the iteration that emptied D_T
    if (ledger.active_count() == 0) {
      throw DefenseCollapse("hasnet iteration " + std::to_string(it) + ": every training sample has been removed");
    }
  }
  return result;
}

void train_undefended(nn::Model& model, const data::LabeledDataset& train, std::size_t epochs,
                      nn::Optimizer& optimizer, std::uint64_t seed, nn::LossKind loss,
                      const EpochObserver& observer) {
  Rng shuffle_rng(substream_seed(seed, "shuffle"));
  std::vector<std::size_t> rows(train.size());
  std::iota(rows.begin(), rows.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    try {
      train_epoch(model, optimizer, train, rows, shuffle_rng, loss);
    } catch (const NumericError& err) {
      throw NumericError("epoch " + std::to_string(e + 1) + ": " + err.what());
    }
    if (observer) observer(e + 1, model);
  }
}

double clip_to_norm(std::span<double> grad, double clip_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double factor = clip_norm / norm;
    for (double& g : grad) g *= factor;
  }
  return norm;
}

GradShapeStats train_gradshape(nn::Model& model, const data::LabeledDataset& train,
                               std::size_t epochs, const GradShapeConfig& cfg,
                               nn::Optimizer& optimizer, std::uint64_t seed, nn::LossKind loss,
                      const EpochObserver& observer) {
  const std::size_t batch = optimizer.settings().batch_size;
  cfg.validate(batch);
  Rng shuffle_rng(substream_seed(seed, "shuffle"));
  Rng noise_rng(substream_seed(seed, "gradnoise"));
  std::normal_distribution<double> noise(0.0, cfg.noise_multiplier * cfg.clip_norm);

  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const nn::Tensor* p : std::as_const(model).parameters()) {
    sizes.push_back(p->size());
    total += p->size();
  }
  std::vector<double> flat(total);
  std::vector<double> sum(total);
  std::vector<std::vector<double>> step_grads(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) step_grads[i].resize(sizes[i]);

  GradShapeStats stats;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    // same per-epoch permutation as train_epoch
    std::vector<std::size_t> rows = order;
    std::shuffle(rows.begin(), rows.end(), shuffle_rng);
    for (std::size_t start = 0; start < rows.size(); start += batch) {
      const std::size_t end = std::min(start + batch, rows.size());
      std::fill(sum.begin(), sum.end(), 0.0);
      std::size_t micro_count = 0;
      for (std::size_t m = start; m < end; m += cfg.microbatch) {
        const std::span<const std::size_t> part(rows.data() + m, std::min(cfg.microbatch, end - m));
        try {
          nn::compute_gradients(model, nn::gather_rows(train.inputs, part),
                                nn::gather_rows(train.labels, part), loss, /*training=*/true);
        } catch (const NumericError& err) {
          throw NumericError("epoch " + std::to_string(e + 1) + ": " + err.what());
        }
        std::size_t off = 0;
        for (const nn::Tensor* p : std::as_const(model).parameters()) {
          std::copy(p->grad().begin(), p->grad().end(), flat.begin() + static_cast<std::ptrdiff_t>(off));
          off += p->size();
        }
        const double raw = clip_to_norm(flat, cfg.clip_norm);
        double clipped_sq = 0.0;
        for (double g : flat) clipped_sq += g * g;
        stats.max_raw_norm = std::max(stats.max_raw_norm, raw);
        stats.max_clipped_norm = std::max(stats.max_clipped_norm, std::sqrt(clipped_sq));
        if (raw > cfg.clip_norm) ++stats.clipped;
        ++stats.microbatches;
        ++micro_count;
        for (std::size_t k = 0; k < total; ++k) sum[k] += flat[k];
      }
      const double scale = 1.0 / static_cast<double>(micro_count);
      std::size_t off = 0;
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        for (std::size_t k = 0; k < sizes[i]; ++k) {
          const double n = cfg.noise_multiplier > 0.0 ? noise(noise_rng) : 0.0;
          step_grads[i][k] = (sum[off + k] + n) * scale;
        }
        off += sizes[i];
      }
      optimizer.step(model, step_grads);
    }
    if (observer) observer(e + 1, model);
  }
  return stats;
}

void UndefendedTrainer::train(nn::Model& model, const data::LabeledDataset& train,
                              nn::Optimizer& optimizer, std::uint64_t seed) {
  train_undefended(model, train, epochs_, optimizer, seed, loss_, observer_);
}

void GradShapeTrainer::train(nn::Model& model, const data::LabeledDataset& train,
                             nn::Optimizer& optimizer, std::uint64_t seed) {
  stats_ = train_gradshape(model, train, epochs_, cfg_, optimizer, seed, loss_, observer_);
}

void HasNetTrainer::train(nn::Model& model, const data::LabeledDataset& train,
                          nn::Optimizer& optimizer, std::uint64_t seed) {
  result_ = train_hasnet(model, train, heal_, cfg_, optimizer, seed, loss_, observer_);
}

}  // namespace hasnets::defense
