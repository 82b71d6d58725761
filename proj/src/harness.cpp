#include "hasnets/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hasnets/checkpoint.hpp"
#include "hasnets/errors.hpp"
#include "hasnets/metrics.hpp"
#include "hasnets/rng.hpp"
#include "hasnets/training.hpp"

namespace hasnets::harness {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw ConfigError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

attack::Trigger primary_trigger(const ExperimentConfig& cfg, const nn::Shape& image) {
  const auto& a = cfg.attack;
  if (!a.trigger_file.empty()) return attack::load_trigger_file(a.trigger_file, image);
  if (a.mode == attack::AttackMode::invisible) {
    return attack::noise_trigger(image, a.noise_amplitude, substream_seed(cfg.run.seed, "noise-trigger"));
  }
  return attack::corner_patch(image, a.patch_size, a.patch_inset, a.patch_value);
}

attack::PoisonPlan make_plan(const ExperimentConfig& cfg, attack::Trigger primary) {
  attack::PoisonPlan plan;
  plan.mode = cfg.attack.mode;
  plan.budget = cfg.attack.budget;
  plan.epsilon = cfg.attack.epsilon;
  plan.target_class = cfg.attack.target_class;
  plan.second_target = cfg.attack.second_target;
  plan.selection = cfg.attack.selection;
  plan.primary = std::move(primary);
  if (plan.mode == attack::AttackMode::epsilon2) plan.secondary = attack::right_half(plan.primary);
  return plan;
}

struct Timer {
  std::vector<std::pair<std::string, double>> phases;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void mark(const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    phases.emplace_back(phase, std::chrono::duration<double>(now - start).count());
    start = now;
  }
};

void fill_gamma_columns(ReportRow& row, const defense::TrustLedger& ledger,
                        const data::LabeledDataset& train) {
  std::vector<double> scores;
  std::vector<std::uint8_t> flags;
  double sum_p = 0.0, sum_c = 0.0;
  std::size_t n_p = 0, n_c = 0;
  for (const auto& e : ledger.entries()) {
    const std::uint8_t flag = train.poison_flags[e.row];
    scores.push_back(e.neg_gamma);
    flags.push_back(flag);
    if (flag) {
      sum_p += e.neg_gamma;
      ++n_p;
    } else {
      sum_c += e.neg_gamma;
      ++n_c;
    }
  }
  if (n_p) row.neg_gamma_poisoned = sum_p / static_cast<double>(n_p);
  if (n_c) row.neg_gamma_clean = sum_c / static_cast<double>(n_c);
  if (n_p && n_c) row.auc = eval::auc(scores, flags);
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  data::LabeledDataset all;
  if (cfg.data.source == "synth") {
    all = data::synth_blobs(cfg.data.synth_n, cfg.data.classes, cfg.data.hw,
                            substream_seed(cfg.run.seed, "synth-blobs"), cfg.data.synth);
  } else {
    all = data::load_idx(cfg.data.images, cfg.data.labels, cfg.data.classes, cfg.data.max_samples);
  }
  data::SplitSpec spec;
  spec.healing_fraction = cfg.split.healing_fraction;
  spec.test_count = cfg.split.test_count;
  spec.seed = substream_seed(cfg.run.seed, "split");
  spec.stratified = cfg.split.stratified;
  data::Split parts = data::split(all, spec);

  PreparedData p;
  const nn::Shape image = parts.train.sample_shape();
  p.plan = make_plan(cfg, cfg.attack.mode == attack::AttackMode::none ? attack::Trigger{}
                                                                      : primary_trigger(cfg, image));
  p.train = attack::apply_plan(parts.train, p.plan, cfg.run.seed);
  if (p.plan.mode != attack::AttackMode::none) {
    p.eval_poison = attack::make_eval_poison_set(parts.test, p.plan.primary, p.plan.target_class);
  }
  p.clean_train = std::move(parts.train);
  p.heal = std::move(parts.heal);
  p.test = std::move(parts.test);
  return p;
}

void save_prepared(const fs::path& dir, const PreparedData& p) {
  fs::create_directories(dir);
  data::save_dataset(dir / "clean_train.hnd", p.clean_train);
  data::save_dataset(dir / "train.hnd", p.train);
  data::save_dataset(dir / "heal.hnd", p.heal);
  data::save_dataset(dir / "test.hnd", p.test);
  if (p.plan.mode != attack::AttackMode::none) {
    data::save_dataset(dir / "eval_poison.hnd", p.eval_poison);
    write_text(dir / "trigger.txt", attack::format_trigger(p.plan.primary));
  }
  std::ostringstream flags;
  flags << "id,poison_flag\n";
  for (std::size_t r = 0; r < p.train.size(); ++r) {
    flags << p.train.ids[r] << ',' << int(p.train.poison_flags[r]) << '\n';
  }
  write_text(dir / "poison_flags.csv", flags.str());
}

PreparedData load_prepared(const fs::path& dir, const ExperimentConfig& cfg) {
  PreparedData p;
  p.clean_train = data::load_dataset(dir / "clean_train.hnd");
  p.train = data::load_dataset(dir / "train.hnd");
  p.heal = data::load_dataset(dir / "heal.hnd");
  p.test = data::load_dataset(dir / "test.hnd");
  if (fs::exists(dir / "trigger.txt")) {
    p.plan = make_plan(cfg, attack::parse_trigger(read_text(dir / "trigger.txt"), p.test.sample_shape()));
    p.eval_poison = data::load_dataset(dir / "eval_poison.hnd");
  } else {
    p.plan = make_plan(cfg, {});
    p.plan.mode = attack::AttackMode::none;
  }
  return p;
}

nn::Model build_model(const ExperimentConfig& cfg, const nn::Shape& sample_shape) {
  nn::Model model(sample_shape, nn::resolve_architecture(cfg.model.architecture, cfg.data.classes),
                  substream_seed(cfg.run.seed, "init"));
  model.seed_dropout(substream_seed(cfg.run.seed, "dropout"));
  return model;
}

std::string report_header() {
  return "schema,trainer,iteration,accuracy,asr,ds_size,dt_size,removed,neg_gamma_poisoned,"
         "neg_gamma_clean,auc";
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << report_header() << '\n';
  for (const ReportRow& r : rows) {
    out << kReportSchema << ',' << r.trainer << ',' << r.iteration << ',' << num(r.accuracy) << ','
        << opt(r.asr) << ',' << r.ds_size << ',' << r.dt_size << ',' << r.removed << ','
        << opt(r.neg_gamma_poisoned) << ',' << opt(r.neg_gamma_clean) << ',' << opt(r.auc) << '\n';
  }
  return out.str();
}

std::string merge_reports(const std::vector<std::pair<std::string, std::string>>& labelled) {
  std::ostringstream out;
  out << "run," << report_header() << '\n';
  for (const auto& [label, text] : labelled) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != report_header()) {
      throw ConfigError("report '" + label + "' does not carry the " + std::string(kReportSchema) + " header");
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line.rfind(std::string(kReportSchema) + ",", 0) != 0) {
        throw ConfigError("report '" + label + "' has a row without the schema tag");
      }
      out << label << ',' << line << '\n';
    }
  }
  return out.str();
}

std::string merge_report_files(const std::vector<fs::path>& paths) {
  std::vector<std::pair<std::string, std::string>> labelled;
  for (const fs::path& p : paths) {
    const std::string label = p.filename() == "report.csv" && p.has_parent_path()
                                  ? p.parent_path().filename().string()
                                  : p.stem().string();
    labelled.emplace_back(label, read_text(p));
  }
  return merge_reports(labelled);
}

std::string format_ledger(std::size_t iteration, const defense::TrustLedger& ledger,
                          const data::LabeledDataset& train) {
  std::ostringstream out;
  for (const auto& e : ledger.entries()) {
    out << iteration << ',' << e.id << ',' << num(e.neg_gamma) << ',' << num(e.l1) << ',' << num(e.l2)
        << ',' << defense::to_string(e.status) << ',' << int(train.poison_flags[e.row]) << '\n';
  }
  return out.str();
}

StripOutcome run_strip(const ExperimentConfig& cfg, nn::Model& model, const PreparedData& p) {
  const auto& s = cfg.strip;
  if (s.pool_size + s.calibration_size > p.heal.size()) {
    throw ConfigError("strip pool plus calibration (" + std::to_string(s.pool_size + s.calibration_size) +
                      ") exceeds the healing set (" + std::to_string(p.heal.size()) + ")");
  }
  Rng rng(substream_seed(cfg.run.seed, "strip-split"));
  std::vector<std::size_t> heal_rows(p.heal.size());
  std::iota(heal_rows.begin(), heal_rows.end(), 0);
  std::shuffle(heal_rows.begin(), heal_rows.end(), rng);
  std::vector<std::size_t> pool_rows(heal_rows.begin(), heal_rows.begin() + s.pool_size);
  std::vector<std::size_t> cal_rows(heal_rows.begin() + s.pool_size,
                                    heal_rows.begin() + s.pool_size + s.calibration_size);
  std::sort(pool_rows.begin(), pool_rows.end());
  std::sort(cal_rows.begin(), cal_rows.end());

  detect::StripConfig sc;
  sc.K = s.K;
  sc.frr = s.frr;
  sc.blend = s.blend;
  sc.overlay_pool = p.heal.select(pool_rows);

  auto pick = [&](const data::LabeledDataset& d) {
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(std::min(rows.size(), s.scan_size));
    std::sort(rows.begin(), rows.end());
    return d.select(rows);
  };
  const data::LabeledDataset clean_scan = pick(p.test);

  StripOutcome out;
  out.calibration = detect::calibrate_threshold(model, p.heal.select(cal_rows), sc, cfg.run.seed);
  if (out.calibration.small_sample_warning) {
    std::cerr << "warning: strip calibration set is smaller than 1/frr; the threshold is unstable\n";
  }
  std::vector<std::uint64_t> ids = clean_scan.ids;
  std::vector<double> scores = detect::strip_scores(model, clean_scan, sc, cfg.run.seed);
  std::vector<std::uint8_t> flags(clean_scan.size(), 0);
  if (p.plan.mode != attack::AttackMode::none) {
    const data::LabeledDataset poisoned_scan = pick(p.eval_poison);
    const auto ps = detect::strip_scores(model, poisoned_scan, sc, cfg.run.seed);
    ids.insert(ids.end(), poisoned_scan.ids.begin(), poisoned_scan.ids.end());
    scores.insert(scores.end(), ps.begin(), ps.end());
    flags.insert(flags.end(), poisoned_scan.size(), 1);
  }
  out.report = detect::make_report(ids, scores, flags, out.calibration.threshold);
  return out;
}

TrainOutcome train_stage(const ExperimentConfig& cfg, const PreparedData& p, const fs::path& checkpoint_dir) {
  TrainOutcome out{build_model(cfg, p.train.sample_shape()), {}, std::nullopt, std::nullopt};
  nn::Optimizer optimizer(cfg.optimizer, out.model);
  const bool attacked = p.plan.mode != attack::AttackMode::none;
  const std::string name = to_string(cfg.trainer.kind);

  auto base_row = [&](std::size_t iteration, nn::Model& m) {
    ReportRow row;
    row.trainer = name;
    row.iteration = iteration;
    row.accuracy = eval::compute_accuracy(m, p.test);
    if (attacked) row.asr = eval::compute_asr(m, p.eval_poison);
    return row;
  };
  auto maybe_checkpoint = [&](std::size_t step, const nn::Model& m) {
    const std::size_t every = cfg.trainer.checkpoint_every;
    if (every == 0 || checkpoint_dir.empty() || step % every != 0) return;
    fs::create_directories(checkpoint_dir);
    char name[32];
    std::snprintf(name, sizeof name, "step_%04zu.hnm", step);
    nn::save_checkpoint(checkpoint_dir / name, m);
  };
  auto epoch_observer = [&](std::size_t epoch, nn::Model& m) {
    maybe_checkpoint(epoch, m);
    ReportRow row = base_row(epoch, m);
    row.ds_size = row.dt_size = p.train.size();
    out.rows.push_back(std::move(row));
  };

  switch (cfg.trainer.kind) {
    case TrainerKind::undefended: {
      defense::UndefendedTrainer trainer(cfg.trainer.epochs, cfg.model.loss, epoch_observer);
      trainer.train(out.model, p.train, optimizer, cfg.run.seed);
      break;
    }
    case TrainerKind::gradshape: {
      defense::GradShapeTrainer trainer(cfg.trainer.epochs, cfg.gradshape, cfg.model.loss, epoch_observer);
      trainer.train(out.model, p.train, optimizer, cfg.run.seed);
      out.gradshape = trainer.stats();
      break;
    }
    case TrainerKind::hasnet: {
      auto observer = [&](const defense::IterationRecord& rec, nn::Model& m) {
        maybe_checkpoint(rec.iteration, m);
        ReportRow row = base_row(rec.iteration, m);
        row.ds_size = rec.selected;
        row.dt_size = rec.retained;
        row.removed = rec.removed_total;
        fill_gamma_columns(row, rec.snapshot, p.train);
        out.rows.push_back(std::move(row));
      };
      defense::HasNetTrainer trainer(p.heal, cfg.hasnet, cfg.model.loss, observer);
      trainer.train(out.model, p.train, optimizer, cfg.run.seed);
      out.hasnet = trainer.result();
      break;
    }
  }
  return out;
}

std::string summary_json(const Summary& s) {
  nlohmann::ordered_json j;
  auto put = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  j["schema"] = kReportSchema;
  j["trainer"] = s.trainer;
  j["seed"] = s.seed;
  j["accuracy"] = s.accuracy;
  put("asr", s.asr);
  put("baseline_accuracy", s.baseline_accuracy);
  put("rad", s.rad);
  put("survivors", s.survivors);
  put("survivor_fraction", s.survivor_fraction);
  put("survivor_target_rate", s.survivor_target_rate);
  put("strip_threshold", s.strip_threshold);
  put("strip_far", s.strip_far);
  put("strip_frr", s.strip_frr);
  return j.dump(2) + "\n";
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  Timer timer;
  PreparedData prepared = prepare_data(cfg);
  std::optional<nn::Model> reference;
  if (!cfg.run.reference_model.empty()) {
    reference = nn::load_checkpoint(cfg.run.reference_model);
    if (reference->input_shape() != prepared.test.sample_shape() ||
        reference->num_classes() != prepared.test.num_classes()) {
      throw ConfigError("reference model does not match the dataset");
    }
  }
  timer.mark("prepare");

  fs::create_directories(out_dir);
  write_text(out_dir / "config.ini", cfg.serialize());

  if (!reference && cfg.run.train_reference) {
    ExperimentConfig ref_cfg = cfg;
    ref_cfg.trainer.kind = TrainerKind::undefended;
    PreparedData clean = prepared;
    clean.train = clean.clean_train;
    clean.plan.mode = attack::AttackMode::none;
    reference = train_stage(ref_cfg, clean).model;
    nn::save_checkpoint(out_dir / "reference.hnm", *reference);
    timer.mark("reference");
  }

  TrainOutcome trained = train_stage(cfg, prepared, out_dir / "checkpoints");
  timer.mark("train");

  ExperimentReport report;
  report.rows = trained.rows;
  Summary& s = report.summary;
  s.trainer = to_string(cfg.trainer.kind);
  s.seed = cfg.run.seed;
  s.accuracy = eval::compute_accuracy(trained.model, prepared.test);
  if (prepared.plan.mode != attack::AttackMode::none) {
    s.asr = eval::compute_asr(trained.model, prepared.eval_poison);
  }
  if (reference) {
    s.baseline_accuracy = eval::compute_accuracy(*reference, prepared.test);
    s.rad = eval::relative_accuracy_drop(*s.baseline_accuracy, s.accuracy);
  }
  if (trained.hasnet) {
    const auto& ledger = trained.hasnet->ledger;
    const auto rows = ledger.active_rows();
    s.survivors = rows.size();
    s.survivor_fraction = static_cast<double>(rows.size()) / static_cast<double>(prepared.train.size());
    if (reference && !rows.empty()) {
      const nn::Tensor probs = nn::predict(*reference, prepared.train.inputs, rows);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (nn::argmax(probs.row(i)) == cfg.attack.target_class) ++hits;
      }
      s.survivor_target_rate = static_cast<double>(hits) / static_cast<double>(rows.size());
    }
    std::ofstream ledger_out(out_dir / "ledger.csv", std::ios::binary);
    ledger_out << "iteration,id,neg_gamma,l1,l2,status,poison_flag\n";
    for (const auto& rec : trained.hasnet->history) {
      ledger_out << format_ledger(rec.iteration, rec.snapshot, prepared.train);
    }
    if (!ledger_out) throw ConfigError("cannot write " + (out_dir / "ledger.csv").string());
  }
  timer.mark("evaluate");

  if (cfg.strip.enabled) {
    const StripOutcome strip = run_strip(cfg, trained.model, prepared);
    s.strip_threshold = strip.calibration.threshold;
    s.strip_far = strip.report.far;
    s.strip_frr = strip.report.frr;
    detect::write_scan_csv(out_dir / "strip_scan.csv", strip.report);
    timer.mark("strip");
  }

  nn::save_checkpoint(out_dir / "model.hnm", trained.model);
  write_text(out_dir / "report.csv", format_report(report.rows));
  write_text(out_dir / "summary.json", summary_json(s));
  std::ostringstream timings;
  timings << "phase,seconds\n";
  for (const auto& [phase, secs] : timer.phases) timings << phase << ',' << secs << '\n';
  write_text(out_dir / "timings.csv", timings.str());
  return report;
}

fs::path resolve_out_dir(const ExperimentConfig& cfg, const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("HNF_OUT"); env && *env) return env;
  return cfg.run.out;
}

}  // namespace hasnets::harness
