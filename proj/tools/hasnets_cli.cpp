// Command-line front end: poison, train, eval, strip-scan, run, report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hasnets/checkpoint.hpp"
#include "hasnets/config.hpp"
#include "hasnets/errors.hpp"
#include "hasnets/harness.hpp"
#include "hasnets/metrics.hpp"

namespace fs = std::filesystem;
using namespace hasnets;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

harness::ExperimentConfig load(const Common& c, const std::vector<harness::Override>& extra = {}) {
  std::vector<harness::Override> overrides;
  for (const auto& s : c.sets) overrides.push_back(harness::Override::parse(s));
  if (c.seed) overrides.push_back({"run", "seed", std::to_string(*c.seed)});
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  if (c.config.empty()) return harness::parse_config("", overrides);
  return harness::load_config(c.config, overrides);
}

harness::PreparedData data_for(const harness::ExperimentConfig& cfg, const std::string& data_dir) {
  return data_dir.empty() ? harness::prepare_data(cfg) : harness::load_prepared(data_dir, cfg);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw ConfigError("cannot write " + path.string());
}

std::string json_metric(const std::optional<double>& v) {
  return v ? nlohmann::json(*v).dump() : std::string("null");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor poisoning and heal-and-select training experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config file");
    sub->add_option("--seed", common.seed, "run seed (overrides run.seed)");
    sub->add_option("--out", common.out, "output directory (overrides HNF_OUT and run.out)");
    sub->add_option("--set", common.sets, "override, section.key=value (repeatable)");
  };

  std::string plan;
  auto* poison = app.add_subcommand("poison", "apply the poison plan and write dataset caches");
  add_common(poison);
  poison->add_option("--plan", plan, "attack mode override");

  std::string data_dir;
  auto* train = app.add_subcommand("train", "train a model with the configured trainer");
  add_common(train);
  train->add_option("--data", data_dir, "directory written by poison");

  std::string model_path;
  std::string flags_path;
  auto* eval = app.add_subcommand("eval", "accuracy and attack success rate of a checkpoint");
  add_common(eval);
  eval->add_option("--model", model_path, "checkpoint");
  eval->add_option("--data", data_dir, "directory written by poison");
  eval->add_option("--flags", flags_path, "poison_flags.csv to summarize instead of a model");

  auto* strip = app.add_subcommand("strip-scan", "calibrate a STRIP threshold and scan inputs");
  add_common(strip);
  strip->add_option("--model", model_path, "checkpoint")->required();
  strip->add_option("--data", data_dir, "directory written by poison");

  auto* run = app.add_subcommand("run", "full pipeline");
  add_common(run);

  std::vector<std::string> inputs;
  std::string merged_out;
  auto* report = app.add_subcommand("report", "merge report CSVs into one table");
  report->add_option("reports", inputs, "report CSVs")->required();
  report->add_option("-o,--output", merged_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*report) {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      const std::string merged = harness::merge_report_files(paths);
      if (merged_out.empty()) std::cout << merged;
      else write_file(merged_out, merged);
      return 0;
    }

    if (*poison) {
      std::vector<harness::Override> extra;
      if (!plan.empty()) extra.push_back({"attack", "mode", plan});
      const auto cfg = load(common, extra);
      const fs::path out = harness::resolve_out_dir(cfg, common.out);
      const auto prepared = harness::prepare_data(cfg);
      harness::save_prepared(out, prepared);
      fs::create_directories(out);
      write_file(out / "config.ini", cfg.serialize());
      std::cout << "poisoned " << prepared.train.poisoned_count() << " of " << prepared.train.size()
                << " training samples -> " << out.string() << '\n';
      return 0;
    }

    if (*eval && !flags_path.empty()) {
      std::ifstream in(flags_path);
      if (!in) throw ConfigError("cannot read " + flags_path);
      std::string line;
      std::getline(in, line);
      if (line != "id,poison_flag") throw ParseError("not a poison_flags.csv file", 0);
      std::size_t total = 0, flagged = 0;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++total;
        if (line.back() == '1') ++flagged;
      }
      if (total == 0) throw ConfigError("flags file has no rows");
      std::cout << "{\"samples\": " << total << ", \"flagged\": " << flagged
                << ", \"flagged_fraction\": " << nlohmann::json(double(flagged) / double(total)).dump()
                << "}\n";
      return 0;
    }

    const auto cfg = load(common);
    const fs::path out = harness::resolve_out_dir(cfg, common.out);

    if (*run) {
      const auto result = harness::run_experiment(cfg, out);
      std::cout << harness::summary_json(result.summary);
      return 0;
    }

    if (*train) {
      const auto prepared = data_for(cfg, data_dir);
      auto trained = harness::train_stage(cfg, prepared, out / "checkpoints");
      fs::create_directories(out);
      write_file(out / "config.ini", cfg.serialize());
      nn::save_checkpoint(out / "model.hnm", trained.model);
      write_file(out / "report.csv", harness::format_report(trained.rows));
      std::cout << "trained " << harness::to_string(cfg.trainer.kind) << " model -> "
                << (out / "model.hnm").string() << '\n';
      return 0;
    }

    if (*eval) {
      if (model_path.empty()) throw ConfigError("eval needs --model or --flags");
      const auto prepared = data_for(cfg, data_dir);
      nn::Model model = nn::load_checkpoint(model_path);
      std::optional<double> asr;
      if (prepared.plan.mode != attack::AttackMode::none) asr = eval::compute_asr(model, prepared.eval_poison);
      const double acc = eval::compute_accuracy(model, prepared.test);
      std::ostringstream js;
      js << "{\"accuracy\": " << json_metric(acc) << ", \"asr\": " << json_metric(asr) << "}\n";
      fs::create_directories(out);
      write_file(out / "eval.json", js.str());
      std::cout << js.str();
      return 0;
    }

    if (*strip) {
      const auto prepared = data_for(cfg, data_dir);
      nn::Model model = nn::load_checkpoint(model_path);
      const auto result = harness::run_strip(cfg, model, prepared);
      fs::create_directories(out);
      detect::write_scan_csv(out / "strip_scan.csv", result.report);
      std::cout << "{\"threshold\": " << json_metric(result.calibration.threshold)
                << ", \"far\": " << json_metric(result.report.far)
                << ", \"frr\": " << json_metric(result.report.frr) << "}\n";
      return 0;
    }
  } catch (const DefenseCollapse& e) {
    std::cerr << "defense collapse: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
