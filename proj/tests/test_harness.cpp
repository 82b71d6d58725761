#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "hasnets/checkpoint.hpp"
#include "hasnets/config.hpp"
#include "hasnets/errors.hpp"
#include "hasnets/harness.hpp"
#include "hasnets/metrics.hpp"
#include "test_util.hpp"

using namespace hasnets;
using namespace hasnets::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Quick pipeline: 800 synth samples, tiny STRIP block.
const char* kSmallConfig = R"(
[run]
seed = 11
train_reference = true
[data]
synth_n = 800
[split]
test_count = 200
[attack]
budget = 10
[trainer]
kind = hasnet
epochs = 1
[hasnet]
max_iterations = 2
[strip]
enabled = true
K = 4
pool_size = 20
calibration_size = 20
scan_size = 20
)";

struct CliResult {
  int status;
  std::string output;
};

CliResult cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli.log";
  const std::string cmd = std::string(HASNETS_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(log)};
}

// Model whose prediction is the brightest pixel: images are 1 x C x 1 and
// dense weights are the identity.
nn::Model brightest_pixel_model(std::size_t classes) {
  nn::Model m({1, classes, 1}, nn::parse_layer_list("dense(" + std::to_string(classes) + ");softmax"), 1);
  auto p = m.parameters();
  std::fill(p[0]->data().begin(), p[0]->data().end(), 0.0);
  std::fill(p[1]->data().begin(), p[1]->data().end(), 0.0);
  for (std::size_t c = 0; c < classes; ++c) (*p[0])[c * classes + c] = 5.0;
  return m;
}

data::LabeledDataset predicted_as(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels,
                                  std::size_t classes) {
  data::LabeledDataset d;
  const std::size_t n = predicted.size();
  d.inputs = nn::Tensor({n, 1, classes, 1});
  d.labels = nn::Tensor({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    d.inputs.row(i)[predicted[i]] = 1.0;
    d.labels.row(i)[labels[i]] = 1.0;
    d.ids.push_back(i);
  }
  d.poison_flags.assign(n, 0);
  return d;
}

}  // namespace

TEST(Config, DefaultsAreMaterialized) {
  const auto cfg = parse_config("");
  const std::string text = cfg.serialize();
  for (const auto& key : config_keys()) {
    const auto dot = key.find('.');
    const std::string section = "[" + key.substr(0, dot) + "]";
    const std::string line = "\n" + key.substr(dot + 1) + " = ";
    EXPECT_NE(text.find(section), std::string::npos) << key;
    EXPECT_NE(text.find(line), std::string::npos) << key;
  }
  EXPECT_EQ(cfg.hasnet.s, 0.3);
  EXPECT_EQ(cfg.hasnet.heal_epochs, 2u);
  EXPECT_EQ(cfg.optimizer.learning_rate, 0.01);
  EXPECT_EQ(cfg.optimizer.batch_size, 64u);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW(parse_config("[run]\nsed = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[nothing]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = 3\nseed = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = three\n"), ConfigError);
  EXPECT_THROW(parse_config("[trainer]\nkind = magic\n"), ConfigError);
  EXPECT_THROW(parse_config("[hasnet]\nmax_iterations = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[hasnet]\ns = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("", {Override::parse("run.nope=1")}), ConfigError);
  EXPECT_THROW(Override::parse("runseed=1"), ConfigError);
  EXPECT_NO_THROW(parse_config("# comment\n[run]\n; other comment\nseed = 3\n"));
}

TEST(Config, SerializeRoundTrip) {
  const auto cfg = parse_config(kSmallConfig, {Override::parse("optimizer.learning_rate=0.03"),
                                               Override::parse("data.synth_noise=0.12"),
                                               Override::parse("attack.budget=1.5%")});
  EXPECT_EQ(cfg.optimizer.learning_rate, 0.03);
  EXPECT_EQ(cfg.run.seed, 11u);
  const std::string text = cfg.serialize();
  EXPECT_EQ(parse_config(text).serialize(), text);
}

TEST(Metrics, HandCountedRates) {
  // 10 stamped inputs labelled with target 2, 7 of them predicted as 2.
  auto m = brightest_pixel_model(4);
  const auto asr_set = predicted_as({2, 2, 2, 0, 2, 2, 1, 2, 3, 2}, std::vector<std::size_t>(10, 2), 4);
  EXPECT_NEAR(eval::compute_asr(m, asr_set), 0.7, 1e-15);
  // 5 clean inputs, 3 correct
  const auto test = predicted_as({0, 1, 3, 3, 2}, {0, 1, 2, 3, 1}, 4);
  EXPECT_NEAR(eval::compute_accuracy(m, test), 0.6, 1e-15);
  EXPECT_THROW(eval::compute_asr(m, test.select(std::vector<std::size_t>{})), ConfigError);
  EXPECT_THROW(eval::compute_accuracy(m, test.select(std::vector<std::size_t>{})), ConfigError);
}

TEST(Metrics, ConstantModels) {
  nn::Model m({8, 8, 1}, nn::parse_layer_list("dense(10);softmax"), 1);
  auto p = m.parameters();
  std::fill(p[0]->data().begin(), p[0]->data().end(), 0.0);
  std::fill(p[1]->data().begin(), p[1]->data().end(), 0.0);
  (*p[1])[6] = 3.0;
  std::vector<std::size_t> balanced;
  for (std::size_t i = 0; i < 100; ++i) balanced.push_back(i % 10);
  const auto test = testutil::tiny_dataset(balanced, 10);
  EXPECT_NEAR(eval::compute_accuracy(m, test), 0.1, 1e-15);
  const auto to_six = testutil::tiny_dataset(std::vector<std::size_t>(20, 6), 10);
  const auto to_one = testutil::tiny_dataset(std::vector<std::size_t>(20, 1), 10);
  EXPECT_EQ(eval::compute_asr(m, to_six), 1.0);
  EXPECT_EQ(eval::compute_asr(m, to_one), 0.0);
}

TEST(Metrics, ArgmaxTiesGoToLowestIndex) {
  const nn::Tensor probs({2, 3}, {0.4, 0.4, 0.2, 0.2, 0.4, 0.4});
  const nn::Tensor labels({2, 3}, {1, 0, 0, 0, 1, 0});
  EXPECT_EQ(eval::match_rate(probs, labels), 1.0);
}

TEST(Metrics, RadAndAuc) {
  EXPECT_NEAR(eval::relative_accuracy_drop(0.8, 0.72), 0.1, 1e-15);
  EXPECT_EQ(eval::relative_accuracy_drop(0.8, 0.8), 0.0);
  const std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> pos = {0, 0, 1, 1};
  EXPECT_NEAR(eval::auc(scores, pos), 0.75, 1e-15);
  const std::vector<double> tied = {0.5, 0.5};
  const std::vector<std::uint8_t> one_each = {0, 1};
  EXPECT_EQ(eval::auc(tied, one_each), 0.5);
  const std::vector<std::uint8_t> all_pos = {1, 1};
  EXPECT_THROW(eval::auc(tied, all_pos), ConfigError);
}

TEST(Report, GoldenMerge) {
  const fs::path dir = fs::path(HASNETS_TEST_DATA) / "merge";
  const std::string merged =
      merge_report_files({dir / "seed1.csv", dir / "seed2.csv", dir / "seed3.csv"});
  EXPECT_EQ(merged, slurp(dir / "merged.golden.csv"));
  std::size_t lines = std::count(merged.begin(), merged.end(), '\n');
  EXPECT_EQ(lines, 1u + 3u * 3u);
  EXPECT_THROW(merge_reports({{"x", "a,b,c\n"}}), ConfigError);
  EXPECT_THROW(merge_reports({{"x", report_header() + "\nv2,hasnet\n"}}), ConfigError);
}

TEST(Report, LabelFromDirectory) {
  testutil::TempDir dir("merge");
  fs::create_directories(dir.path() / "p2-seed4");
  std::ofstream(dir.path() / "p2-seed4" / "report.csv") << report_header() << "\nhnr1,hasnet,1,0.5,,1,1,0,,,\n";
  const auto merged = merge_report_files({dir.path() / "p2-seed4" / "report.csv"});
  EXPECT_NE(merged.find("\np2-seed4,hnr1,hasnet,1,"), std::string::npos);
}

TEST(Run, EndToEndDeterminism) {
  testutil::TempDir a("run"), b("run");
  const auto cfg = parse_config(kSmallConfig);
  const auto ra = run_experiment(cfg, a.path());
  run_experiment(cfg, b.path());
  for (const char* f : {"report.csv", "ledger.csv", "strip_scan.csv", "summary.json", "config.ini"}) {
    ASSERT_TRUE(fs::exists(a.path() / f)) << f;
    EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
  }
  EXPECT_EQ(slurp(a.path() / "model.hnm"), slurp(b.path() / "model.hnm"));
  EXPECT_EQ(parse_config(slurp(a.path() / "config.ini")).serialize(), cfg.serialize());

  // report header, hnr1 tag, metric bounds
  std::istringstream rep(slurp(a.path() / "report.csv"));
  std::string line;
  std::getline(rep, line);
  EXPECT_EQ(line, report_header());
  ASSERT_EQ(ra.rows.size(), 2u);
  for (const auto& r : ra.rows) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
    ASSERT_TRUE(r.asr.has_value());
    EXPECT_GE(*r.asr, 0.0);
    EXPECT_LE(*r.asr, 1.0);
  }
  const auto& s = ra.summary;
  ASSERT_TRUE(s.baseline_accuracy && s.rad);
  EXPECT_NEAR(*s.rad, (*s.baseline_accuracy - s.accuracy) / *s.baseline_accuracy, 1e-15);
  ASSERT_TRUE(s.strip_frr && s.strip_far);
}

TEST(Run, SeedChangesOutcome) {
  testutil::TempDir a("run"), b("run");
  auto cfg = parse_config(kSmallConfig, {Override::parse("strip.enabled=false"),
                                         Override::parse("run.train_reference=false")});
  run_experiment(cfg, a.path());
  cfg.run.seed = 12;
  run_experiment(cfg, b.path());
  EXPECT_NE(slurp(a.path() / "report.csv"), slurp(b.path() / "report.csv"));
}

TEST(Run, CheckpointsEveryK) {
  testutil::TempDir dir("ckpts");
  const auto cfg = parse_config(kSmallConfig, {Override::parse("strip.enabled=false"),
                                               Override::parse("run.train_reference=false"),
                                               Override::parse("trainer.checkpoint_every=1")});
  run_experiment(cfg, dir.path());
  EXPECT_TRUE(fs::exists(dir.path() / "checkpoints" / "step_0001.hnm"));
  EXPECT_TRUE(fs::exists(dir.path() / "checkpoints" / "step_0002.hnm"));
  const auto ledger = slurp(dir.path() / "ledger.csv");
  EXPECT_EQ(ledger.rfind("iteration,id,neg_gamma,l1,l2,status,poison_flag\n", 0), 0u);
}

TEST(Run, OutputDirectoryPrecedence) {
  auto cfg = parse_config("[run]\nout = from-config\n");
  ::unsetenv("HNF_OUT");
  EXPECT_EQ(resolve_out_dir(cfg, ""), fs::path("from-config"));
  ::setenv("HNF_OUT", "from-env", 1);
  EXPECT_EQ(resolve_out_dir(cfg, ""), fs::path("from-env"));
  EXPECT_EQ(resolve_out_dir(cfg, "from-flag"), fs::path("from-flag"));
  ::unsetenv("HNF_OUT");
}

TEST(Cli, EvalMatchesInProcessCount) {
  testutil::TempDir dir("cli");
  const std::string common = "--set data.synth_n=3000 --set split.test_count=1000 --seed 5";
  auto r = cli("poison " + common + " --out " + (dir.path() / "data").string(), dir.path());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto cfg = parse_config("", {Override::parse("data.synth_n=3000")});
  nn::Model random({16, 16, 1}, nn::architecture(cfg.model.architecture, 10), 1234);
  nn::save_checkpoint(dir.path() / "random.hnm", random);
  r = cli("eval " + common + " --data " + (dir.path() / "data").string() + " --model " +
              (dir.path() / "random.hnm").string() + " --out " + (dir.path() / "eval").string(),
          dir.path());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto pos = r.output.find("\"accuracy\": ");
  ASSERT_NE(pos, std::string::npos) << r.output;
  const double acc = std::stod(r.output.substr(pos + 12));

  // count argmax hits directly on the cached test split
  const auto test = data::load_dataset(dir.path() / "data" / "test.hnd");
  ASSERT_EQ(test.size(), 1000u);
  const nn::Tensor probs = random.forward(test.inputs, false);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto p = probs.row(i);
    const auto y = test.labels.row(i);
    hits += std::max_element(p.begin(), p.end()) - p.begin() == std::max_element(y.begin(), y.end()) - y.begin();
  }
  EXPECT_NEAR(acc, double(hits) / 1000.0, 1e-6);
}

TEST(Cli, AllTrojanPoisonFlagsEverything) {
  testutil::TempDir dir("cli");
  auto r = cli("poison --plan all_trojan --set data.synth_n=500 --set split.test_count=50 --out " +
                   (dir.path() / "data").string(),
               dir.path());
  ASSERT_EQ(r.status, 0) << r.output;
  r = cli("eval --flags " + (dir.path() / "data" / "poison_flags.csv").string() + " --out " +
              (dir.path() / "e").string(),
          dir.path());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("\"flagged_fraction\": 1.0"), std::string::npos) << r.output;
}

TEST(Cli, ReportMergesAndErrorsExit) {
  testutil::TempDir dir("cli");
  const fs::path data = fs::path(HASNETS_TEST_DATA) / "merge";
  auto r = cli("report " + (data / "seed1.csv").string() + " " + (data / "seed2.csv").string() + " " +
                   (data / "seed3.csv").string() + " -o " + (dir.path() / "m.csv").string(),
               dir.path());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(slurp(dir.path() / "m.csv"), slurp(data / "merged.golden.csv"));

  std::ofstream(dir.path() / "bad.ini") << "[run]\nbogus = 1\n";
  r = cli("run --config " + (dir.path() / "bad.ini").string(), dir.path());
  EXPECT_EQ(r.status, 2) << r.output;
  r = cli("run --set hasnet.max_iterations=0 --set trainer.kind=hasnet", dir.path());
  EXPECT_EQ(r.status, 2) << r.output;
}
