#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "hasnets/attacks.hpp"
#include "hasnets/dataset.hpp"
#include "hasnets/errors.hpp"
#include "hasnets/hasnet.hpp"
#include "hasnets/metrics.hpp"
#include "hasnets/model.hpp"
#include "hasnets/optimizer.hpp"
#include "test_util.hpp"

using namespace hasnets;
using namespace hasnets::data;

namespace {

void put_u32_be(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

// Two 2x3 images and their labels in IDX form.
struct IdxFixture {
  std::string images;
  std::string labels;
  std::vector<unsigned char> pixels = {0, 255, 51, 102, 7, 200, 1, 2, 3, 4, 5, 254};
  IdxFixture(std::uint32_t label_count = 2) {
    put_u32_be(images, 0x803);
    put_u32_be(images, 2);
    put_u32_be(images, 2);
    put_u32_be(images, 3);
    for (unsigned char b : pixels) images.push_back(static_cast<char>(b));
    put_u32_be(labels, 0x801);
    put_u32_be(labels, label_count);
    labels.push_back(3);
    labels.push_back(9);
  }
};

std::set<std::uint64_t> id_set(const LabeledDataset& d) { return {d.ids.begin(), d.ids.end()}; }

}  // namespace

TEST(Idx, FixturePixelsAreBytesOver255) {
  testutil::TempDir dir("idx");
  IdxFixture fx;
  write_bytes(dir.path() / "img", fx.images);
  write_bytes(dir.path() / "lab", fx.labels);
  const auto ds = load_idx(dir.path() / "img", dir.path() / "lab");
  EXPECT_EQ(ds.inputs.shape(), (nn::Shape{2, 2, 3, 1}));
  for (std::size_t k = 0; k < fx.pixels.size(); ++k) EXPECT_EQ(ds.inputs[k], fx.pixels[k] / 255.0);
  EXPECT_EQ(ds.label_class(0), 3u);
  EXPECT_EQ(ds.label_class(1), 9u);
  EXPECT_EQ(ds.num_classes(), 10u);
  EXPECT_EQ(ds.poisoned_count(), 0u);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Idx, CountMismatchAndBadMagic) {
  testutil::TempDir dir("idx");
  IdxFixture fx(1);
  write_bytes(dir.path() / "img", fx.images);
  write_bytes(dir.path() / "lab", fx.labels);
  try {
    load_idx(dir.path() / "img", dir.path() / "lab");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }

  IdxFixture good;
  std::string bad = good.images;
  bad[3] = 0x01;
  write_bytes(dir.path() / "img", bad);
  write_bytes(dir.path() / "lab", good.labels);
  try {
    load_idx(dir.path() / "img", dir.path() / "lab");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  write_bytes(dir.path() / "img", good.images.substr(0, good.images.size() - 2));
  EXPECT_THROW(load_idx(dir.path() / "img", dir.path() / "lab"), ParseError);
}

TEST(Synth, SeededDeterminism) {
  EXPECT_TRUE(synth_blobs(1000, 10, 16, 7) == synth_blobs(1000, 10, 16, 7));
  EXPECT_FALSE(synth_blobs(200, 10, 16, 7) == synth_blobs(200, 10, 16, 8));
}

TEST(Synth, MinimalCaseOnePerClass) {
  const auto ds = synth_blobs(10, 10, 16, 3);
  std::set<std::size_t> classes;
  for (std::size_t i = 0; i < 10; ++i) classes.insert(ds.label_class(i));
  EXPECT_EQ(classes.size(), 10u);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Synth, Preconditions) {
  EXPECT_THROW(synth_blobs(5, 10, 16, 1), ConfigError);
  EXPECT_THROW(synth_blobs(100, 10, 7, 1), ConfigError);
}

TEST(Synth, LinearProbeSmokeTrain) {
  const auto ds = synth_blobs(1000, 10, 16, 5);
  nn::Model m({16, 16, 1}, nn::architecture("linear", 10), 1);
  nn::Optimizer opt({}, m);
  double best = 0.0;
  defense::train_undefended(m, ds, 20, opt, 1, nn::LossKind::cross_entropy,
                            [&](std::size_t, nn::Model& model) {
                              best = std::max(best, eval::compute_accuracy(model, ds));
                            });
  EXPECT_GE(best, 0.95);
}

TEST(Split, FullSizeSplit) {
  const auto ds = synth_blobs(60000, 10, 8, 1);
  const auto a = split(ds, {0.15, 2000, 1, true});
  EXPECT_EQ(a.heal.size(), 9000u);
  const auto b = split(ds, {0.02, 2000, 1, true});
  EXPECT_EQ(b.heal.size(), 1200u);
  std::set<std::size_t> classes;
  for (std::size_t i = 0; i < b.heal.size(); ++i) classes.insert(b.heal.label_class(i));
  EXPECT_EQ(classes.size(), 10u);
}

TEST(Split, PartitionProperty) {
  const auto ds = synth_blobs(3000, 10, 8, 2);
  for (bool stratified : {true, false}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto s = split(ds, {0.1, 500, seed, stratified});
      EXPECT_EQ(s.test.size(), 500u);
      EXPECT_EQ(s.heal.size() + s.train.size() + s.test.size(), 3000u);
      std::set<std::uint64_t> all;
      for (const auto* part : {&s.train, &s.heal, &s.test}) {
        part->validate();
        all.insert(part->ids.begin(), part->ids.end());
      }
      EXPECT_EQ(all, id_set(ds));
      EXPECT_EQ(s.heal.poisoned_count(), 0u);
    }
  }
}

TEST(Split, TooSmallOrPoisoned) {
  const auto ds = synth_blobs(100, 10, 8, 2);
  EXPECT_THROW(split(ds, {0.05, 10, 1, true}), ConfigError);  // 5 healing samples for 10 classes
  EXPECT_THROW(split(ds, {0.2, 90, 1, true}), ConfigError);
  EXPECT_THROW(split(ds, {0.6, 10, 1, true}), ConfigError);
  auto poisoned = ds;
  poisoned.poison_flags[0] = 1;
  EXPECT_THROW(split(poisoned, {0.2, 10, 1, true}), ConfigError);
}

TEST(Split, HealingSetUntouchedByEveryAttack) {
  const auto ds = synth_blobs(1000, 10, 16, 4);
  const auto s = split(ds, {0.15, 200, 4, true});
  const nn::Shape img{16, 16, 1};
  for (auto mode : {attack::AttackMode::conventional, attack::AttackMode::epsilon, attack::AttackMode::epsilon2,
                    attack::AttackMode::invisible, attack::AttackMode::all_trojan}) {
    attack::PoisonPlan plan;
    plan.mode = mode;
    plan.budget = attack::Budget::samples(60);
    plan.epsilon = mode == attack::AttackMode::epsilon ? 0.4 : 1.0;
    plan.primary = mode == attack::AttackMode::invisible ? attack::noise_trigger(img, 0.1, 3)
                                                          : attack::corner_patch(img);
    plan.secondary = attack::right_half(attack::corner_patch(img));
    const auto poisoned = attack::apply_plan(s.train, plan, 4);
    EXPECT_GT(poisoned.poisoned_count(), 0u);
    EXPECT_EQ(s.heal.poisoned_count(), 0u);
    EXPECT_TRUE(id_set(poisoned) == id_set(s.train));
  }
}

TEST(Cache, RoundTripBitExact) {
  auto ds = synth_blobs(50, 5, 8, 9);
  ds.poison_flags[3] = 1;
  const auto soft = attack::distributed_label(2, 0.4, 5);
  std::copy(soft.begin(), soft.end(), ds.labels.row(3).begin());
  std::stringstream buf;
  write_dataset(buf, ds);
  EXPECT_EQ(buf.str().substr(0, 4), "HND1");
  EXPECT_TRUE(read_dataset(buf) == ds);

  testutil::TempDir dir("cache");
  save_dataset(dir.path() / "d.hnd", ds);
  EXPECT_TRUE(load_dataset(dir.path() / "d.hnd") == ds);

  std::stringstream again;
  write_dataset(again, ds);
  std::istringstream truncated(again.str().substr(0, again.str().size() - 1));
  EXPECT_THROW(read_dataset(truncated), ParseError);
  std::istringstream trailing(again.str() + "z");
  EXPECT_THROW(read_dataset(trailing), ParseError);
}

TEST(Dataset, ValidateCatchesBrokenInvariants) {
  auto ds = synth_blobs(20, 4, 8, 1);
  auto dup = ds;
  dup.ids[1] = dup.ids[0];
  EXPECT_THROW(dup.validate(), ConfigError);
  auto bad_label = ds;
  bad_label.labels.row(0)[0] += 0.1;
  EXPECT_THROW(bad_label.validate(), ConfigError);
  auto out_of_range = ds;
  out_of_range.inputs[0] = 1.5;
  EXPECT_THROW(out_of_range.validate(), ConfigError);
}
