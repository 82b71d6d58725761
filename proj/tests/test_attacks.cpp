#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "hasnets/attacks.hpp"
#include "hasnets/dataset.hpp"
#include "hasnets/errors.hpp"
#include "test_util.hpp"

using namespace hasnets;
using namespace hasnets::attack;

namespace {

// Affine form of the distributed label, evaluated as written.
double eq1(double y, double eps, double n) { return y * (eps * n - 1.0) / (n - 1.0) + (1.0 - eps) / (n - 1.0); }

const nn::Shape kImage{16, 16, 1};

data::LabeledDataset blobs(std::size_t n = 1000) { return data::synth_blobs(n, 10, 16, 12); }

PoisonPlan conventional(std::size_t budget) {
  PoisonPlan p;
  p.mode = AttackMode::conventional;
  p.budget = Budget::samples(budget);
  p.target_class = 7;
  p.primary = corner_patch(kImage);
  return p;
}

}  // namespace

TEST(DistributedLabel, WorkedExample) {
  const auto y = distributed_label(1, 0.4, 10);
  ASSERT_EQ(y.size(), 10u);
  for (std::size_t c = 0; c < 10; ++c) {
    EXPECT_NEAR(y[c], eq1(c == 1 ? 1.0 : 0.0, 0.4, 10), 1e-12);
    EXPECT_NEAR(y[c], c == 1 ? 0.4 : 0.6 / 9, 1e-12);
  }
  EXPECT_EQ(y[1], 0.4);
}

TEST(DistributedLabel, RandomDrawsMatchAffineForm) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> eps_dist(0.1, 1.0);
  std::uniform_int_distribution<std::size_t> n_dist(2, 100);
  for (int i = 0; i < 1000; ++i) {
    const double eps = eps_dist(rng);
    const std::size_t n = n_dist(rng);
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const auto y = distributed_label(t, eps, n);
    EXPECT_EQ(y[t], eps);
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      sum += y[c];
      EXPECT_NEAR(y[c], eq1(c == t ? 1.0 : 0.0, eps, double(n)), 1e-12);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(DistributedLabel, DegenerateValues) {
  EXPECT_EQ(distributed_label(4, 1.0, 10), data::one_hot(4, 10));
  for (double v : distributed_label(4, 0.1, 10)) EXPECT_NEAR(v, 0.1, 1e-15);
  EXPECT_THROW(distributed_label(0, 0.09, 10), ConfigError);
  EXPECT_THROW(distributed_label(0, 1.01, 10), ConfigError);
  const std::vector<double> not_one_hot = {0.5, 0.5};
  EXPECT_THROW(distributed_label(not_one_hot, 0.5), ConfigError);
}

TEST(Stamp, PatchIsIdempotent) {
  auto img = testutil::random_tensor({16, 16, 1}, 3);
  const auto trigger = corner_patch(kImage);
  stamp(img.data(), kImage, trigger);
  const std::vector<double> once(img.data().begin(), img.data().end());
  stamp(img.data(), kImage, trigger);
  EXPECT_TRUE(std::equal(once.begin(), once.end(), img.data().begin()));
}

TEST(Stamp, WhiteCornerPatchOnZeroImage) {
  nn::Tensor img({16, 16, 1});
  stamp(img.data(), kImage, corner_patch(kImage, 4, 0));
  std::size_t ones = 0;
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      const double v = img[r * 16 + c];
      const bool in_patch = r >= 12 && c >= 12;
      EXPECT_EQ(v, in_patch ? 1.0 : 0.0) << r << "," << c;
      ones += v == 1.0;
    }
  }
  EXPECT_EQ(ones, 16u);
}

TEST(Stamp, NoiseFieldClampsOnWhiteImage) {
  nn::Tensor img({16, 16, 1}, 1.0);
  stamp(img.data(), kImage, noise_trigger(kImage, 0.1, 5));
  for (double v : img.data()) {
    EXPECT_GE(v, 0.9);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Stamp, DimensionMismatch) {
  nn::Tensor img({8, 8, 1});
  EXPECT_THROW(stamp(img.data(), {8, 8, 1}, corner_patch(kImage)), ConfigError);
  EXPECT_THROW(stamp(img.data(), {8, 8, 1}, noise_trigger(kImage, 0.1, 1)), ConfigError);
  EXPECT_THROW(stamp(img.data(), {16, 16, 1}, corner_patch(kImage)), ConfigError);
}

TEST(Trigger, SubsetLawAndUnionStamping) {
  const auto z1 = corner_patch(kImage);
  const auto z2 = right_half(z1);
  EXPECT_EQ(z1.cells.size(), 16u);
  EXPECT_EQ(z2.cells.size(), 8u);
  EXPECT_TRUE(is_subset(z2, z1));
  EXPECT_FALSE(is_subset(z1, z2));

  auto a = testutil::random_tensor({16, 16, 1}, 9);
  auto b = a;
  stamp(a.data(), kImage, patch_union(z1, z2));
  stamp(b.data(), kImage, z1);
  stamp(b.data(), kImage, z2);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  auto clash = z2;
  clash.cells[0].value = 0.5;
  EXPECT_THROW(patch_union(z1, clash), ConfigError);
}

TEST(Trigger, FileRoundTrip) {
  testutil::TempDir dir("trigger");
  for (const auto& t : {corner_patch(kImage, 3, 2, 0.8), noise_trigger(kImage, 0.1, 42)}) {
    const auto path = dir.path() / "t.txt";
    std::ofstream(path) << format_trigger(t);
    const auto back = load_trigger_file(path, kImage);
    EXPECT_EQ(back.kind, t.kind);
    EXPECT_EQ(back.cells, t.cells);
    EXPECT_TRUE(std::equal(back.field.data().begin(), back.field.data().end(), t.field.data().begin(),
                           t.field.data().end()));
  }
  EXPECT_THROW(parse_trigger("kind = patch\ncell = 20 0 0 1\n", kImage), ConfigError);
  EXPECT_THROW(parse_trigger("kind = blob\n", kImage), ConfigError);
  EXPECT_THROW(parse_trigger("kind = patch\nshape = 4\n", kImage), ConfigError);
}

TEST(ApplyPlan, FirstKConventional) {
  const auto train = blobs();
  const auto out = apply_plan(train, conventional(600), 1);
  EXPECT_EQ(out.poisoned_count(), 600u);
  for (std::size_t r = 0; r < out.size(); ++r) {
    EXPECT_EQ(out.poison_flags[r] != 0, out.ids[r] < 600) << r;
    if (out.poison_flags[r]) EXPECT_EQ(out.label_class(r), 7u);
  }
  EXPECT_NO_THROW(out.validate());
}

TEST(ApplyPlan, FootprintStaysInsideMask) {
  const auto train = blobs();
  auto plan = conventional(65);
  plan.selection = SelectionMode::seeded_random;
  const auto out = apply_plan(train, plan, 77);
  const std::size_t px = 16 * 16;
  std::vector<std::uint8_t> mask(px, 0);
  for (const auto& c : plan.primary.cells) mask[c.row * 16 + c.col] = 1;
  std::size_t changed = 0;
  for (std::size_t r = 0; r < out.size(); ++r) {
    const bool same_label = std::equal(out.labels.row(r).begin(), out.labels.row(r).end(),
                                       train.labels.row(r).begin());
    bool same_pixels = true;
    for (std::size_t k = 0; k < px; ++k) {
      if (out.inputs.row(r)[k] != train.inputs.row(r)[k]) {
        same_pixels = false;
        EXPECT_TRUE(mask[k]);
      }
    }
    if (out.poison_flags[r]) ++changed;
    else EXPECT_TRUE(same_label && same_pixels) << r;
  }
  EXPECT_EQ(changed, 65u);
}

TEST(ApplyPlan, EpsilonLabelsCarryExactTargetMass) {
  auto plan = conventional(100);
  plan.mode = AttackMode::epsilon;
  plan.epsilon = 0.4;
  const auto out = apply_plan(blobs(), plan, 1);
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (!out.poison_flags[r]) continue;
    double sum = 0.0;
    for (double v : out.labels.row(r)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(out.labels.row(r)[7], 0.4);
  }
}

TEST(ApplyPlan, AllTrojan) {
  auto plan = conventional(0);
  plan.mode = AttackMode::all_trojan;
  const auto out = apply_plan(blobs(), plan, 1);
  EXPECT_EQ(out.poisoned_count(), out.size());
  for (std::size_t r = 0; r < out.size(); ++r) EXPECT_EQ(out.labels.row(r)[7], 1.0);
}

TEST(ApplyPlan, ZeroBudgetIsIdentity) {
  const auto train = blobs();
  EXPECT_TRUE(apply_plan(train, conventional(0), 1) == train);
  PoisonPlan none;
  none.mode = AttackMode::none;
  EXPECT_TRUE(apply_plan(train, none, 1) == train);
  EXPECT_THROW(apply_plan(train, conventional(1001), 1), ConfigError);
}

TEST(ApplyPlan, EpsilonSquaredThirds) {
  const auto train = blobs();
  PoisonPlan plan = conventional(90);
  plan.mode = AttackMode::epsilon2;
  plan.epsilon = 0.6;
  plan.second_target = 2;
  plan.secondary = right_half(plan.primary);
  const auto out = apply_plan(train, plan, 1);
  const auto both = patch_union(plan.primary, plan.secondary);
  std::size_t z1 = 0, z2 = 0, z12 = 0;
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (!out.poison_flags[r]) continue;
    auto expect_z1 = train.inputs.row(r);
    std::vector<double> a(expect_z1.begin(), expect_z1.end()), b = a;
    stamp(a, kImage, plan.primary);
    stamp(b, kImage, plan.secondary);
    const bool is_z1 = std::equal(a.begin(), a.end(), out.inputs.row(r).begin());
    const bool is_z2 = std::equal(b.begin(), b.end(), out.inputs.row(r).begin());
    if (out.label_class(r) == 2) {
      EXPECT_TRUE(is_z2);
      EXPECT_EQ(out.labels.row(r)[2], 0.6);
      ++z2;
    } else {
      EXPECT_EQ(out.label_class(r), 7u);
      EXPECT_EQ(out.labels.row(r)[7], 0.6);
      // Z1 u Z2 stamps the same pixels as Z1 because Z2 is inside Z1.
      EXPECT_TRUE(is_z1);
      (out.ids[r] < 30 ? z1 : z12)++;
    }
  }
  EXPECT_EQ(z1, 30u);
  EXPECT_EQ(z2, 30u);
  EXPECT_EQ(z12, 30u);

  plan.second_target = 7;
  EXPECT_THROW(apply_plan(train, plan, 1), ConfigError);
  plan.second_target = 2;
  plan.secondary = corner_patch(kImage, 2, 8);
  EXPECT_THROW(apply_plan(train, plan, 1), ConfigError);
}

TEST(ApplyPlan, InvisibleTriggerStaysWithinAmplitude) {
  const auto train = blobs();
  PoisonPlan plan = conventional(200);
  plan.mode = AttackMode::invisible;
  plan.primary = noise_trigger(kImage, 0.1, 8);
  const auto out = apply_plan(train, plan, 1);
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (!out.poison_flags[r]) continue;
    for (std::size_t k = 0; k < 256; ++k) {
      const double clean = train.inputs.row(r)[k];
      const double moved = clean + plan.primary.field[k];
      const double got = out.inputs.row(r)[k];
      EXPECT_LE(std::abs(got - clean), 0.1);
      if (moved >= 0.0 && moved <= 1.0) EXPECT_EQ(got, moved);
    }
  }
  plan.primary = corner_patch(kImage);
  EXPECT_THROW(apply_plan(train, plan, 1), ConfigError);
}

TEST(ApplyPlan, ConventionalRejectsSoftLabels) {
  auto plan = conventional(10);
  plan.epsilon = 0.5;
  EXPECT_THROW(apply_plan(blobs(100), plan, 1), ConfigError);
  plan.epsilon = 1.0;
  plan.target_class = 10;
  EXPECT_THROW(apply_plan(blobs(100), plan, 1), ConfigError);
}

TEST(Budget, ParseAndResolve) {
  EXPECT_EQ(Budget::parse("600").resolve(60000), 600u);
  EXPECT_EQ(Budget::parse("1%").resolve(6500), 65u);
  EXPECT_THROW(Budget::parse("-3"), ConfigError);
  EXPECT_THROW(Budget::parse("150%"), ConfigError);
  EXPECT_THROW(Budget::parse("ten"), ConfigError);
}

TEST(EvalPoisonSet, ExcludesTargetClass) {
  const auto test = data::synth_blobs(1000, 10, 16, 3);
  const auto z1 = corner_patch(kImage);
  const auto eval = make_eval_poison_set(test, z1, 0);
  EXPECT_EQ(eval.size(), 900u);
  for (std::size_t r = 0; r < eval.size(); ++r) {
    EXPECT_EQ(eval.label_class(r), 0u);
    EXPECT_EQ(eval.labels.row(r)[0], 1.0);
  }
  // second trigger alone at inference
  const auto z2 = right_half(z1);
  const auto eval2 = make_eval_poison_set(test, z2, 3);
  for (std::size_t r = 0; r < eval2.size(); ++r) {
    for (const auto& c : z2.cells) EXPECT_EQ(eval2.inputs.row(r)[c.row * 16 + c.col], 1.0);
  }
  EXPECT_THROW(make_eval_poison_set(test.select(std::vector<std::size_t>{}), z1, 0), ConfigError);
}

TEST(EvalPoisonSet, AbsentTargetKeepsEverything) {
  const auto all = data::synth_blobs(500, 10, 16, 3);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < all.size(); ++r)
    if (all.label_class(r) != 4) rows.push_back(r);
  const auto test = all.select(rows);
  EXPECT_EQ(make_eval_poison_set(test, corner_patch(kImage), 4).size(), test.size());
}
