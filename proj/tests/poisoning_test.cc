#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.h"
#include "poisoning_properties.h"
#include "sflpl/poisoning.h"

namespace sflpl {
namespace {

LabeledBatch make_batch(std::vector<int> labels, std::size_t features = 2) {
  Tensor x({labels.size(), features});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  return LabeledBatch{x, std::move(labels)};
}

TEST(Targeted, FlipsOnlySource) {
  const LabeledBatch b = make_batch({0, 1, 1, 2});
  EXPECT_EQ(poison_targeted(b, 1, 2, 3).labels, (std::vector<int>{0, 2, 2, 2}));
}

TEST(Targeted, AbsentSourceAndSelfTargetAreNoOps) {
  const LabeledBatch b = make_batch({0, 0, 2});
  EXPECT_EQ(poison_targeted(b, 1, 2, 3).labels, b.labels);
  EXPECT_EQ(poison_targeted(b, 0, 0, 3).labels, b.labels);
}

TEST(Targeted, RejectsLabelsOutsideSet) {
  const LabeledBatch b = make_batch({0, 1});
  EXPECT_THROW(poison_targeted(b, 3, 0, 3), std::invalid_argument);
  EXPECT_THROW(poison_targeted(b, 0, -1, 3), std::invalid_argument);
  EXPECT_THROW(poison_targeted(make_batch({0, 5}), 0, 1, 3), std::invalid_argument);
}

TEST(UntargetedRandom, SameSeedSameLabels) {
  const LabeledBatch b = make_batch(std::vector<int>(50, 1));
  std::mt19937_64 r1(42);
  std::mt19937_64 r2(42);
  std::mt19937_64 r3(43);
  const auto a = poison_untargeted_random(b, 5, r1).labels;
  EXPECT_EQ(a, poison_untargeted_random(b, 5, r2).labels);
  EXPECT_NE(a, poison_untargeted_random(b, 5, r3).labels);
}

TEST(UntargetedRandom, FrequenciesWithinFiveSigma) {
  // 10,000 draws over 5 labels: each count ~ Binomial(10000, 0.2).
  const std::size_t n = 10000;
  const LabeledBatch b = make_batch(std::vector<int>(n, 0), 1);
  std::mt19937_64 rng(2024);
  const auto labels = poison_untargeted_random(b, 5, rng).labels;
  std::vector<std::size_t> counts(5, 0);
  for (int y : labels) {
    ASSERT_GE(y, 0);
    ASSERT_LT(y, 5);
    ++counts[static_cast<std::size_t>(y)];
  }
  const double sigma = std::sqrt(n * 0.2 * 0.8);
  for (std::size_t c : counts) EXPECT_LE(std::abs(static_cast<double>(c) - 2000.0), 5.0 * sigma);
}

TEST(UntargetedRandom, NeedsTwoClasses) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(poison_untargeted_random(make_batch({0}), 1, rng), std::invalid_argument);
}

TEST(UniformIndex, CoversRangeWithoutBias) {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> counts(3, 0);
  for (int i = 0; i < 30000; ++i) ++counts[uniform_index(rng, 3)];
  const double sigma = std::sqrt(30000 * (1.0 / 3) * (2.0 / 3));
  for (std::size_t c : counts) EXPECT_LE(std::abs(static_cast<double>(c) - 10000.0), 5.0 * sigma);
  EXPECT_THROW(uniform_index(rng, 0), std::invalid_argument);
}

TEST(UntargetedFixed, FloodsAndIsIdempotent) {
  const LabeledBatch b = make_batch({0, 1, 2});
  const LabeledBatch once = poison_untargeted_fixed(b, 1, 3);
  EXPECT_EQ(once.labels, (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(poison_untargeted_fixed(once, 1, 3).labels, once.labels);
  EXPECT_EQ(poison_untargeted_fixed(make_batch({2, 2}), 2, 3).labels, (std::vector<int>{2, 2}));
  EXPECT_THROW(poison_untargeted_fixed(b, 3, 3), std::invalid_argument);
}

TEST(Distance, EuclideanExamples) {
  const Tensor o({2}, std::vector<double>{0, 0});
  const Tensor p({2}, std::vector<double>{3, 4});
  EXPECT_EQ(euclidean_distance(o, p), 5.0);
  EXPECT_EQ(euclidean_distance(p, p), 0.0);
  EXPECT_THROW(euclidean_distance(o, Tensor({3})), std::invalid_argument);
}

TEST(Distance, EuclideanMatchesLoopOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = oracle::random_tensor({124}, rng);
    const Tensor y = oracle::random_tensor({124}, rng);
    double s = 0.0;
    for (std::size_t i = 0; i < 124; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    EXPECT_NEAR(euclidean_distance(x, y), std::sqrt(s), 1e-12);
  }
}

TEST(Distance, ThreePointExample) {
  const LabeledBatch b{Tensor({3, 2}, std::vector<double>{0, 0, 1, 0, 5, 5}), {0, 1, 2}};
  EXPECT_EQ(poison_distance_based(b, 0, 3).labels, (std::vector<int>{2, 1, 2}));
}

TEST(Distance, GuardsAndFixedPoints) {
  const LabeledBatch b{Tensor({3, 2}, std::vector<double>{0, 0, 1, 0, 5, 5}), {1, 1, 2}};
  EXPECT_EQ(poison_distance_based(b, 0, 3).labels, b.labels);
  const LabeledBatch same{b.inputs, {0, 0, 0}};
  EXPECT_EQ(poison_distance_based(same, 0, 3).labels, same.labels);
  const LabeledBatch single{Tensor({1, 2}, 1.0), {0}};
  EXPECT_EQ(poison_distance_based(single, 0, 3).labels, single.labels);
}

TEST(Distance, TiesGoToLowestIndex) {
  // Samples 1 and 2 are both at distance 1 from sample 0.
  const LabeledBatch b{Tensor({3, 1}, std::vector<double>{0, 1, -1}), {0, 1, 2}};
  EXPECT_EQ(poison_distance_based(b, 0, 3).labels[0], 1);
}

TEST(ApplyAttack, DispatchesOnKind) {
  const LabeledBatch b{Tensor({3, 2}, std::vector<double>{0, 0, 1, 0, 5, 5}), {0, 1, 2}};
  std::mt19937_64 rng(1);
  AttackConfig a;
  EXPECT_EQ(apply_attack(a, b.inputs, b.labels, 3, rng), b.labels);
  a.kind = AttackKind::kDistanceBased;
  EXPECT_EQ(apply_attack(a, b.inputs, b.labels, 3, rng), (std::vector<int>{2, 1, 2}));
  a.kind = AttackKind::kUntargetedFixed;
  a.flood_label = 2;
  EXPECT_EQ(apply_attack(a, b.inputs, b.labels, 3, rng), (std::vector<int>{2, 2, 2}));
  a.kind = AttackKind::kTargeted;
  a.source_label = 1;
  a.target_label = 0;
  EXPECT_EQ(apply_attack(a, b.inputs, b.labels, 3, rng), (std::vector<int>{0, 0, 2}));
}

TEST(ApplyAttack, ValidateRejectsForeignLabels) {
  AttackConfig a;
  a.kind = AttackKind::kTargeted;
  a.source_label = 0;
  a.target_label = 5;
  EXPECT_THROW(validate_attack(a, 5), std::invalid_argument);
  a.target_label = 4;
  EXPECT_NO_THROW(validate_attack(a, 5));
}

TEST(ApplyAttack, NamesRoundTrip) {
  for (AttackKind k : {AttackKind::kNone, AttackKind::kTargeted, AttackKind::kUntargetedRandom,
                       AttackKind::kUntargetedFixed, AttackKind::kDistanceBased})
    EXPECT_EQ(parse_attack_kind(to_string(k)), k);
  EXPECT_EQ(to_string(AttackKind::kDistanceBased), "distance");
  EXPECT_THROW(parse_attack_kind("backdoor"), std::invalid_argument);
}

TEST(AutoSelect, Examples) {
  const std::vector<double> a = {0.9, 0.7, 0.95};
  EXPECT_EQ(auto_select_source_target(a), std::make_pair(2, 0));
  const std::vector<double> tie = {0.5, 0.5};
  EXPECT_EQ(auto_select_source_target(tie), std::make_pair(0, 1));
  const std::vector<double> one = {1.0};
  EXPECT_THROW(auto_select_source_target(one), std::invalid_argument);
}

TEST(AutoSelect, MatchesSortOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 9;
    std::vector<double> acc(n);
    // Coarse values force frequent ties.
    for (double& v : acc) v = static_cast<double>(rng() % 5) / 4.0;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return acc[static_cast<std::size_t>(x)] > acc[static_cast<std::size_t>(y)]; });
    EXPECT_EQ(auto_select_source_target(acc), std::make_pair(order[0], order[1]));
  }
}

TEST(Properties, InvariantsHoldOnRandomBatches) {
  const oracle::PropertyReport r = oracle::run_poisoning_properties(20260101, 2000);
  EXPECT_EQ(r.cases, 2000u);
  for (const auto& f : r.failures) ADD_FAILURE() << f;
}

}  // namespace
}  // namespace sflpl
