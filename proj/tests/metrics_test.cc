#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "sflpl/metrics.h"

namespace sflpl {
namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t p = 0; p < rows.size(); ++p) cm.add(a, p, rows[a][p]);
  return cm;
}

TEST(Confusion, Examples) {
  const std::vector<int> y = {0, 1, 2, 2};
  const ConfusionMatrix diag = confusion(y, y, 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(diag.at(a, p), a == p ? (a == 2 ? 2u : 1u) : 0u);

  const std::vector<int> pred = {2};
  const std::vector<int> label = {1};
  const ConfusionMatrix one = confusion(pred, label, 3);
  EXPECT_EQ(one.at(1, 2), 1u);
  EXPECT_EQ(one.total(), 1u);
}

TEST(Confusion, MatchesCountingLoopOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng() % 8;
    const std::size_t n = 1 + rng() % 300;
    std::vector<int> pred(n);
    std::vector<int> label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng() % c);
      label[i] = static_cast<int>(rng() % c);
    }
    const ConfusionMatrix cm = confusion(pred, label, c);
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t p = 0; p < c; ++p) {
        std::uint64_t count = 0;
        for (std::size_t i = 0; i < n; ++i)
          count += label[i] == static_cast<int>(a) && pred[i] == static_cast<int>(p);
        ASSERT_EQ(cm.at(a, p), count);
      }
    EXPECT_EQ(cm.total(), n);
  }
}

TEST(Confusion, RejectsBadInput) {
  const std::vector<int> two = {0, 1};
  const std::vector<int> one = {0};
  const std::vector<int> high = {0, 3};
  EXPECT_THROW(confusion(two, one, 2), std::invalid_argument);
  EXPECT_THROW(confusion(high, two, 3), std::invalid_argument);
}

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy(from_rows({{3, 0}, {0, 5}})), 100.0);
  EXPECT_EQ(accuracy(from_rows({{0, 3}, {5, 0}})), 0.0);
  // Hand count: trace 4 + 1 + 6 = 11 of 20.
  EXPECT_DOUBLE_EQ(accuracy(from_rows({{4, 1, 2}, {3, 1, 0}, {1, 2, 6}})), 55.0);
  EXPECT_THROW(accuracy(ConfusionMatrix(3)), std::invalid_argument);
}

TEST(AccuracyDrop, ReproducesPublishedValues) {
  EXPECT_NEAR(accuracy_drop(88.87, 33.87), 61.89, 0.01);
  EXPECT_NEAR(accuracy_drop(88.89, 75.00), 15.62, 0.01);
  EXPECT_EQ(accuracy_drop(96.46, 96.46), 0.0);
  EXPECT_THROW(accuracy_drop(0.0, 10.0), std::invalid_argument);
}

TEST(AccuracyDrop, StrictlyDecreasingInAttackedAccuracy) {
  double previous = accuracy_drop(90.0, 0.0);
  for (double a = 0.5; a <= 100.0; a += 0.5) {
    const double d = accuracy_drop(90.0, a);
    EXPECT_LT(d, previous);
    previous = d;
  }
}

TEST(PerClass, TwoClassHandComputation) {
  const auto s = per_class_prf(from_rows({{8, 2}, {1, 9}}));
  const double p0 = 8.0 / 9.0;
  const double r0 = 0.8;
  EXPECT_DOUBLE_EQ(s[0].precision, p0);
  EXPECT_DOUBLE_EQ(s[0].recall, r0);
  EXPECT_DOUBLE_EQ(s[0].fscore, 2.0 * p0 * r0 / (p0 + r0));
  EXPECT_DOUBLE_EQ(s[1].precision, 9.0 / 11.0);
  EXPECT_DOUBLE_EQ(s[1].recall, 0.9);
}

TEST(PerClass, PerfectAndEmptyClasses) {
  const auto perfect = per_class_prf(from_rows({{4, 0}, {0, 6}}));
  for (const ClassScores& s : perfect) {
    EXPECT_EQ(s.precision, 1.0);
    EXPECT_EQ(s.recall, 1.0);
    EXPECT_EQ(s.fscore, 1.0);
  }
  const auto absent = per_class_prf(from_rows({{4, 0, 0}, {1, 6, 0}, {0, 0, 0}}));
  EXPECT_EQ(absent[2].precision, 0.0);
  EXPECT_EQ(absent[2].recall, 0.0);
  EXPECT_EQ(absent[2].fscore, 0.0);
}

TEST(PerClass, AccuracyIsCountWeightedRecallAndPermutationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng() % 6;
    const std::size_t n = 1 + rng() % 200;
    std::vector<int> pred(n);
    std::vector<int> label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng() % c);
      label[i] = rng() % 3 == 0 ? pred[i] : static_cast<int>(rng() % c);
    }
    const ConfusionMatrix cm = confusion(pred, label, c);
    const auto recall = per_class_accuracy(cm);
    double weighted = 0.0;
    for (std::size_t k = 0; k < c; ++k) weighted += recall[k] * static_cast<double>(cm.row_sum(k));
    EXPECT_NEAR(accuracy(cm), 100.0 * weighted / static_cast<double>(n), 1e-9);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> pp(n);
    std::vector<int> ll(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = pred[order[i]];
      ll[i] = label[order[i]];
    }
    const ConfusionMatrix shuffled = confusion(pp, ll, c);
    EXPECT_EQ(shuffled, cm);
    const auto a = per_class_prf(cm);
    const auto b = per_class_prf(shuffled);
    for (std::size_t k = 0; k < c; ++k) {
      EXPECT_EQ(a[k].precision, b[k].precision);
      EXPECT_EQ(a[k].recall, b[k].recall);
      EXPECT_EQ(a[k].fscore, b[k].fscore);
      EXPECT_GE(a[k].fscore, 0.0);
      EXPECT_LE(a[k].fscore, 1.0);
    }
  }
}

TEST(Report, DropPresentOnlyWithBaseline) {
  const ConfusionMatrix cm = from_rows({{8, 2}, {1, 9}});
  const MetricsReport without = make_report(3, cm);
  EXPECT_FALSE(without.accuracy_drop.has_value());
  EXPECT_EQ(without.epoch, 3u);
  EXPECT_DOUBLE_EQ(without.accuracy, 85.0);
  const MetricsReport with = make_report(3, cm, 85.0);
  ASSERT_TRUE(with.accuracy_drop.has_value());
  EXPECT_EQ(*with.accuracy_drop, 0.0);
  EXPECT_EQ(with.per_class.size(), 2u);
}

}  // namespace
}  // namespace sflpl
