#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace sflpl {

/// Rows are actual classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0)
      : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t actual, std::size_t predicted) const {
    return counts_.at(actual * classes_ + predicted);
  }
  void add(std::size_t actual, std::size_t predicted, std::uint64_t n = 1) {
    counts_.at(actual * classes_ + predicted) += n;
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t actual) const;
  std::uint64_t column_sum(std::size_t predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> predictions,
                          std::span<const int> labels, std::size_t classes);

/// 100 * trace / total.
double accuracy(const ConfusionMatrix& cm);

/// Relative drop in percent: 100 * (clean - attacked) / clean.
double accuracy_drop(double clean_accuracy, double attacked_accuracy);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
};

/// 0/0 is taken as 0 for every ratio.
std::vector<ClassScores> per_class_prf(const ConfusionMatrix& cm);

/// Recall of every class in [0, 1] (0 for classes absent from the labels).
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  std::size_t epoch = 0;
  double accuracy = 0.0;                      // percent
  std::optional<double> accuracy_drop;        // percent, needs a baseline
  double validation_accuracy = 0.0;           // percent, client holdouts
  double train_loss = 0.0;
  ConfusionMatrix confusion;
  std::vector<ClassScores> per_class;
};

/// Builds the report for one evaluation; `baseline_accuracy` fills A_d.
MetricsReport make_report(std::size_t epoch, const ConfusionMatrix& cm,
                          std::optional<double> baseline_accuracy = std::nullopt);

}  // namespace sflpl
