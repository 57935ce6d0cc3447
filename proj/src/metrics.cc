#include "sflpl/metrics.h"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sflpl {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < classes_; ++c) t += at(c, c);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(actual, p);
  return s;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t a = 0; a < classes_; ++a) s += at(a, predicted);
  return s;
}

ConfusionMatrix confusion(std::span<const int> predictions,
                          std::span<const int> labels, std::size_t classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("confusion: " +
                                std::to_string(predictions.size()) +
                                " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int a = labels[i];
    const int p = predictions[i];
    if (a < 0 || p < 0 || static_cast<std::size_t>(a) >= classes ||
        static_cast<std::size_t>(p) >= classes) {
      throw std::invalid_argument("confusion: pair (" + std::to_string(a) +
                                  ", " + std::to_string(p) + ") at index " +
                                  std::to_string(i) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
    cm.add(static_cast<std::size_t>(a), static_cast<std::size_t>(p));
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
  return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double accuracy_drop(double clean_accuracy, double attacked_accuracy) {
  if (!(clean_accuracy > 0.0)) {
    throw std::invalid_argument("accuracy_drop: clean accuracy must be positive");
  }
  return 100.0 * (clean_accuracy - attacked_accuracy) / clean_accuracy;
}

namespace {
double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

std::vector<ClassScores> per_class_prf(const ConfusionMatrix& cm) {
  std::vector<ClassScores> out(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const std::uint64_t tp = cm.at(c, c);
    ClassScores& s = out[c];
    s.precision = ratio(tp, cm.column_sum(c));
    s.recall = ratio(tp, cm.row_sum(c));
    const double sum = s.precision + s.recall;
    s.fscore = sum == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / sum;
  }
  return out;
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    out[c] = ratio(cm.at(c, c), cm.row_sum(c));
  }
  return out;
}

MetricsReport make_report(std::size_t epoch, const ConfusionMatrix& cm,
                          std::optional<double> baseline_accuracy) {
  MetricsReport report;
  report.epoch = epoch;
  report.confusion = cm;
  report.accuracy = accuracy(cm);
  report.per_class = per_class_prf(cm);
  if (baseline_accuracy) {
    report.accuracy_drop = accuracy_drop(*baseline_accuracy, report.accuracy);
  }
  return report;
}

}  // namespace sflpl
