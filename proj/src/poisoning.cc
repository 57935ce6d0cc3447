#include "sflpl/poisoning.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sflpl {
namespace {

void check_label(int label, int num_classes, const char* what) {
  if (label < 0 || label >= num_classes) {
    throw std::invalid_argument(std::string(what) + " " +
                                std::to_string(label) + " outside [0, " +
                                std::to_string(num_classes) + ")");
  }
}

void check_labels(std::span<const int> labels, int num_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) +
                                  " at index " + std::to_string(i) +
                                  " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

LabeledBatch relabel(const LabeledBatch& batch, std::vector<int> labels) {
  return LabeledBatch{batch.inputs, std::move(labels)};
}

}  // namespace

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone:
      return "none";
    case AttackKind::kTargeted:
      return "targeted";
    case AttackKind::kUntargetedRandom:
      return "untargeted-random";
    case AttackKind::kUntargetedFixed:
      return "untargeted-fixed";
    case AttackKind::kDistanceBased:
      return "distance";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  for (AttackKind k : {AttackKind::kNone, AttackKind::kTargeted,
                       AttackKind::kUntargetedRandom,
                       AttackKind::kUntargetedFixed,
                       AttackKind::kDistanceBased}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument(
      "unknown attack '" + std::string(name) +
      "' (expected none|targeted|untargeted-random|untargeted-fixed|distance)");
}

std::string to_string(DistanceScope scope) {
  return scope == DistanceScope::kBatch ? "batch" : "shard";
}

DistanceScope parse_distance_scope(std::string_view name) {
  if (name == "batch") return DistanceScope::kBatch;
  if (name == "shard") return DistanceScope::kShard;
  throw std::invalid_argument("unknown distance scope '" + std::string(name) +
                              "' (expected batch|shard)");
}

void validate_attack(const AttackConfig& attack, int num_classes) {
  switch (attack.kind) {
    case AttackKind::kNone:
      break;
    case AttackKind::kTargeted:
      check_label(attack.source_label, num_classes, "source label");
      check_label(attack.target_label, num_classes, "target label");
      break;
    case AttackKind::kUntargetedRandom:
      if (num_classes < 2) {
        throw std::invalid_argument("random flipping needs at least 2 classes");
      }
      break;
    case AttackKind::kUntargetedFixed:
      check_label(attack.flood_label, num_classes, "flood label");
      break;
    case AttackKind::kDistanceBased:
      check_label(attack.source_label, num_classes, "source label");
      break;
  }
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t limit = std::mt19937_64::max() -
                              (std::mt19937_64::max() % n + 1) % n;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw > limit);
  return draw % n;
}

std::vector<int> flip_targeted(std::span<const int> labels, int source,
                               int target, int num_classes) {
  check_label(source, num_classes, "source label");
  check_label(target, num_classes, "target label");
  check_labels(labels, num_classes);
  std::vector<int> out(labels.begin(), labels.end());
  std::replace(out.begin(), out.end(), source, target);
  return out;
}

std::vector<int> flip_random(std::span<const int> labels, int num_classes,
                             std::mt19937_64& rng) {
  if (num_classes < 2) {
    throw std::invalid_argument("random flipping needs at least 2 classes");
  }
  check_labels(labels, num_classes);
  std::vector<int> out(labels.size());
  for (int& y : out) {
    y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(num_classes)));
  }
  return out;
}

std::vector<int> flip_fixed(std::span<const int> labels, int flood_label,
                            int num_classes) {
  check_label(flood_label, num_classes, "flood label");
  check_labels(labels, num_classes);
  return std::vector<int>(labels.size(), flood_label);
}

std::vector<int> flip_distance_based(const Tensor& inputs,
                                     std::span<const int> labels, int source,
                                     int num_classes) {
  check_label(source, num_classes, "source label");
  check_labels(labels, num_classes);
  if (inputs.rank() == 0 || inputs.dim(0) != labels.size()) {
    throw std::invalid_argument("distance attack: " +
                                std::to_string(labels.size()) +
                                " labels for inputs " +
                                shape_string(inputs.shape()));
  }
  std::vector<int> out(labels.begin(), labels.end());
  const std::size_t n = labels.size();
  const std::size_t stride = inputs.sample_size();
  auto row = [&](std::size_t i) {
    return inputs.data().subspan(i * stride, stride);
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != source) continue;
    double farthest = -1.0;
    std::size_t partner = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = euclidean_distance(row(i), row(j));
      if (d > farthest) {
        farthest = d;
        partner = j;
      }
    }
    out[i] = labels[partner];
  }
  return out;
}

LabeledBatch poison_targeted(const LabeledBatch& batch, int source, int target,
                             int num_classes) {
  return relabel(batch, flip_targeted(batch.labels, source, target, num_classes));
}

LabeledBatch poison_untargeted_random(const LabeledBatch& batch,
                                      int num_classes, std::mt19937_64& rng) {
  return relabel(batch, flip_random(batch.labels, num_classes, rng));
}

LabeledBatch poison_untargeted_fixed(const LabeledBatch& batch, int flood_label,
                                     int num_classes) {
  return relabel(batch, flip_fixed(batch.labels, flood_label, num_classes));
}

LabeledBatch poison_distance_based(const LabeledBatch& batch, int source,
                                   int num_classes) {
  return relabel(batch, flip_distance_based(batch.inputs, batch.labels, source,
                                            num_classes));
}

std::vector<int> apply_attack(const AttackConfig& attack, const Tensor& inputs,
                              std::span<const int> labels, int num_classes,
                              std::mt19937_64& rng) {
  switch (attack.kind) {
    case AttackKind::kNone:
      check_labels(labels, num_classes);
      return std::vector<int>(labels.begin(), labels.end());
    case AttackKind::kTargeted:
      return flip_targeted(labels, attack.source_label, attack.target_label,
                           num_classes);
    case AttackKind::kUntargetedRandom:
      return flip_random(labels, num_classes, rng);
    case AttackKind::kUntargetedFixed:
      return flip_fixed(labels, attack.flood_label, num_classes);
    case AttackKind::kDistanceBased:
      return flip_distance_based(inputs, labels, attack.source_label,
                                 num_classes);
  }
  throw std::logic_error("unknown attack kind");
}

double euclidean_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("euclidean_distance: lengths " +
                                std::to_string(x.size()) + " and " +
                                std::to_string(y.size()) + " differ");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double euclidean_distance(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    throw std::invalid_argument("euclidean_distance: shapes " +
                                shape_string(x.shape()) + " and " +
                                shape_string(y.shape()) + " differ");
  }
  return euclidean_distance(x.data(), y.data());
}

std::pair<int, int> auto_select_source_target(
    std::span<const double> per_class_accuracy) {
  if (per_class_accuracy.size() < 2) {
    throw std::invalid_argument("source/target selection needs at least 2 classes");
  }
  for (double a : per_class_accuracy) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw std::invalid_argument("per-class accuracy must lie in [0, 1]");
    }
  }
  int best = 0;
  for (int c = 1; c < static_cast<int>(per_class_accuracy.size()); ++c) {
    if (per_class_accuracy[c] > per_class_accuracy[best]) best = c;
  }
  int second = best == 0 ? 1 : 0;
  for (int c = 0; c < static_cast<int>(per_class_accuracy.size()); ++c) {
    if (c != best && per_class_accuracy[c] > per_class_accuracy[second]) {
      second = c;
    }
  }
  return {best, second};
}

}  // namespace sflpl
