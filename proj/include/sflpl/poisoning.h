#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sflpl/tensor.h"

namespace sflpl {

// Label-flipping attacks run by malicious clients on their own data. Every
// transform rewrites labels only; inputs are never touched.

enum class AttackKind {
  kNone,
  kTargeted,
  kUntargetedRandom,
  kUntargetedFixed,
  kDistanceBased,
};

/// CLI names: none | targeted | untargeted-random | untargeted-fixed | distance
std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

/// Pool searched for the farthest partner in the distance-based attack.
enum class DistanceScope { kBatch, kShard };

std::string to_string(DistanceScope scope);
DistanceScope parse_distance_scope(std::string_view name);

struct AttackConfig {
  AttackKind kind = AttackKind::kNone;
  int source_label = 0;  // targeted, distance
  int target_label = 0;  // targeted
  int flood_label = 0;   // untargeted-fixed
  std::uint64_t seed = 0;  // untargeted-random
  DistanceScope distance_scope = DistanceScope::kBatch;
};

/// Throws std::invalid_argument when a referenced label is outside
/// [0, num_classes).
void validate_attack(const AttackConfig& attack, int num_classes);

struct LabeledBatch {
  Tensor inputs;  // [B, features...]
  std::vector<int> labels;
};

// Label-level transforms. Each validates its label arguments and the
// incoming labels against [0, num_classes).

std::vector<int> flip_targeted(std::span<const int> labels, int source,
                               int target, int num_classes);

std::vector<int> flip_random(std::span<const int> labels, int num_classes,
                             std::mt19937_64& rng);

std::vector<int> flip_fixed(std::span<const int> labels, int flood_label,
                            int num_classes);

/// Every sample labelled `source` takes the pre-attack label of the sample
/// farthest from it (excluding itself). Ties go to the lowest index. With
/// fewer than two samples, or no `source` sample, labels are unchanged.
std::vector<int> flip_distance_based(const Tensor& inputs,
                                     std::span<const int> labels, int source,
                                     int num_classes);

LabeledBatch poison_targeted(const LabeledBatch& batch, int source, int target,
                             int num_classes);
LabeledBatch poison_untargeted_random(const LabeledBatch& batch,
                                      int num_classes, std::mt19937_64& rng);
LabeledBatch poison_untargeted_fixed(const LabeledBatch& batch, int flood_label,
                                     int num_classes);
LabeledBatch poison_distance_based(const LabeledBatch& batch, int source,
                                   int num_classes);

/// Dispatches on `attack.kind`. `rng` is only consumed by the random variant.
std::vector<int> apply_attack(const AttackConfig& attack, const Tensor& inputs,
                              std::span<const int> labels, int num_classes,
                              std::mt19937_64& rng);

double euclidean_distance(std::span<const double> x, std::span<const double> y);
double euclidean_distance(const Tensor& x, const Tensor& y);

/// Source = class with the highest per-class accuracy, target = the second
/// highest. Ties resolve to the lower class index.
std::pair<int, int> auto_select_source_target(
    std::span<const double> per_class_accuracy);

/// Unbiased draw from [0, n).
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

}  // namespace sflpl
