#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sflpl/nn.h"

namespace sflpl {

enum class ModelVersion { kMnistV1, kMnistV2, kEcgV1, kEcgV2 };

std::string to_string(ModelVersion version);
ModelVersion parse_model_version(std::string_view name);

struct ModelSpec {
  std::string name;
  std::vector<Layer> layers;
  Shape sample_shape;  // per-sample input shape, e.g. {784} or {1, 124}
  std::size_t num_classes = 0;

  std::size_t input_size() const { return shape_volume(sample_shape); }
  std::size_t learnable_layer_count() const;
};

/// Client keeps the first `cut_index` learnable layers.
struct SplitPoint {
  ModelVersion version;
  std::size_t cut_index;
};

SplitPoint split_point(ModelVersion version);

enum class Side { kClient, kServer };

struct ModelSegment {
  std::vector<Layer> layers;
  Side side = Side::kClient;

  std::size_t learnable_layer_count() const;
};

struct SplitModel {
  ModelSegment client;
  ModelSegment server;
};

inline constexpr std::size_t kMnistInputSize = 784;
inline constexpr std::size_t kMnistClasses = 10;
inline constexpr std::size_t kEcgInputSize = 124;
inline constexpr std::size_t kEcgClasses = 5;

/// Hidden widths of the ten-layer MNIST network (nine hidden layers).
std::vector<std::size_t> default_mnist_widths();

/// Ten dense layers, ReLU between them, logits out. `hidden_widths` must
/// hold nine entries.
ModelSpec build_mnist_model(std::uint64_t seed,
                            const std::vector<std::size_t>& hidden_widths =
                                default_mnist_widths(),
                            std::size_t input_size = kMnistInputSize,
                            std::size_t num_classes = kMnistClasses);

struct EcgChannelPlan {
  std::size_t conv1 = 16;
  std::size_t conv2 = 16;
  std::size_t conv3 = 32;
  std::size_t conv4 = 32;
  std::size_t kernel = 5;
  std::size_t hidden = 64;
};

/// conv, conv, pool, conv, conv, pool, dense, dense over [B, 1, 124] beats.
ModelSpec build_ecg_model(std::uint64_t seed, const EcgChannelPlan& plan = {},
                          std::size_t input_size = kEcgInputSize,
                          std::size_t num_classes = kEcgClasses);

ModelSpec build_model(ModelVersion version, std::uint64_t seed);

/// Parameter-free layers stay with the learnable layer they follow.
SplitModel split_at(const ModelSpec& model, std::size_t cut_index);
SplitModel split_at(const ModelSpec& model, const SplitPoint& point);

/// Shape of a batch of `batch` samples for `model`.
Shape batch_shape(const ModelSpec& model, std::size_t batch);

}  // namespace sflpl
