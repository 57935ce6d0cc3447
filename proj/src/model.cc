#include "sflpl/model.h"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace sflpl {
namespace {

std::size_t count_learnable(const std::vector<Layer>& layers) {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(), [](const Layer& l) { return l.learnable(); }));
}

}  // namespace

std::string to_string(ModelVersion version) {
  switch (version) {
    case ModelVersion::kMnistV1:
      return "MNISTv1";
    case ModelVersion::kMnistV2:
      return "MNISTv2";
    case ModelVersion::kEcgV1:
      return "ECGv1";
    case ModelVersion::kEcgV2:
      return "ECGv2";
  }
  return "?";
}

ModelVersion parse_model_version(std::string_view name) {
  for (ModelVersion v : {ModelVersion::kMnistV1, ModelVersion::kMnistV2,
                         ModelVersion::kEcgV1, ModelVersion::kEcgV2}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown model version '" + std::string(name) +
                              "' (expected MNISTv1, MNISTv2, ECGv1 or ECGv2)");
}

std::size_t ModelSpec::learnable_layer_count() const {
  return count_learnable(layers);
}

std::size_t ModelSegment::learnable_layer_count() const {
  return count_learnable(layers);
}

SplitPoint split_point(ModelVersion version) {
  switch (version) {
    case ModelVersion::kMnistV1:
      return {version, 2};
    case ModelVersion::kMnistV2:
      return {version, 4};
    case ModelVersion::kEcgV1:
      return {version, 2};
    case ModelVersion::kEcgV2:
      return {version, 3};
  }
  throw std::logic_error("unknown model version");
}

std::vector<std::size_t> default_mnist_widths() {
  return {512, 256, 128, 128, 64, 64, 32, 32, 16};
}

ModelSpec build_mnist_model(std::uint64_t seed,
                            const std::vector<std::size_t>& hidden_widths,
                            std::size_t input_size, std::size_t num_classes) {
  if (hidden_widths.size() != 9) {
    throw std::invalid_argument("MNIST model needs 9 hidden widths, got " +
                                std::to_string(hidden_widths.size()));
  }
  std::mt19937_64 rng(seed);
  ModelSpec spec;
  spec.name = "mnist-mlp";
  spec.sample_shape = {input_size};
  spec.num_classes = num_classes;
  std::size_t in = input_size;
  for (std::size_t width : hidden_widths) {
    spec.layers.push_back(make_dense(in, width, Activation::kReLU, rng));
    in = width;
  }
  spec.layers.push_back(make_dense(in, num_classes, Activation::kNone, rng));
  return spec;
}

ModelSpec build_ecg_model(std::uint64_t seed, const EcgChannelPlan& plan,
                          std::size_t input_size, std::size_t num_classes) {
  const std::size_t k = plan.kernel;
  // Two conv+conv+pool stages must leave at least one position.
  if (input_size < 4 * k) {
    throw std::invalid_argument("ECG input of " + std::to_string(input_size) +
                                " samples is too short for kernel " +
                                std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  ModelSpec spec;
  spec.name = "ecg-cnn";
  spec.sample_shape = {1, input_size};
  spec.num_classes = num_classes;
  auto& L = spec.layers;
  L.push_back(make_conv1d(1, plan.conv1, k, Activation::kReLU, rng));
  L.push_back(make_conv1d(plan.conv1, plan.conv2, k, Activation::kReLU, rng));
  L.push_back(make_maxpool1d());
  L.push_back(make_conv1d(plan.conv2, plan.conv3, k, Activation::kReLU, rng));
  L.push_back(make_conv1d(plan.conv3, plan.conv4, k, Activation::kReLU, rng));
  L.push_back(make_maxpool1d());
  std::size_t length = input_size;
  length = (length - 2 * (k - 1)) / 2;
  length = (length - 2 * (k - 1)) / 2;
  L.push_back(make_dense(plan.conv4 * length, plan.hidden, Activation::kReLU, rng));
  L.push_back(make_dense(plan.hidden, num_classes, Activation::kNone, rng));
  return spec;
}

ModelSpec build_model(ModelVersion version, std::uint64_t seed) {
  switch (version) {
    case ModelVersion::kMnistV1:
    case ModelVersion::kMnistV2:
      return build_mnist_model(seed);
    case ModelVersion::kEcgV1:
    case ModelVersion::kEcgV2:
      return build_ecg_model(seed);
  }
  throw std::logic_error("unknown model version");
}

SplitModel split_at(const ModelSpec& model, std::size_t cut_index) {
  const std::size_t learnable = model.learnable_layer_count();
  if (cut_index == 0 || cut_index >= learnable) {
    throw std::invalid_argument("cut index " + std::to_string(cut_index) +
                                " outside (0, " + std::to_string(learnable) +
                                ") for " + model.name);
  }
  std::size_t boundary = 0;
  std::size_t seen = 0;
  while (seen < cut_index) {
    if (model.layers[boundary].learnable()) ++seen;
    ++boundary;
  }
  while (boundary < model.layers.size() && !model.layers[boundary].learnable()) {
    ++boundary;
  }
  SplitModel split;
  split.client.side = Side::kClient;
  split.server.side = Side::kServer;
  split.client.layers.assign(model.layers.begin(),
                             model.layers.begin() + boundary);
  split.server.layers.assign(model.layers.begin() + boundary,
                             model.layers.end());
  return split;
}

SplitModel split_at(const ModelSpec& model, const SplitPoint& point) {
  return split_at(model, point.cut_index);
}

Shape batch_shape(const ModelSpec& model, std::size_t batch) {
  Shape shape{batch};
  shape.insert(shape.end(), model.sample_shape.begin(), model.sample_shape.end());
  return shape;
}

}  // namespace sflpl
