#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sflpl/tensor.h"

namespace sflpl {

enum class LayerKind { kDense, kConv1D, kMaxPool1D };
enum class Activation { kNone, kReLU };

std::string to_string(LayerKind kind);

// Dense:     weights [in_features, out_features], biases [out_features].
//            Accepts any input whose per-sample volume is in_features, so a
//            [B, C, L] feature map is flattened implicitly.
// Conv1D:    weights [out_channels, in_channels, kernel], biases
//            [out_channels]. Stride 1, no padding. Input [B, C, L].
// MaxPool1D: window 2, stride 2, no parameters. Input [B, C, L].
struct Layer {
  LayerKind kind = LayerKind::kDense;
  Activation activation = Activation::kNone;
  Tensor weights;
  Tensor biases;

  bool learnable() const { return kind != LayerKind::kMaxPool1D; }
  std::size_t parameter_count() const { return weights.size() + biases.size(); }
};

Layer make_dense(std::size_t in_features, std::size_t out_features,
                 Activation activation, std::mt19937_64& rng);
Layer make_conv1d(std::size_t in_channels, std::size_t out_channels,
                  std::size_t kernel, Activation activation,
                  std::mt19937_64& rng);
Layer make_maxpool1d();

/// Output shape of `layer` for an input of shape `input`. Throws
/// std::invalid_argument describing the mismatch when the input does not fit.
Shape layer_output_shape(const Layer& layer, const Shape& input);

struct ForwardCache {
  std::vector<Tensor> inputs;           // input seen by each layer
  std::vector<Tensor> pre_activations;  // empty unless the layer has ReLU
  Shape output_shape;

  std::size_t size() const { return inputs.size(); }
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

ForwardResult forward(std::span<const Layer> layers, const Tensor& batch);

/// Forward pass without keeping intermediates.
Tensor infer(std::span<const Layer> layers, const Tensor& batch);

struct LayerGrads {
  Tensor weights;
  Tensor biases;
};

struct BackwardResult {
  std::vector<LayerGrads> param_grads;
  Tensor input_grad;
};

BackwardResult backward(std::span<const Layer> layers,
                        const ForwardCache& cache,
                        const Tensor& upstream_grad);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
LossResult softmax_cross_entropy(const Tensor& logits,
                                 std::span<const int> labels);

/// Row-wise softmax of a [B, C] tensor.
Tensor softmax(const Tensor& logits);

/// Row-wise argmax of a [B, C] tensor; ties go to the lower class.
std::vector<int> argmax_rows(const Tensor& logits);

/// params -= lr * grads, layer by layer. Throws naming the offending layer
/// when a gradient is non-finite or does not mirror the parameter shapes;
/// in that case no layer is modified.
void sgd_step(std::span<Layer> layers, std::span<const LayerGrads> grads,
              double lr);

std::size_t parameter_count(std::span<const Layer> layers);

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates checked per parameter tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 0;
  // Multiplies the analytic gradient before comparison. Only used to verify
  // that the checker itself detects a wrong gradient.
  double analytic_scale = 1.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose central difference straddles a ReLU or max-pool
  // switch even at eps / 1000; the loss is not differentiable there.
  std::size_t skipped = 0;
  // Coordinates with max(|a|, |n|) under the round-off floor, where the
  // error is measured against the floor instead of the gradient itself.
  std::size_t below_floor = 0;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Smallest gradient magnitude a central difference of step `eps` resolves
/// to 1e-4 relative precision: 1e4 * e * max(1, |loss|) / eps, where e is the
/// double-precision machine epsilon. Never below 1e-8.
double finite_difference_floor(double loss, double eps);

/// Compares backprop gradients of the mean cross-entropy loss against
/// central finite differences. The segment must end in logits.
GradCheckResult grad_check(std::span<const Layer> layers, const Tensor& batch,
                           std::span<const int> labels,
                           const GradCheckOptions& options = {});

}  // namespace sflpl
