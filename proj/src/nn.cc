#include "sflpl/nn.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sflpl {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstRowVectorMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowVectorMap = Eigen::Map<Eigen::RowVectorXd>;

double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void glorot_fill(Tensor& t, double fan_in, double fan_out,
                 std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.data()) v = (2.0 * uniform_unit(rng) - 1.0) * limit;
}

std::string layer_tag(std::size_t index, const Layer& layer) {
  return "layer " + std::to_string(index) + " (" + to_string(layer.kind) + ")";
}

// ---- Dense ---------------------------------------------------------------

Tensor dense_forward(const Layer& layer, const Tensor& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t in = layer.weights.dim(0);
  const std::size_t out = layer.weights.dim(1);
  Tensor y({batch, out});
  ConstMatrixMap xm(x.data().data(), batch, in);
  ConstMatrixMap w(layer.weights.data().data(), in, out);
  MatrixMap ym(y.data().data(), batch, out);
  ym.noalias() = xm * w;
  ym.rowwise() += ConstRowVectorMap(layer.biases.data().data(), out);
  return y;
}

void dense_backward(const Layer& layer, const Tensor& x, const Tensor& grad,
                    LayerGrads& param_grads, Tensor& input_grad) {
  const std::size_t batch = x.dim(0);
  const std::size_t in = layer.weights.dim(0);
  const std::size_t out = layer.weights.dim(1);
  ConstMatrixMap xm(x.data().data(), batch, in);
  ConstMatrixMap g(grad.data().data(), batch, out);
  ConstMatrixMap w(layer.weights.data().data(), in, out);

  param_grads.weights = Tensor(layer.weights.shape());
  param_grads.biases = Tensor(layer.biases.shape());
  MatrixMap(param_grads.weights.data().data(), in, out).noalias() =
      xm.transpose() * g;
  RowVectorMap(param_grads.biases.data().data(), out) = g.colwise().sum();

  input_grad = Tensor(x.shape());
  MatrixMap(input_grad.data().data(), batch, in).noalias() = g * w.transpose();
}

// ---- Conv1D --------------------------------------------------------------
//
// Lowered to a single GEMM: columns has shape [C*K, B*Lout] with
// columns(c*K + k, b*Lout + t) = x[b, c, t + k].

RowMatrix im2col(const Tensor& x, std::size_t kernel) {
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t length = x.dim(2);
  const std::size_t out_len = length - kernel + 1;
  RowMatrix cols(channels * kernel, batch * out_len);
  const double* src = x.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < kernel; ++k) {
      double* row = cols.row(c * kernel + k).data();
      for (std::size_t b = 0; b < batch; ++b) {
        const double* in = src + (b * channels + c) * length + k;
        std::copy_n(in, out_len, row + b * out_len);
      }
    }
  }
  return cols;
}

Tensor conv_forward(const Layer& layer, const Tensor& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t out_ch = layer.weights.dim(0);
  const std::size_t kernel = layer.weights.dim(2);
  const std::size_t out_len = x.dim(2) - kernel + 1;
  const std::size_t patch = layer.weights.dim(1) * kernel;

  const RowMatrix cols = im2col(x, kernel);
  ConstMatrixMap w(layer.weights.data().data(), out_ch, patch);
  RowMatrix prod(out_ch, batch * out_len);
  prod.noalias() = w * cols;

  Tensor y({batch, out_ch, out_len});
  double* dst = y.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double bias = layer.biases[o];
      const double* row = prod.row(o).data() + b * out_len;
      double* out = dst + (b * out_ch + o) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) out[t] = row[t] + bias;
    }
  }
  return y;
}

void conv_backward(const Layer& layer, const Tensor& x, const Tensor& grad,
                   LayerGrads& param_grads, Tensor& input_grad) {
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t length = x.dim(2);
  const std::size_t out_ch = layer.weights.dim(0);
  const std::size_t kernel = layer.weights.dim(2);
  const std::size_t out_len = length - kernel + 1;
  const std::size_t patch = channels * kernel;

  // grad [B, O, Lout] -> gmat [O, B*Lout]
  RowMatrix gmat(out_ch, batch * out_len);
  const double* gsrc = grad.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      std::copy_n(gsrc + (b * out_ch + o) * out_len, out_len,
                  gmat.row(o).data() + b * out_len);
    }
  }

  const RowMatrix cols = im2col(x, kernel);
  param_grads.weights = Tensor(layer.weights.shape());
  param_grads.biases = Tensor(layer.biases.shape());
  MatrixMap(param_grads.weights.data().data(), out_ch, patch).noalias() =
      gmat * cols.transpose();
  for (std::size_t o = 0; o < out_ch; ++o) {
    param_grads.biases[o] = gmat.row(o).sum();
  }

  ConstMatrixMap w(layer.weights.data().data(), out_ch, patch);
  RowMatrix dcols(patch, batch * out_len);
  dcols.noalias() = w.transpose() * gmat;

  input_grad = Tensor(x.shape());
  double* dst = input_grad.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < kernel; ++k) {
      const double* row = dcols.row(c * kernel + k).data();
      for (std::size_t b = 0; b < batch; ++b) {
        double* out = dst + (b * channels + c) * length + k;
        const double* in = row + b * out_len;
        for (std::size_t t = 0; t < out_len; ++t) out[t] += in[t];
      }
    }
  }
}

// ---- MaxPool1D -----------------------------------------------------------

Tensor pool_forward(const Tensor& x) {
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t length = x.dim(2);
  const std::size_t out_len = length / 2;
  Tensor y({x.dim(0), x.dim(1), out_len});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * length;
    double* out = y.data().data() + r * out_len;
    for (std::size_t t = 0; t < out_len; ++t) {
      out[t] = std::max(in[2 * t], in[2 * t + 1]);
    }
  }
  return y;
}

// Ties route to the first element of the window.
void pool_backward(const Tensor& x, const Tensor& grad, Tensor& input_grad) {
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t length = x.dim(2);
  const std::size_t out_len = length / 2;
  input_grad = Tensor(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * length;
    const double* g = grad.data().data() + r * out_len;
    double* out = input_grad.data().data() + r * length;
    for (std::size_t t = 0; t < out_len; ++t) {
      const std::size_t pick = in[2 * t + 1] > in[2 * t] ? 2 * t + 1 : 2 * t;
      out[pick] = g[t];
    }
  }
}

void validate_parameters(std::size_t index, const Layer& layer) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument(layer_tag(index, layer) + ": " + what);
  };
  switch (layer.kind) {
    case LayerKind::kDense:
      if (layer.weights.rank() != 2 || layer.biases.rank() != 1 ||
          layer.biases.dim(0) != layer.weights.dim(1)) {
        fail("weights must be [in, out] and biases [out], got " +
             shape_string(layer.weights.shape()) + " and " +
             shape_string(layer.biases.shape()));
      }
      break;
    case LayerKind::kConv1D:
      if (layer.weights.rank() != 3 || layer.biases.rank() != 1 ||
          layer.biases.dim(0) != layer.weights.dim(0)) {
        fail("weights must be [out, in, kernel] and biases [out], got " +
             shape_string(layer.weights.shape()) + " and " +
             shape_string(layer.biases.shape()));
      }
      break;
    case LayerKind::kMaxPool1D:
      if (!layer.weights.empty() || !layer.biases.empty()) {
        fail("max-pool layers carry no parameters");
      }
      if (layer.activation != Activation::kNone) {
        fail("max-pool layers take no activation");
      }
      break;
  }
}

void relu_inplace(Tensor& t) {
  for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
}

Tensor layer_forward(const Layer& layer, const Tensor& x) {
  switch (layer.kind) {
    case LayerKind::kDense:
      return dense_forward(layer, x);
    case LayerKind::kConv1D:
      return conv_forward(layer, x);
    case LayerKind::kMaxPool1D:
      return pool_forward(x);
  }
  throw std::logic_error("unknown layer kind");
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense:
      return "Dense";
    case LayerKind::kConv1D:
      return "Conv1D";
    case LayerKind::kMaxPool1D:
      return "MaxPool1D";
  }
  return "?";
}

Layer make_dense(std::size_t in_features, std::size_t out_features,
                 Activation activation, std::mt19937_64& rng) {
  if (in_features == 0 || out_features == 0) {
    throw std::invalid_argument("dense layer dimensions must be positive");
  }
  Layer layer{LayerKind::kDense, activation, Tensor({in_features, out_features}),
              Tensor({out_features})};
  glorot_fill(layer.weights, static_cast<double>(in_features),
              static_cast<double>(out_features), rng);
  return layer;
}

Layer make_conv1d(std::size_t in_channels, std::size_t out_channels,
                  std::size_t kernel, Activation activation,
                  std::mt19937_64& rng) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0) {
    throw std::invalid_argument("conv1d dimensions must be positive");
  }
  Layer layer{LayerKind::kConv1D, activation,
              Tensor({out_channels, in_channels, kernel}),
              Tensor({out_channels})};
  glorot_fill(layer.weights, static_cast<double>(in_channels * kernel),
              static_cast<double>(out_channels * kernel), rng);
  return layer;
}

Layer make_maxpool1d() { return Layer{LayerKind::kMaxPool1D, Activation::kNone, {}, {}}; }

Shape layer_output_shape(const Layer& layer, const Shape& input) {
  if (input.empty() || input[0] == 0) {
    throw std::invalid_argument("empty batch");
  }
  const std::size_t batch = input[0];
  switch (layer.kind) {
    case LayerKind::kDense: {
      const std::size_t per_sample =
          shape_volume(Shape(input.begin() + 1, input.end()));
      if (input.size() < 2 || per_sample != layer.weights.dim(0)) {
        throw std::invalid_argument(
            "Dense expects " + std::to_string(layer.weights.dim(0)) +
            " features per sample, got input " + shape_string(input));
      }
      return {batch, layer.weights.dim(1)};
    }
    case LayerKind::kConv1D: {
      if (input.size() != 3 || input[1] != layer.weights.dim(1) ||
          input[2] < layer.weights.dim(2)) {
        throw std::invalid_argument(
            "Conv1D expects [B, " + std::to_string(layer.weights.dim(1)) +
            ", L>=" + std::to_string(layer.weights.dim(2)) + "], got " +
            shape_string(input));
      }
      return {batch, layer.weights.dim(0), input[2] - layer.weights.dim(2) + 1};
    }
    case LayerKind::kMaxPool1D: {
      if (input.size() != 3 || input[2] < 2) {
        throw std::invalid_argument("MaxPool1D expects [B, C, L>=2], got " +
                                    shape_string(input));
      }
      return {batch, input[1], input[2] / 2};
    }
  }
  throw std::logic_error("unknown layer kind");
}

ForwardResult forward(std::span<const Layer> layers, const Tensor& batch) {
  ForwardResult result;
  Tensor current = batch;
  if (current.rank() == 0 || current.dim(0) == 0) {
    throw std::invalid_argument("forward: empty batch");
  }
  result.cache.inputs.reserve(layers.size());
  result.cache.pre_activations.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    validate_parameters(i, layer);
    try {
      layer_output_shape(layer, current.shape());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("forward: " + layer_tag(i, layer) + ": " +
                                  e.what());
    }
    Tensor out = layer_forward(layer, current);
    result.cache.inputs.push_back(std::move(current));
    if (layer.activation == Activation::kReLU) {
      result.cache.pre_activations.push_back(out);
      relu_inplace(out);
    } else {
      result.cache.pre_activations.emplace_back();
    }
    current = std::move(out);
  }
  result.cache.output_shape = current.shape();
  result.output = std::move(current);
  return result;
}

Tensor infer(std::span<const Layer> layers, const Tensor& batch) {
  if (batch.rank() == 0 || batch.dim(0) == 0) {
    throw std::invalid_argument("infer: empty batch");
  }
  Tensor current = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    validate_parameters(i, layers[i]);
    try {
      layer_output_shape(layers[i], current.shape());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("infer: " + layer_tag(i, layers[i]) + ": " +
                                  e.what());
    }
    current = layer_forward(layers[i], current);
    if (layers[i].activation == Activation::kReLU) relu_inplace(current);
  }
  return current;
}

BackwardResult backward(std::span<const Layer> layers,
                        const ForwardCache& cache,
                        const Tensor& upstream_grad) {
  if (cache.inputs.size() != layers.size() ||
      cache.pre_activations.size() != layers.size()) {
    throw std::invalid_argument(
        "backward: cache holds " + std::to_string(cache.inputs.size()) +
        " layers but segment has " + std::to_string(layers.size()));
  }
  // Re-derive every shape from the cached inputs; a cache recorded for a
  // different segment fails here.
  for (std::size_t i = 0; i < layers.size(); ++i) {
    validate_parameters(i, layers[i]);
    Shape expected;
    try {
      expected = layer_output_shape(layers[i], cache.inputs[i].shape());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("backward: cache does not match " +
                                  layer_tag(i, layers[i]) + ": " + e.what());
    }
    const Shape& next = i + 1 < layers.size() ? cache.inputs[i + 1].shape()
                                              : cache.output_shape;
    const bool relu = layers[i].activation == Activation::kReLU;
    if (expected != next ||
        (relu && cache.pre_activations[i].shape() != expected) ||
        (!relu && !cache.pre_activations[i].empty())) {
      throw std::invalid_argument("backward: cache does not match " +
                                  layer_tag(i, layers[i]));
    }
  }
  if (upstream_grad.shape() != cache.output_shape) {
    throw std::invalid_argument(
        "backward: upstream gradient shape " +
        shape_string(upstream_grad.shape()) + " != forward output shape " +
        shape_string(cache.output_shape));
  }

  BackwardResult result;
  result.param_grads.resize(layers.size());
  Tensor grad = upstream_grad;
  for (std::size_t n = layers.size(); n-- > 0;) {
    const Layer& layer = layers[n];
    if (layer.activation == Activation::kReLU) {
      const auto pre = cache.pre_activations[n].data();
      auto g = grad.data();
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (!(pre[j] > 0.0)) g[j] = 0.0;
      }
    }
    Tensor input_grad;
    switch (layer.kind) {
      case LayerKind::kDense:
        dense_backward(layer, cache.inputs[n], grad, result.param_grads[n],
                       input_grad);
        break;
      case LayerKind::kConv1D:
        conv_backward(layer, cache.inputs[n], grad, result.param_grads[n],
                      input_grad);
        break;
      case LayerKind::kMaxPool1D:
        pool_backward(cache.inputs[n], grad, input_grad);
        break;
    }
    grad = std::move(input_grad);
  }
  result.input_grad = std::move(grad);
  return result;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("softmax expects [B, C], got " +
                                shape_string(logits.shape()));
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  Tensor probs(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = logits.data().data() + b * classes;
    double* p = probs.data().data() + b * classes;
    const double peak = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(z[c] - peak);
      total += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= total;
  }
  return probs;
}

LossResult softmax_cross_entropy(const Tensor& logits,
                                 std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) == 0) {
    throw std::invalid_argument("cross-entropy expects non-empty [B, C], got " +
                                shape_string(logits.shape()));
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) {
    throw std::invalid_argument("cross-entropy: " +
                                std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(batch));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw std::invalid_argument(
          "cross-entropy: label " + std::to_string(labels[b]) + " at index " +
          std::to_string(b) + " outside [0, " + std::to_string(classes) + ")");
    }
  }

  LossResult result;
  result.grad_logits = Tensor(logits.shape());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = logits.data().data() + b * classes;
    double* g = result.grad_logits.data().data() + b * classes;
    const double peak = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - peak);
      sum += g[c];
    }
    const std::size_t y = static_cast<std::size_t>(labels[b]);
    total += std::log(sum) - (z[y] - peak);
    for (std::size_t c = 0; c < classes; ++c) g[c] = g[c] / sum * inv_batch;
    g[y] -= inv_batch;
  }
  result.loss = total * inv_batch;
  return result;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("argmax expects [B, C], got " +
                                shape_string(logits.shape()));
  }
  const std::size_t classes = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b) {
    const double* z = logits.data().data() + b * classes;
    out[b] = static_cast<int>(std::max_element(z, z + classes) - z);
  }
  return out;
}

void sgd_step(std::span<Layer> layers, std::span<const LayerGrads> grads,
              double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument("sgd_step: learning rate must be finite and >= 0");
  }
  if (grads.size() != layers.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) +
                                " gradient sets for " +
                                std::to_string(layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    if (!layer.learnable()) continue;
    if (grads[i].weights.shape() != layer.weights.shape() ||
        grads[i].biases.shape() != layer.biases.shape()) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch at " +
                                  layer_tag(i, layer));
    }
    if (!grads[i].weights.all_finite() || !grads[i].biases.all_finite()) {
      throw std::domain_error("sgd_step: non-finite gradient at " +
                              layer_tag(i, layer));
    }
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].learnable()) continue;
    auto w = layers[i].weights.data();
    auto gw = grads[i].weights.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * gw[j];
    auto b = layers[i].biases.data();
    auto gb = grads[i].biases.data();
    for (std::size_t j = 0; j < b.size(); ++j) b[j] -= lr * gb[j];
  }
}

std::size_t parameter_count(std::span<const Layer> layers) {
  std::size_t total = 0;
  for (const Layer& layer : layers) total += layer.parameter_count();
  return total;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double finite_difference_floor(double loss, double eps) {
  // Round-off term of a central difference: machine epsilon * |f| / h.
  const double noise = std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / eps;
  return std::max(1e-8, 1e4 * noise);
}

namespace {

// Which side of every ReLU and max-pool switch the forward pass landed on.
std::vector<bool> activation_pattern(std::span<const Layer> layers,
                                     const ForwardCache& cache) {
  std::vector<bool> bits;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].activation == Activation::kReLU) {
      for (double v : cache.pre_activations[i].data()) bits.push_back(v > 0.0);
    }
    if (layers[i].kind == LayerKind::kMaxPool1D) {
      const Tensor& x = cache.inputs[i];
      const std::size_t rows = x.dim(0) * x.dim(1);
      const std::size_t length = x.dim(2);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * length;
        for (std::size_t t = 0; t + 1 < length; t += 2) {
          bits.push_back(in[t + 1] > in[t]);
        }
      }
    }
  }
  return bits;
}

struct Probe {
  double loss;
  std::vector<bool> pattern;
};

Probe probe(std::span<const Layer> layers, const Tensor& batch,
            std::span<const int> labels) {
  ForwardResult fwd = forward(layers, batch);
  return {softmax_cross_entropy(fwd.output, labels).loss,
          activation_pattern(layers, fwd.cache)};
}

std::vector<std::size_t> pick_coordinates(std::size_t count, std::size_t limit,
                                          std::mt19937_64& rng) {
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (limit == 0 || limit >= count) return all;
  // Partial Fisher-Yates with an explicit index draw keeps the choice
  // independent of the standard library's distribution implementations.
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (count - i));
    std::swap(all[i], all[j]);
  }
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckResult grad_check(std::span<const Layer> layers, const Tensor& batch,
                           std::span<const int> labels,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) {
    throw std::invalid_argument("grad_check: eps must be positive");
  }
  std::vector<Layer> work(layers.begin(), layers.end());
  ForwardResult fwd = forward(work, batch);
  const LossResult loss = softmax_cross_entropy(fwd.output, labels);
  const BackwardResult analytic = backward(work, fwd.cache, loss.grad_logits);
  const std::vector<bool> base_pattern = activation_pattern(work, fwd.cache);

  GradCheckResult result;
  std::mt19937_64 rng(options.sample_seed);
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (!work[i].learnable()) continue;
    for (int which = 0; which < 2; ++which) {
      Tensor& param = which == 0 ? work[i].weights : work[i].biases;
      const Tensor& grad = which == 0 ? analytic.param_grads[i].weights
                                      : analytic.param_grads[i].biases;
      for (std::size_t j :
           pick_coordinates(param.size(), options.max_coords_per_tensor, rng)) {
        const double saved = param[j];
        bool smooth = false;
        double numeric = 0.0;
        double used_eps = options.eps;
        for (double eps = options.eps; eps >= options.eps * 1e-3; eps /= 10.0) {
          param[j] = saved + eps;
          const Probe plus = probe(work, batch, labels);
          param[j] = saved - eps;
          const Probe minus = probe(work, batch, labels);
          param[j] = saved;
          if (plus.pattern == base_pattern && minus.pattern == base_pattern) {
            numeric = (plus.loss - minus.loss) / (2.0 * eps);
            used_eps = eps;
            smooth = true;
            break;
          }
        }
        if (!smooth) {
          ++result.skipped;
          continue;
        }
        ++result.checked;
        const double analytic_j = grad[j] * options.analytic_scale;
        const double floor = finite_difference_floor(loss.loss, used_eps);
        if (std::max(std::abs(analytic_j), std::abs(numeric)) < floor) ++result.below_floor;
        result.max_relative_error = std::max(result.max_relative_error,
                                             relative_error(analytic_j, numeric, floor));
      }
    }
  }
  return result;
}

}  // namespace sflpl
