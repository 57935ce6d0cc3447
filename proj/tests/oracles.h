// Reference implementations used only as test oracles. Plain loops, no
// Eigen, written against the layer definitions rather than the library code.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sflpl/nn.h"
#include "sflpl/protocol.h"

namespace sflpl::oracle {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, int classes,
                                      std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, classes - 1);
  std::vector<int> out(n);
  for (int& y : out) y = dist(rng);
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

// x [B, in...] flattened, W [in, out], b [out].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0);
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[n * in + i] * w[i * out + o];
      y[n * out + o] = acc;
    }
  }
  return y;
}

// x [B, C, L], W [O, C, K] -> [B, O, L-K+1].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0);
  const std::size_t ch = x.dim(1);
  const std::size_t len = x.dim(2);
  const std::size_t out_ch = w.dim(0);
  const std::size_t k = w.dim(2);
  const std::size_t out_len = len - k + 1;
  Tensor y({batch, out_ch, out_len});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = b[o];
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t j = 0; j < k; ++j)
            acc += w[(o * ch + c) * k + j] * x[(n * ch + c) * len + t + j];
        y[(n * out_ch + o) * out_len + t] = acc;
      }
  return y;
}

inline Tensor maxpool2(const Tensor& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t ch = x.dim(1);
  const std::size_t len = x.dim(2);
  const std::size_t out_len = len / 2;
  Tensor y({batch, ch, out_len});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < out_len; ++t) {
        const double a = x[(n * ch + c) * len + 2 * t];
        const double b = x[(n * ch + c) * len + 2 * t + 1];
        y[(n * ch + c) * out_len + t] = std::max(a, b);
      }
  return y;
}

// Gradients of a single conv layer (no activation) for upstream g.
struct ConvGrads {
  Tensor dw;
  Tensor db;
  Tensor dx;
};

inline ConvGrads conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& g) {
  const std::size_t batch = x.dim(0);
  const std::size_t ch = x.dim(1);
  const std::size_t len = x.dim(2);
  const std::size_t out_ch = w.dim(0);
  const std::size_t k = w.dim(2);
  const std::size_t out_len = len - k + 1;
  ConvGrads r{Tensor(w.shape()), Tensor({out_ch}), Tensor(x.shape())};
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t t = 0; t < out_len; ++t) {
        const double up = g[(n * out_ch + o) * out_len + t];
        r.db[o] += up;
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t j = 0; j < k; ++j) {
            r.dw[(o * ch + c) * k + j] += up * x[(n * ch + c) * len + t + j];
            r.dx[(n * ch + c) * len + t + j] += up * w[(o * ch + c) * k + j];
          }
      }
  return r;
}

inline Tensor naive_forward(std::span<const Layer> layers, Tensor x) {
  for (const Layer& l : layers) {
    switch (l.kind) {
      case LayerKind::kDense:
        x = dense(x, l.weights, l.biases);
        break;
      case LayerKind::kConv1D:
        x = conv1d(x, l.weights, l.biases);
        break;
      case LayerKind::kMaxPool1D:
        x = maxpool2(x);
        break;
    }
    if (l.activation == Activation::kReLU) x = relu(x);
  }
  return x;
}

// Mean cross-entropy through log-sum-exp.
inline double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    double m = logits[n * classes];
    for (std::size_t c = 1; c < classes; ++c) m = std::max(m, logits[n * classes + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(logits[n * classes + c] - m);
    total += m + std::log(s) - logits[n * classes + labels[n]];
  }
  return total / static_cast<double>(batch);
}

inline Shape batch_shape_for(std::size_t rows, const Shape& sample_shape) {
  Shape s{rows};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return s;
}

// Unsplit, single-process SGD over one dataset with the same visiting order
// the protocol uses for client 0.
inline std::vector<Layer> centralized_train(std::vector<Layer> layers,
                                            const Dataset& data,
                                            const Shape& sample_shape,
                                            std::size_t epochs,
                                            std::size_t batch_size, double lr,
                                            std::uint64_t seed) {
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = epoch_order(data.size(), seed, 0, e);
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Tensor x =
          data.inputs.gather(rows).reshaped(batch_shape_for(rows.size(), sample_shape));
      std::vector<int> y;
      for (std::size_t r : rows) y.push_back(data.labels[r]);
      ForwardResult fwd = forward(layers, x);
      LossResult loss = softmax_cross_entropy(fwd.output, y);
      BackwardResult grads = backward(layers, fwd.cache, loss.grad_logits);
      sgd_step(layers, grads.param_grads, lr);
    }
  }
  return layers;
}

inline bool layers_bitwise_equal(std::span<const Layer> a, std::span<const Layer> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].weights.bitwise_equal(b[i].weights)) return false;
    if (!a[i].biases.bitwise_equal(b[i].biases)) return false;
  }
  return true;
}

}  // namespace sflpl::oracle
