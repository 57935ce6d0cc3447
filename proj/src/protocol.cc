#include "sflpl/protocol.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>

namespace sflpl {
namespace {

std::string client_tag(int id) { return "client " + std::to_string(id); }

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first failure
// by index is rethrown after every worker has joined.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    const std::size_t count = std::min(workers, n);
    std::vector<std::thread> threads;
    threads.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
      threads.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += count) run(i);
      });
    }
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_same_structure(const std::vector<Layer>& a,
                          const std::vector<Layer>& b, std::size_t set_index) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("fedavg: parameter set " +
                                std::to_string(set_index) + " has " +
                                std::to_string(b.size()) + " layers, expected " +
                                std::to_string(a.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].kind != b[i].kind || a[i].weights.shape() != b[i].weights.shape() ||
        a[i].biases.shape() != b[i].biases.shape()) {
      throw std::invalid_argument("fedavg: parameter set " +
                                  std::to_string(set_index) +
                                  " differs in shape at layer " +
                                  std::to_string(i));
    }
  }
}

// out = first + sum_k w_k (set_k - first). Identical inputs reproduce
// `first` exactly and a single set is returned unchanged.
void accumulate(Tensor& out, std::span<const std::vector<Layer>> sets,
                std::span<const double> weights, std::size_t layer,
                bool weights_tensor) {
  auto dst = out.data();
  const auto base = weights_tensor ? sets[0][layer].weights.data()
                                   : sets[0][layer].biases.data();
  for (std::size_t k = 1; k < sets.size(); ++k) {
    const auto src = weights_tensor ? sets[k][layer].weights.data()
                                    : sets[k][layer].biases.data();
    const double w = weights[k];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * (src[j] - base[j]);
  }
}

std::vector<std::vector<Layer>> collect_client_layers(const SflState& state) {
  std::vector<std::vector<Layer>> sets;
  sets.reserve(state.clients.size());
  for (const auto& c : state.clients) sets.push_back(c.segment.layers);
  return sets;
}

std::vector<std::vector<Layer>> collect_server_layers(const ServerState& server) {
  std::vector<std::vector<Layer>> sets;
  sets.reserve(server.working.size());
  for (const auto& s : server.working) sets.push_back(s.layers);
  return sets;
}

void aggregate(SflState& state) {
  const auto client_avg = fedavg(collect_client_layers(state));
  for (auto& c : state.clients) c.segment.layers = client_avg;
  state.server.global.layers = fedavg(collect_server_layers(state.server));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

std::vector<std::size_t> epoch_order(std::size_t shard_size, std::uint64_t seed,
                                     int client_id, std::size_t epoch) {
  return seeded_permutation(
      shard_size, derive_seed(seed, 0x5348554646ULL,
                              static_cast<std::uint64_t>(client_id), epoch));
}

std::vector<LocalBatch> make_local_batches(const ClientState& client,
                                           const Shape& sample_shape,
                                           std::size_t batch_size,
                                           std::uint64_t seed,
                                           std::size_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!client.shard) {
    throw std::invalid_argument(client_tag(client.client_id) + " has no shard");
  }
  const Dataset& shard = *client.shard;
  const auto order = epoch_order(shard.size(), seed, client.client_id, epoch);
  const bool poison = client.is_malicious && client.attack.kind != AttackKind::kNone;
  const int classes = shard.num_classes;

  std::vector<int> shard_labels;
  const bool whole_shard = poison &&
                           client.attack.kind == AttackKind::kDistanceBased &&
                           client.attack.distance_scope == DistanceScope::kShard;
  if (whole_shard) {
    shard_labels = flip_distance_based(shard.inputs, shard.labels,
                                       client.attack.source_label, classes);
  }
  std::mt19937_64 attack_rng(
      derive_seed(client.attack.seed, 0x41545441434bULL,
                  static_cast<std::uint64_t>(client.client_id), epoch));

  std::vector<LocalBatch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    const std::span<const std::size_t> rows(order.data() + begin, end - begin);
    LocalBatch batch;
    batch.owner = client.client_id;
    batch.inputs = shard.inputs.gather(rows);
    batch.labels.reserve(rows.size());
    for (std::size_t r : rows) {
      batch.labels.push_back(whole_shard ? shard_labels[r] : shard.labels[r]);
    }
    if (poison && !whole_shard) {
      batch.labels = apply_attack(client.attack, batch.inputs, batch.labels,
                                  classes, attack_rng);
    }
    Shape shape{rows.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    batch.inputs = batch.inputs.reshaped(std::move(shape));
    batches.push_back(std::move(batch));
  }
  return batches;
}

SmashedBatch client_local_pass(ClientState& client, const LocalBatch& batch) {
  if (batch.owner != client.client_id) {
    throw std::invalid_argument(client_tag(client.client_id) +
                                " was handed a batch from " +
                                client_tag(batch.owner) + "'s shard");
  }
  if (batch.inputs.rank() == 0 || batch.inputs.dim(0) != batch.labels.size()) {
    throw std::invalid_argument(client_tag(client.client_id) +
                                ": batch inputs and labels disagree in size");
  }
  ForwardResult fwd = forward(client.segment.layers, batch.inputs);
  client.pending = std::move(fwd.cache);
  return SmashedBatch{client.client_id, std::move(fwd.output), batch.labels};
}

ServerStepResult server_step(ServerState& server, const SmashedBatch& smashed,
                             double lr) {
  if (smashed.client_id < 0 ||
      static_cast<std::size_t>(smashed.client_id) >= server.working.size()) {
    throw std::invalid_argument("server_step: no working copy for " +
                                client_tag(smashed.client_id));
  }
  if (smashed.activations.rank() == 0 ||
      smashed.activations.dim(0) != smashed.labels.size()) {
    throw std::invalid_argument("server_step: activations " +
                                shape_string(smashed.activations.shape()) +
                                " with " + std::to_string(smashed.labels.size()) +
                                " labels");
  }
  for (int y : smashed.labels) {
    if (y < 0 || y >= server.num_classes) {
      throw std::invalid_argument("server_step: label " + std::to_string(y) +
                                  " from " + client_tag(smashed.client_id) +
                                  " outside [0, " +
                                  std::to_string(server.num_classes) + ")");
    }
  }
  ModelSegment& segment = server.working[smashed.client_id];
  ForwardResult fwd = forward(segment.layers, smashed.activations);
  LossResult loss = softmax_cross_entropy(fwd.output, smashed.labels);
  BackwardResult grads = backward(segment.layers, fwd.cache, loss.grad_logits);
  sgd_step(segment.layers, grads.param_grads, lr);
  return ServerStepResult{std::move(grads.input_grad), loss.loss};
}

void client_backward(ClientState& client, const Tensor& cut_gradient, double lr) {
  if (!client.pending) {
    throw std::logic_error(client_tag(client.client_id) +
                           ": backward without a pending forward pass");
  }
  if (cut_gradient.shape() != client.pending->output_shape) {
    throw std::invalid_argument(
        client_tag(client.client_id) + ": cut gradient " +
        shape_string(cut_gradient.shape()) + " does not match activations " +
        shape_string(client.pending->output_shape));
  }
  BackwardResult grads =
      backward(client.segment.layers, *client.pending, cut_gradient);
  sgd_step(client.segment.layers, grads.param_grads, lr);
  client.pending.reset();
}

std::vector<Layer> fedavg(std::span<const std::vector<Layer>> param_sets,
                          std::span<const double> weights) {
  if (param_sets.empty()) throw std::invalid_argument("fedavg: no parameter sets");
  if (weights.size() != param_sets.size()) {
    throw std::invalid_argument("fedavg: " + std::to_string(weights.size()) +
                                " weights for " +
                                std::to_string(param_sets.size()) + " sets");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("fedavg: weights must be finite and >= 0");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("fedavg: weights sum to " + std::to_string(total));
  }
  for (std::size_t k = 1; k < param_sets.size(); ++k) {
    check_same_structure(param_sets[0], param_sets[k], k);
  }
  std::vector<Layer> out = param_sets[0];
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out[i].learnable()) continue;
    accumulate(out[i].weights, param_sets, weights, i, true);
    accumulate(out[i].biases, param_sets, weights, i, false);
  }
  return out;
}

std::vector<Layer> fedavg(std::span<const std::vector<Layer>> param_sets) {
  const std::vector<double> weights(
      param_sets.size(), param_sets.empty() ? 0.0 : 1.0 / param_sets.size());
  return fedavg(param_sets, weights);
}

SflState run_global_epoch(SflState state, std::size_t epoch,
                          const EpochOptions& options, EpochStats* stats) {
  const std::size_t k = state.clients.size();
  if (k == 0) throw std::invalid_argument("run_global_epoch: no clients");
  for (std::size_t i = 0; i < k; ++i) {
    if (state.clients[i].client_id != static_cast<int>(i)) {
      throw std::invalid_argument("run_global_epoch: clients must be ordered by id");
    }
  }

  std::vector<std::vector<LocalBatch>> batches(k);
  parallel_for(k, options.workers, [&](std::size_t i) {
    batches[i] = make_local_batches(state.clients[i], state.sample_shape,
                                    options.batch_size, options.seed, epoch);
  });
  std::size_t rounds = 0;
  for (const auto& b : batches) rounds = std::max(rounds, b.size());

  state.server.working.assign(k, state.server.global);
  std::vector<double> loss_sum(k, 0.0);
  std::vector<std::size_t> steps(k, 0);

  for (std::size_t j = 0; j < rounds; ++j) {
    parallel_for(k, options.workers, [&](std::size_t i) {
      if (j >= batches[i].size()) return;
      ClientState& client = state.clients[i];
      const SmashedBatch smashed = client_local_pass(client, batches[i][j]);
      const ServerStepResult step = server_step(state.server, smashed, options.lr);
      client_backward(client, step.cut_gradient, options.lr);
      loss_sum[i] += step.loss;
      ++steps[i];
    });
    if (options.schedule == AggregationSchedule::kPerBatch) {
      aggregate(state);
      state.server.working.assign(k, state.server.global);
    }
  }
  aggregate(state);
  state.server.working.clear();

  if (stats) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < k; ++i) {
      total += loss_sum[i];
      count += steps[i];
    }
    stats->steps = count;
    stats->mean_loss = count ? total / static_cast<double>(count) : 0.0;
  }
  return state;
}

std::vector<Layer> global_model(const SflState& state) {
  if (state.clients.empty()) throw std::invalid_argument("global_model: no clients");
  std::vector<Layer> layers = state.clients.front().segment.layers;
  layers.insert(layers.end(), state.server.global.layers.begin(),
                state.server.global.layers.end());
  return layers;
}

ConfusionMatrix evaluate(std::span<const Layer> layers, const Dataset& data,
                         const Shape& sample_shape, std::size_t chunk) {
  ConfusionMatrix cm(static_cast<std::size_t>(data.num_classes));
  if (chunk == 0) chunk = 1;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    Shape shape{end - begin};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    const Tensor x = data.inputs.slice_batch(begin, end).reshaped(shape);
    const std::vector<int> preds = argmax_rows(infer(layers, x));
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const int actual = data.labels[begin + i];
      if (preds[i] >= data.num_classes) {
        throw std::invalid_argument("evaluate: model emits more classes than " +
                                    data.name + " has");
      }
      cm.add(static_cast<std::size_t>(actual), static_cast<std::size_t>(preds[i]));
    }
  }
  return cm;
}

SflState make_initial_state(const TrainingSetup& setup) {
  const SplitModel split = split_at(setup.model, setup.cut_index);
  SflState state;
  state.sample_shape = setup.model.sample_shape;
  state.server.global = split.server;
  state.server.num_classes = static_cast<int>(setup.model.num_classes);
  for (std::size_t i = 0; i < setup.shards.size(); ++i) {
    ClientState client;
    client.client_id = static_cast<int>(i);
    client.segment = split.client;
    client.shard = std::make_shared<const Dataset>(setup.shards[i].train);
    if (i < setup.attacks.size() && setup.attacks[i].kind != AttackKind::kNone) {
      client.is_malicious = true;
      client.attack = setup.attacks[i];
    }
    state.clients.push_back(std::move(client));
  }
  return state;
}

namespace {

void validate_setup(const TrainingSetup& setup) {
  const std::size_t input = setup.model.input_size();
  const int classes = static_cast<int>(setup.model.num_classes);
  auto check = [&](const Dataset& d, const std::string& what) {
    if (d.size() == 0) return;
    d.validate();
    if (d.features() != input) {
      throw std::invalid_argument(what + " has " + std::to_string(d.features()) +
                                  " features but " + setup.model.name +
                                  " expects " + std::to_string(input));
    }
    if (d.num_classes != classes) {
      throw std::invalid_argument(what + " has " + std::to_string(d.num_classes) +
                                  " classes but " + setup.model.name +
                                  " emits " + std::to_string(classes));
    }
  };
  if (setup.shards.empty()) throw std::invalid_argument("no client shards");
  for (std::size_t i = 0; i < setup.shards.size(); ++i) {
    if (setup.shards[i].train.size() == 0) {
      throw std::invalid_argument(client_tag(static_cast<int>(i)) +
                                  " has an empty training shard");
    }
    check(setup.shards[i].train, client_tag(static_cast<int>(i)) + " shard");
    check(setup.shards[i].holdout, client_tag(static_cast<int>(i)) + " holdout");
  }
  if (setup.test.size() == 0) throw std::invalid_argument("empty test set");
  check(setup.test, "test set");
  if (setup.attacks.size() > setup.shards.size()) {
    throw std::invalid_argument("more attack configs than clients");
  }
  for (const auto& a : setup.attacks) validate_attack(a, classes);
  if (setup.epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (setup.epoch_options.batch_size == 0) {
    throw std::invalid_argument("batch size must be positive");
  }
  if (!(setup.epoch_options.lr >= 0.0) || !std::isfinite(setup.epoch_options.lr)) {
    throw std::invalid_argument("learning rate must be finite and >= 0");
  }
  split_at(setup.model, setup.cut_index);  // throws on a bad cut
}

}  // namespace

TrainingResult run_training(const TrainingSetup& setup,
                            const EpochCallback& on_epoch) {
  validate_setup(setup);
  SflState state = make_initial_state(setup);

  TrainingResult result;
  for (std::size_t epoch = 0; epoch < setup.epochs; ++epoch) {
    EpochStats stats;
    state = run_global_epoch(std::move(state), epoch, setup.epoch_options, &stats);
    const std::vector<Layer> model = global_model(state);
    MetricsReport report =
        make_report(epoch + 1, evaluate(model, setup.test, state.sample_shape));
    report.train_loss = stats.mean_loss;

    ConfusionMatrix validation(setup.model.num_classes);
    for (const Shard& shard : setup.shards) {
      if (shard.holdout.size() == 0) continue;
      const ConfusionMatrix cm = evaluate(model, shard.holdout, state.sample_shape);
      for (std::size_t a = 0; a < cm.classes(); ++a)
        for (std::size_t p = 0; p < cm.classes(); ++p) validation.add(a, p, cm.at(a, p));
    }
    report.validation_accuracy = validation.total() ? accuracy(validation) : 0.0;

    if (on_epoch) on_epoch(report);
    result.history.push_back(std::move(report));
  }
  result.model = global_model(state);
  return result;
}

}  // namespace sflpl
