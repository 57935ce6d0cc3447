#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.h"
#include "sflpl/protocol.h"

namespace sflpl {
namespace {

const std::vector<std::size_t> kDeskWidths = {128, 128, 64, 64, 32, 32, 32, 16, 16};

bool is_mnist(ModelVersion v) {
  return v == ModelVersion::kMnistV1 || v == ModelVersion::kMnistV2;
}

ModelSpec model_for(ModelVersion v, std::uint64_t seed) {
  return is_mnist(v) ? build_mnist_model(seed, kDeskWidths) : build_model(v, seed);
}

// Enough rows for every shard plus a test remainder of at least 200.
Dataset data_for(ModelVersion v, std::size_t rows, std::uint64_t seed) {
  const std::size_t classes = is_mnist(v) ? 10 : 5;
  const std::size_t per_class = (rows + 200) / classes + 1;
  return is_mnist(v) ? synth_digits(per_class, seed) : synth_dataset(5, 124, per_class, seed);
}

TrainingSetup make_setup(ModelVersion v, std::size_t clients, std::size_t per_client,
                         std::uint64_t seed) {
  const Dataset data = data_for(v, clients * per_client, seed);
  const Partition p = partition(data, clients, per_client, 0, seed + 1);
  TrainingSetup setup;
  setup.model = model_for(v, seed + 2);
  setup.cut_index = split_point(v).cut_index;
  setup.shards = p.shards;
  setup.test = p.remainder;
  setup.attacks.assign(clients, AttackConfig{});
  setup.epochs = 2;
  setup.epoch_options.lr = 0.05;
  setup.epoch_options.batch_size = 8;
  setup.epoch_options.seed = seed + 3;
  return setup;
}

TEST(Protocol, CutActivationShapeForMnistV1) {
  const TrainingSetup setup = make_setup(ModelVersion::kMnistV1, 2, 20, 1);
  TrainingSetup full = setup;
  full.model = build_mnist_model(3);
  SflState state = make_initial_state(full);
  const auto batches = make_local_batches(state.clients[0], state.sample_shape, 6, 1, 0);
  const SmashedBatch s = client_local_pass(state.clients[0], batches[0]);
  // Client holds 784->512->256, so the cut carries the second layer's 256 units.
  EXPECT_EQ(s.activations.shape(), (Shape{6, 256}));
  EXPECT_EQ(s.labels.size(), 6u);
  EXPECT_EQ(s.client_id, 0);
  // Equals the unsplit model's second-layer output.
  const std::vector<Layer> first_two(full.model.layers.begin(), full.model.layers.begin() + 2);
  EXPECT_TRUE(s.activations.bitwise_equal(forward(first_two, batches[0].inputs).output));
}

TEST(Protocol, BatchesKeepShortTailAndCoverShard) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 1, 30, 2);
  const SflState state = make_initial_state(setup);
  const auto batches = make_local_batches(state.clients[0], state.sample_shape, 8, 5, 0);
  ASSERT_EQ(batches.size(), 4u);
  EXPECT_EQ(batches.back().labels.size(), 6u);
  EXPECT_EQ(batches[0].inputs.shape(), (Shape{8, 1, 124}));
  std::size_t total = 0;
  for (const auto& b : batches) total += b.labels.size();
  EXPECT_EQ(total, 30u);
}

TEST(Protocol, ForeignShardBatchIsRejected) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 2, 16, 3);
  SflState state = make_initial_state(setup);
  const auto batches = make_local_batches(state.clients[1], state.sample_shape, 8, 1, 0);
  EXPECT_THROW(client_local_pass(state.clients[0], batches[0]), std::invalid_argument);
}

TEST(Protocol, MaliciousFixedClientEmitsFloodLabel) {
  TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 2, 16, 4);
  setup.attacks[0].kind = AttackKind::kUntargetedFixed;
  setup.attacks[0].flood_label = 3;
  SflState state = make_initial_state(setup);
  EXPECT_TRUE(state.clients[0].is_malicious);
  EXPECT_FALSE(state.clients[1].is_malicious);
  for (const auto& b : make_local_batches(state.clients[0], state.sample_shape, 8, 1, 0)) {
    const SmashedBatch s = client_local_pass(state.clients[0], b);
    for (int y : s.labels) EXPECT_EQ(y, 3);
  }
}

TEST(Protocol, ServerStepWithZeroLearningRate) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV2, 1, 16, 5);
  SflState state = make_initial_state(setup);
  state.server.working.assign(1, state.server.global);
  const auto batches = make_local_batches(state.clients[0], state.sample_shape, 8, 1, 0);
  const SmashedBatch s = client_local_pass(state.clients[0], batches[0]);
  const ServerStepResult r = server_step(state.server, s, 0.0);
  EXPECT_TRUE(oracle::layers_bitwise_equal(state.server.working[0].layers,
                                           state.server.global.layers));
  EXPECT_EQ(r.cut_gradient.shape(), s.activations.shape());
  double norm = 0.0;
  for (double g : r.cut_gradient.data()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Protocol, ServerRejectsOutOfRangeLabels) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 1, 16, 6);
  SflState state = make_initial_state(setup);
  state.server.working.assign(1, state.server.global);
  auto batches = make_local_batches(state.clients[0], state.sample_shape, 8, 1, 0);
  SmashedBatch s = client_local_pass(state.clients[0], batches[0]);
  s.labels[0] = 5;
  EXPECT_THROW(server_step(state.server, s, 0.1), std::invalid_argument);
  s.labels[0] = -1;
  EXPECT_THROW(server_step(state.server, s, 0.1), std::invalid_argument);
  s.labels[0] = 0;
  s.client_id = 4;
  EXPECT_THROW(server_step(state.server, s, 0.1), std::invalid_argument);
}

TEST(Protocol, CutGradientMatchesUnsplitBackprop) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 1, 16, 7);
  SflState state = make_initial_state(setup);
  state.server.working.assign(1, state.server.global);
  const auto batches = make_local_batches(state.clients[0], state.sample_shape, 8, 1, 0);
  const SmashedBatch s = client_local_pass(state.clients[0], batches[0]);
  const ServerStepResult r = server_step(state.server, s, 0.1);

  const std::vector<Layer>& full = setup.model.layers;
  const ForwardResult fwd = forward(full, batches[0].inputs);
  const LossResult loss = softmax_cross_entropy(fwd.output, batches[0].labels);
  const std::size_t client_layers = state.clients[0].segment.layers.size();
  const std::vector<Layer> server_part(full.begin() + static_cast<long>(client_layers), full.end());
  ForwardCache tail;
  tail.inputs.assign(fwd.cache.inputs.begin() + static_cast<long>(client_layers), fwd.cache.inputs.end());
  tail.pre_activations.assign(fwd.cache.pre_activations.begin() + static_cast<long>(client_layers),
                              fwd.cache.pre_activations.end());
  tail.output_shape = fwd.cache.output_shape;
  const BackwardResult b = backward(server_part, tail, loss.grad_logits);
  EXPECT_TRUE(r.cut_gradient.bitwise_equal(b.input_grad));
  EXPECT_EQ(r.loss, loss.loss);
}

TEST(Protocol, ClientBackwardEdgeCases) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 1, 16, 8);
  SflState state = make_initial_state(setup);
  const auto batches = make_local_batches(state.clients[0], state.sample_shape, 8, 1, 0);
  const std::vector<Layer> before = state.clients[0].segment.layers;

  SmashedBatch s = client_local_pass(state.clients[0], batches[0]);
  client_backward(state.clients[0], Tensor(s.activations.shape()), 0.1);
  EXPECT_TRUE(oracle::layers_bitwise_equal(state.clients[0].segment.layers, before));

  std::mt19937_64 rng(1);
  s = client_local_pass(state.clients[0], batches[0]);
  client_backward(state.clients[0], oracle::random_tensor(s.activations.shape(), rng), 0.0);
  EXPECT_TRUE(oracle::layers_bitwise_equal(state.clients[0].segment.layers, before));

  EXPECT_THROW(client_backward(state.clients[0], Tensor(s.activations.shape()), 0.1),
               std::logic_error);
  client_local_pass(state.clients[0], batches[0]);
  EXPECT_THROW(client_backward(state.clients[0], Tensor({1, 2}), 0.1), std::invalid_argument);
}

TEST(FedAvg, ScalarsAndIdentity) {
  auto scalar = [](double v) {
    return std::vector<Layer>{Layer{LayerKind::kDense, Activation::kNone,
                                    Tensor({1, 1}, std::vector<double>{v}),
                                    Tensor({1}, std::vector<double>{v})}};
  };
  const std::vector<std::vector<Layer>> sets = {scalar(2.0), scalar(4.0)};
  const auto avg = fedavg(sets);
  EXPECT_EQ(avg[0].weights[0], 3.0);
  EXPECT_EQ(avg[0].biases[0], 3.0);

  std::mt19937_64 rng(2);
  const std::vector<Layer> base = build_ecg_model(3).layers;
  const std::vector<std::vector<Layer>> same(4, base);
  EXPECT_TRUE(oracle::layers_bitwise_equal(fedavg(same), base));
}

TEST(FedAvg, MatchesElementwiseMeanOracle) {
  std::mt19937_64 rng(3);
  std::vector<std::vector<Layer>> sets;
  for (int k = 0; k < 5; ++k) {
    std::vector<Layer> l = build_ecg_model(10 + k).layers;
    for (Layer& layer : l)
      if (layer.learnable()) layer.biases = oracle::random_tensor(layer.biases.shape(), rng);
    sets.push_back(std::move(l));
  }
  const std::vector<double> weights = {0.1, 0.2, 0.3, 0.25, 0.15};
  const auto eq = fedavg(sets);
  const auto wt = fedavg(sets, weights);
  for (std::size_t i = 0; i < eq.size(); ++i) {
    if (!eq[i].learnable()) continue;
    for (std::size_t j = 0; j < eq[i].weights.size(); ++j) {
      double mean = 0.0;
      double wmean = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        mean += sets[k][i].weights[j];
        wmean += weights[k] * sets[k][i].weights[j];
      }
      EXPECT_NEAR(eq[i].weights[j], mean / 5.0, 1e-12);
      EXPECT_NEAR(wt[i].weights[j], wmean, 1e-12);
    }
  }
}

TEST(FedAvg, RejectsMismatchAndBadWeights) {
  const std::vector<std::vector<Layer>> mismatch = {build_ecg_model(1).layers,
                                                    build_mnist_model(1, kDeskWidths).layers};
  EXPECT_THROW(fedavg(mismatch), std::invalid_argument);
  const std::vector<std::vector<Layer>> two = {build_ecg_model(1).layers, build_ecg_model(2).layers};
  const std::vector<double> bad_sum = {0.5, 0.6};
  const std::vector<double> negative = {1.5, -0.5};
  EXPECT_THROW(fedavg(two, bad_sum), std::invalid_argument);
  EXPECT_THROW(fedavg(two, negative), std::invalid_argument);
  EXPECT_THROW(fedavg(std::span<const std::vector<Layer>>{}), std::invalid_argument);
}

TEST(GlobalEpoch, SingleClientMatchesCentralizedTraining) {
  for (ModelVersion v : {ModelVersion::kMnistV1, ModelVersion::kMnistV2, ModelVersion::kEcgV1,
                         ModelVersion::kEcgV2}) {
    for (AggregationSchedule schedule :
         {AggregationSchedule::kPerEpoch, AggregationSchedule::kPerBatch}) {
      TrainingSetup setup = make_setup(v, 1, 200, 11);
      setup.epoch_options.schedule = schedule;
      SflState state = make_initial_state(setup);
      for (std::size_t e = 0; e < setup.epochs; ++e)
        state = run_global_epoch(std::move(state), e, setup.epoch_options);
      const auto central = oracle::centralized_train(
          setup.model.layers, setup.shards[0].train, setup.model.sample_shape, setup.epochs,
          setup.epoch_options.batch_size, setup.epoch_options.lr, setup.epoch_options.seed);
      EXPECT_TRUE(oracle::layers_bitwise_equal(global_model(state), central)) << to_string(v);
    }
  }
}

TEST(GlobalEpoch, IdenticalClientsAverageToSingleClientUpdate) {
  // One batch per epoch makes the visiting order irrelevant, so every client
  // computes the single-client update up to summation order.
  TrainingSetup one = make_setup(ModelVersion::kEcgV1, 1, 40, 12);
  one.epoch_options.batch_size = 40;
  TrainingSetup many = one;
  many.shards.assign(3, one.shards[0]);
  for (std::size_t i = 0; i < 3; ++i) many.shards[i].client_id = static_cast<int>(i);
  many.attacks.assign(3, AttackConfig{});
  const SflState a = run_global_epoch(make_initial_state(one), 0, one.epoch_options);
  const SflState b = run_global_epoch(make_initial_state(many), 0, many.epoch_options);
  const auto ga = global_model(a);
  const auto gb = global_model(b);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    if (!ga[i].learnable()) continue;
    EXPECT_LE(max_abs_diff(ga[i].weights, gb[i].weights), 1e-12);
    EXPECT_LE(max_abs_diff(ga[i].biases, gb[i].biases), 1e-12);
  }
}

TEST(GlobalEpoch, ClientsShareTheAggregatedSegment) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV2, 3, 24, 13);
  SflState state = run_global_epoch(make_initial_state(setup), 0, setup.epoch_options);
  for (std::size_t k = 1; k < 3; ++k)
    EXPECT_TRUE(oracle::layers_bitwise_equal(state.clients[k].segment.layers,
                                             state.clients[0].segment.layers));
  EXPECT_TRUE(state.server.working.empty());
}

TEST(GlobalEpoch, ResultIndependentOfWorkerCount) {
  TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 4, 24, 14);
  setup.attacks[1].kind = AttackKind::kUntargetedRandom;
  setup.attacks[1].seed = 9;
  const SflState start = make_initial_state(setup);
  EpochOptions serial = setup.epoch_options;
  EpochOptions threaded = setup.epoch_options;
  threaded.workers = 4;
  const SflState a = run_global_epoch(start, 0, serial);
  const SflState b = run_global_epoch(start, 0, threaded);
  const SflState c = run_global_epoch(start, 0, threaded);
  EXPECT_TRUE(oracle::layers_bitwise_equal(global_model(a), global_model(b)));
  EXPECT_TRUE(oracle::layers_bitwise_equal(global_model(b), global_model(c)));
}

TEST(GlobalEpoch, BenignShardsAreNeverModified) {
  TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 3, 24, 15);
  setup.attacks[0].kind = AttackKind::kUntargetedFixed;
  setup.attacks[0].flood_label = 1;
  setup.attacks[1].kind = AttackKind::kDistanceBased;
  setup.attacks[1].source_label = 2;
  const std::vector<Shard> before = setup.shards;
  const SflState start = make_initial_state(setup);
  run_training(setup);
  run_global_epoch(start, 0, setup.epoch_options);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_TRUE(start.clients[k].shard->inputs.bitwise_equal(before[k].train.inputs));
    EXPECT_EQ(start.clients[k].shard->labels, before[k].train.labels);
    EXPECT_TRUE(setup.shards[k].train.inputs.bitwise_equal(before[k].train.inputs));
    EXPECT_EQ(setup.shards[k].train.labels, before[k].train.labels);
  }
}

TEST(GlobalEpoch, FailureLeavesCallerStateUntouched) {
  const TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 2, 16, 16);
  SflState state = make_initial_state(setup);
  const std::vector<Layer> before = global_model(state);
  EpochOptions bad = setup.epoch_options;
  bad.batch_size = 0;
  EXPECT_THROW(run_global_epoch(state, 0, bad), std::invalid_argument);
  EXPECT_TRUE(oracle::layers_bitwise_equal(global_model(state), before));
}

TEST(Training, ZeroMaliciousEqualsNoAttack) {
  const TrainingSetup clean = make_setup(ModelVersion::kEcgV1, 3, 24, 17);
  TrainingSetup configured = clean;
  // Attack parameters on a benign client list are inert.
  for (AttackConfig& a : configured.attacks) {
    a.source_label = 2;
    a.flood_label = 1;
  }
  const TrainingResult a = run_training(clean);
  const TrainingResult b = run_training(configured);
  EXPECT_TRUE(oracle::layers_bitwise_equal(a.model, b.model));
  ASSERT_EQ(a.history.size(), 2u);
  EXPECT_EQ(a.history.back().confusion, b.history.back().confusion);
}

TEST(Training, ReportsEveryEpochAndRejectsMismatch) {
  TrainingSetup setup = make_setup(ModelVersion::kEcgV1, 2, 24, 18);
  setup.epochs = 3;
  std::size_t calls = 0;
  const TrainingResult r = run_training(setup, [&](const MetricsReport&) { ++calls; });
  EXPECT_EQ(calls, 3u);
  EXPECT_EQ(r.history.back().epoch, 3u);
  EXPECT_EQ(r.history.back().confusion.total(), setup.test.size());

  TrainingSetup wrong = setup;
  wrong.model = build_mnist_model(1, kDeskWidths);
  EXPECT_THROW(run_training(wrong), std::invalid_argument);
  TrainingSetup bad_attack = setup;
  bad_attack.attacks[0].kind = AttackKind::kTargeted;
  bad_attack.attacks[0].target_label = 7;
  EXPECT_THROW(run_training(bad_attack), std::invalid_argument);
  TrainingSetup bad_cut = setup;
  bad_cut.cut_index = 6;
  EXPECT_THROW(run_training(bad_cut), std::invalid_argument);
}

TEST(Seeds, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3, 4), derive_seed(1, 2, 3, 4));
  EXPECT_NE(derive_seed(1, 2, 3, 4), derive_seed(1, 2, 4, 3));
  EXPECT_NE(epoch_order(50, 1, 0, 0), epoch_order(50, 1, 0, 1));
  EXPECT_NE(epoch_order(50, 1, 0, 0), epoch_order(50, 1, 1, 0));
}

}  // namespace
}  // namespace sflpl
