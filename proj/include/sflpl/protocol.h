#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sflpl/data.h"
#include "sflpl/metrics.h"
#include "sflpl/model.h"
#include "sflpl/nn.h"
#include "sflpl/poisoning.h"

namespace sflpl {

// SplitFed training. Each client owns the layers up to the cut and a private
// shard; the main server owns the remaining layers and keeps one working copy
// per client during an epoch; the fed server averages the client segments.
// Labels travel to the main server alongside the cut-layer activations.

/// A batch drawn from one client's shard, labels already in the form the
/// client will send (poisoned when the client is malicious).
struct LocalBatch {
  int owner = 0;
  Tensor inputs;
  std::vector<int> labels;
};

struct SmashedBatch {
  int client_id = 0;
  Tensor activations;
  std::vector<int> labels;
};

struct ClientState {
  int client_id = 0;
  ModelSegment segment;
  std::shared_ptr<const Dataset> shard;
  bool is_malicious = false;
  AttackConfig attack;
  // Forward cache from the last client_local_pass, consumed by
  // client_backward.
  std::optional<ForwardCache> pending;
};

struct ServerState {
  ModelSegment global;
  // Per-client working copies, indexed by client id, alive during an epoch.
  std::vector<ModelSegment> working;
  int num_classes = 0;
};

enum class AggregationSchedule { kPerEpoch, kPerBatch };

struct SflState {
  std::vector<ClientState> clients;
  ServerState server;
  Shape sample_shape;  // per-sample model input shape
};

struct EpochOptions {
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  AggregationSchedule schedule = AggregationSchedule::kPerEpoch;
};

/// splitmix64-style mixing of a seed with stream identifiers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// Row order a client visits its shard in during `epoch`.
std::vector<std::size_t> epoch_order(std::size_t shard_size, std::uint64_t seed,
                                     int client_id, std::size_t epoch);

/// The client's batches for one local epoch. Malicious clients poison the
/// labels of this view only; the stored shard is never modified.
std::vector<LocalBatch> make_local_batches(const ClientState& client,
                                           const Shape& sample_shape,
                                           std::size_t batch_size,
                                           std::uint64_t seed,
                                           std::size_t epoch);

SmashedBatch client_local_pass(ClientState& client, const LocalBatch& batch);

struct ServerStepResult {
  Tensor cut_gradient;
  double loss = 0.0;
};

/// Forward, loss, backward and one SGD step on the working copy that
/// belongs to `smashed.client_id`.
ServerStepResult server_step(ServerState& server, const SmashedBatch& smashed,
                             double lr);

void client_backward(ClientState& client, const Tensor& cut_gradient, double lr);

/// Weighted elementwise mean. Weights must be non-negative and sum to one;
/// sets are combined in index order.
std::vector<Layer> fedavg(std::span<const std::vector<Layer>> param_sets,
                          std::span<const double> weights);
/// Equal weights.
std::vector<Layer> fedavg(std::span<const std::vector<Layer>> param_sets);

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

/// One synchronous global epoch. Strong guarantee: on failure the caller's
/// state is untouched because the state is taken by value.
SflState run_global_epoch(SflState state, std::size_t epoch,
                          const EpochOptions& options,
                          EpochStats* stats = nullptr);

/// Current global model, client segment followed by server segment.
std::vector<Layer> global_model(const SflState& state);

/// Confusion matrix of `layers` on `data`, evaluated in chunks.
ConfusionMatrix evaluate(std::span<const Layer> layers, const Dataset& data,
                         const Shape& sample_shape,
                         std::size_t chunk = 500);

struct TrainingSetup {
  ModelSpec model;
  std::size_t cut_index = 1;
  std::vector<Shard> shards;
  Dataset test;
  // Indexed by client id; a client with kind == kNone is benign.
  std::vector<AttackConfig> attacks;
  std::size_t epochs = 1;
  EpochOptions epoch_options;
};

struct TrainingResult {
  std::vector<Layer> model;
  std::vector<MetricsReport> history;  // one per epoch
};

using EpochCallback = std::function<void(const MetricsReport&)>;

/// Validates the setup, builds the initial state and runs every epoch,
/// evaluating the global model on the test set after each one.
TrainingResult run_training(const TrainingSetup& setup,
                            const EpochCallback& on_epoch = {});

SflState make_initial_state(const TrainingSetup& setup);

}  // namespace sflpl
