#include "sflpl/experiment.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "sflpl/data.h"

namespace sflpl {
namespace {

namespace fs = std::filesystem;

bool is_mnist(ModelVersion v) {
  return v == ModelVersion::kMnistV1 || v == ModelVersion::kMnistV2;
}

// Stream identifiers for derive_seed.
constexpr std::uint64_t kDataStream = 0x44415441;
constexpr std::uint64_t kModelStream = 0x4d4f44454c;
constexpr std::uint64_t kPartitionStream = 0x50415254;
constexpr std::uint64_t kAttackStream = 0x41545441434b;

struct PreparedData {
  std::vector<Shard> shards;
  Dataset test;
  std::string source;
};

SynthOptions synth_options_for(ModelVersion version) {
  SynthOptions options;
  if (!is_mnist(version)) {
    // Overlapping beat classes, tuned so a desk run lands near 90%.
    options.latent_dim = 12;
    options.centre_spread = 1.0;
    options.min_separation = 1.5;
  }
  return options;
}

Dataset truncate(const Dataset& data, std::size_t limit) {
  if (limit == 0 || limit >= data.size()) return data;
  std::vector<std::size_t> rows(limit);
  for (std::size_t i = 0; i < limit; ++i) rows[i] = i;
  return data.subset(rows);
}

bool mnist_files_present(const std::string& dir) {
  if (dir.empty()) return false;
  for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
    if (!fs::exists(fs::path(dir) / f)) return false;
  }
  return true;
}

PreparedData prepare_synthetic(const ExperimentConfig& c) {
  const bool mnist = is_mnist(c.model_version);
  const int classes = static_cast<int>(mnist ? kMnistClasses : kEcgClasses);
  const std::size_t features = mnist ? kMnistInputSize : kEcgInputSize;
  const std::size_t k = c.num_clients;
  const std::uint64_t data_seed = derive_seed(c.seed, kDataStream);
  const std::uint64_t part_seed = derive_seed(c.seed, kPartitionStream);
  PreparedData out;
  out.source = "synthetic";

  if (mnist) {
    // Shards from one pool, the remainder is the held-out test set.
    const std::size_t test = c.test_size ? c.test_size : 1000;
    const std::size_t need = k * (c.train_per_client + c.holdout_per_client) + test;
    const std::size_t per_class = (need + classes - 1) / classes;
    const Dataset pool =
        c.dataset == DatasetKind::kSynth
            ? synth_dataset(classes, features, per_class, data_seed,
                            synth_options_for(c.model_version))
            : synth_digits(per_class, data_seed);
    Partition p = partition(pool, k, c.train_per_client, c.holdout_per_client,
                            part_seed);
    out.shards = std::move(p.shards);
    out.test = truncate(p.remainder, test);
  } else {
    // Mirrors the ECG protocol: random half for training, half for test.
    const std::size_t total =
        c.train_per_client ? 2 * k * (c.train_per_client + c.holdout_per_client)
                           : 26490;
    const std::size_t per_class = (total + classes - 1) / classes;
    const Dataset pool = synth_dataset(classes, features, per_class, data_seed,
                                       synth_options_for(c.model_version));
    TrainTestSplit halves = split_half(pool, part_seed);
    const std::size_t train = c.train_per_client
                                  ? c.train_per_client
                                  : halves.train.size() / k - c.holdout_per_client;
    Partition p = partition(halves.train, k, train, c.holdout_per_client,
                            derive_seed(part_seed, 1));
    out.shards = std::move(p.shards);
    out.test = truncate(halves.test, c.test_size);
  }
  out.test.name = out.test.name + "-test";
  return out;
}

PreparedData prepare_mnist(const ExperimentConfig& c) {
  const fs::path dir(c.mnist_dir);
  const Dataset train = load_mnist_idx((dir / "train-images-idx3-ubyte").string(),
                                       (dir / "train-labels-idx1-ubyte").string());
  const Dataset test = load_mnist_idx((dir / "t10k-images-idx3-ubyte").string(),
                                      (dir / "t10k-labels-idx1-ubyte").string());
  PreparedData out;
  out.source = "mnist-idx";
  Partition p = partition(train, c.num_clients, c.train_per_client,
                          c.holdout_per_client,
                          derive_seed(c.seed, kPartitionStream));
  out.shards = std::move(p.shards);
  if (c.test_size && c.test_size < test.size()) {
    auto perm = seeded_permutation(test.size(), derive_seed(c.seed, kDataStream));
    perm.resize(c.test_size);
    out.test = test.subset(perm);
  } else {
    out.test = test;
  }
  return out;
}

PreparedData prepare_ecg(const ExperimentConfig& c) {
  const Dataset all = load_ecg_csv(c.ecg_csv);
  TrainTestSplit halves = split_half(all, derive_seed(c.seed, kDataStream));
  if (c.standardize) {
    Dataset* targets[] = {&halves.train, &halves.test};
    const Dataset reference = halves.train;
    standardize_features(reference, targets);
  }
  const std::size_t k = c.num_clients;
  std::size_t train = c.train_per_client;
  if (train == 0) {
    const std::size_t per_client = halves.train.size() / k;
    if (per_client <= c.holdout_per_client) {
      throw std::invalid_argument("ECG training half too small for " +
                                  std::to_string(k) + " clients");
    }
    train = per_client - c.holdout_per_client;
  }
  PreparedData out;
  out.source = "ecg-csv";
  Partition p = partition(halves.train, k, train, c.holdout_per_client,
                          derive_seed(c.seed, kPartitionStream));
  out.shards = std::move(p.shards);
  out.test = truncate(halves.test, c.test_size);
  return out;
}

PreparedData prepare_data(const ExperimentConfig& c) {
  switch (c.dataset) {
    case DatasetKind::kSynth:
      return prepare_synthetic(c);
    case DatasetKind::kMnist:
      if (mnist_files_present(c.mnist_dir)) return prepare_mnist(c);
      if (c.synth_fallback) return prepare_synthetic(c);
      throw std::invalid_argument("MNIST IDX files not found in '" + c.mnist_dir +
                                  "' (pass --mnist-dir or use --preset desk)");
    case DatasetKind::kEcg:
      if (!c.ecg_csv.empty() && fs::exists(c.ecg_csv)) return prepare_ecg(c);
      if (c.synth_fallback) return prepare_synthetic(c);
      throw std::invalid_argument("ECG CSV '" + c.ecg_csv +
                                  "' not found (pass --ecg-csv or use --preset desk)");
  }
  throw std::logic_error("unknown dataset kind");
}

ExperimentConfig baseline_config(const ExperimentConfig& c) {
  ExperimentConfig b = c;
  b.malicious_pct = 0;
  b.attack = AttackKind::kNone;
  b.source_class.reset();
  b.target_class.reset();
  b.flood_label.reset();
  return b;
}

// Fills unset attack classes from the baseline's per-class test accuracy.
void resolve_attack_classes(ExperimentConfig& c, const RunRecord& baseline) {
  const auto acc = per_class_accuracy(baseline.final_report().confusion);
  const auto [best, second] = auto_select_source_target(acc);
  switch (c.attack) {
    case AttackKind::kTargeted:
      if (!c.source_class) c.source_class = best;
      if (!c.target_class) {
        // Keep source != target when only the source was overridden.
        c.target_class = *c.source_class == best ? second : best;
      }
      break;
    case AttackKind::kDistanceBased:
      if (!c.source_class) c.source_class = best;
      break;
    case AttackKind::kUntargetedFixed:
      if (!c.flood_label) c.flood_label = best;
      break;
    case AttackKind::kNone:
    case AttackKind::kUntargetedRandom:
      break;
  }
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kMnist:
      return "mnist";
    case DatasetKind::kEcg:
      return "ecg";
    case DatasetKind::kSynth:
      return "synth";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "mnist") return DatasetKind::kMnist;
  if (name == "ecg") return DatasetKind::kEcg;
  if (name == "synth") return DatasetKind::kSynth;
  throw std::invalid_argument("unknown dataset '" + std::string(name) +
                              "' (expected mnist|ecg|synth)");
}

std::string to_string(AggregationSchedule schedule) {
  return schedule == AggregationSchedule::kPerEpoch ? "epoch" : "batch";
}

AggregationSchedule parse_aggregation_schedule(std::string_view name) {
  if (name == "epoch") return AggregationSchedule::kPerEpoch;
  if (name == "batch") return AggregationSchedule::kPerBatch;
  throw std::invalid_argument("unknown aggregation schedule '" +
                              std::string(name) + "' (expected epoch|batch)");
}

ExperimentConfig preset_config(std::string_view preset, DatasetKind dataset) {
  ExperimentConfig c;
  c.dataset = dataset;
  c.preset = std::string(preset);
  const bool ecg = dataset == DatasetKind::kEcg;
  c.model_version = ecg ? ModelVersion::kEcgV1 : ModelVersion::kMnistV1;
  if (preset == "paper") {
    c.num_clients = ecg ? 5 : 10;
    c.epochs = ecg ? 50 : 40;
    c.train_per_client = ecg ? 0 : 5000;
    c.holdout_per_client = ecg ? 0 : 1000;
    c.test_size = 0;
    c.lr = 0.01;
    c.batch_size = 32;
    c.synth_fallback = false;
  } else if (preset == "desk") {
    // Ten epochs of per-epoch FedAvg over 600-row shards give few effective
    // steps, so the desk MLP is narrower and steps smaller batches.
    c.num_clients = ecg ? 5 : 10;
    c.epochs = 10;
    c.train_per_client = ecg ? 400 : 600;
    c.holdout_per_client = 0;
    c.test_size = ecg ? 2000 : 1000;
    c.lr = 0.03;
    c.batch_size = ecg ? 16 : 4;
    if (!ecg) c.mnist_widths = {128, 128, 64, 64, 32, 32, 32, 16, 16};
    c.synth_fallback = true;
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(preset) +
                                "' (expected paper|desk)");
  }
  return c;
}

void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  const bool mnist = is_mnist(c.model_version);
  if (c.dataset == DatasetKind::kMnist && !mnist) {
    fail("dataset mnist cannot train " + to_string(c.model_version));
  }
  if (c.dataset == DatasetKind::kEcg && mnist) {
    fail("dataset ecg cannot train " + to_string(c.model_version));
  }
  if (c.num_clients == 0) fail("at least one client is required");
  if (c.malicious_pct < 0 || c.malicious_pct > 100) {
    fail("malicious percentage must lie in [0, 100]");
  }
  if (c.epochs == 0) fail("epochs must be positive");
  if (c.batch_size == 0) fail("batch size must be positive");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) fail("learning rate must be finite and >= 0");
  const int classes = static_cast<int>(mnist ? kMnistClasses : kEcgClasses);
  for (const auto& [value, name] :
       {std::pair{c.source_class, "source class"},
        std::pair{c.target_class, "target class"},
        std::pair{c.flood_label, "flood label"}}) {
    if (value && (*value < 0 || *value >= classes)) {
      fail(std::string(name) + " " + std::to_string(*value) + " outside [0, " +
           std::to_string(classes) + ")");
    }
  }
  if (!c.mnist_widths.empty()) {
    if (c.mnist_widths.size() != default_mnist_widths().size()) {
      fail("mnist_widths needs " + std::to_string(default_mnist_widths().size()) +
           " hidden widths, got " + std::to_string(c.mnist_widths.size()));
    }
    for (std::size_t w : c.mnist_widths) {
      if (w == 0) fail("mnist_widths entries must be positive");
    }
  }
  if (c.dataset != DatasetKind::kEcg && c.train_per_client == 0) {
    fail("train_per_client must be positive");
  }
}

std::size_t malicious_count(const ExperimentConfig& c) {
  return static_cast<std::size_t>(
      std::lround(static_cast<double>(c.num_clients) * c.malicious_pct / 100.0));
}

RunRecord run(const ExperimentConfig& config, const RunRecord* baseline) {
  validate_config(config);
  const auto started = std::chrono::steady_clock::now();

  RunRecord record;
  record.config = config;
  const std::size_t malicious =
      config.attack == AttackKind::kNone ? 0 : malicious_count(config);

  RunRecord own_baseline;
  if (malicious > 0) {
    const ExperimentConfig clean = baseline_config(config);
    if (baseline == nullptr) {
      own_baseline = run(clean);
      baseline = &own_baseline;
    } else if (baseline->fingerprint != config_fingerprint(clean)) {
      throw std::invalid_argument("baseline run does not match this configuration");
    }
    resolve_attack_classes(record.config, *baseline);
    validate_attack(AttackConfig{config.attack, record.config.source_class.value_or(0),
                                 record.config.target_class.value_or(0),
                                 record.config.flood_label.value_or(0)},
                    static_cast<int>(is_mnist(config.model_version) ? kMnistClasses
                                                                    : kEcgClasses));
  }
  const ExperimentConfig& c = record.config;

  PreparedData data = prepare_data(c);
  record.dataset_source = data.source;

  TrainingSetup setup;
  const std::uint64_t model_seed = derive_seed(c.seed, kModelStream);
  setup.model = is_mnist(c.model_version) && !c.mnist_widths.empty()
                    ? build_mnist_model(model_seed, c.mnist_widths)
                    : build_model(c.model_version, model_seed);
  setup.cut_index = split_point(c.model_version).cut_index;
  setup.shards = std::move(data.shards);
  setup.test = std::move(data.test);
  setup.epochs = c.epochs;
  setup.epoch_options = EpochOptions{c.lr, c.batch_size, c.seed, c.workers, c.schedule};
  setup.attacks.resize(c.num_clients);
  for (std::size_t i = 0; i < malicious; ++i) {
    AttackConfig& a = setup.attacks[i];
    a.kind = c.attack;
    a.source_label = c.source_class.value_or(0);
    a.target_label = c.target_class.value_or(0);
    a.flood_label = c.flood_label.value_or(0);
    a.seed = derive_seed(c.seed, kAttackStream);
    a.distance_scope = c.distance_scope;
    record.malicious_clients.push_back(static_cast<int>(i));
  }

  TrainingResult result = run_training(setup);
  record.history = std::move(result.history);
  for (std::size_t e = 0; e < record.history.size(); ++e) {
    const double clean = malicious > 0 ? baseline->history.at(e).accuracy
                                       : record.history[e].accuracy;
    record.history[e].accuracy_drop = accuracy_drop(clean, record.history[e].accuracy);
  }
  record.baseline_accuracy = malicious > 0 ? baseline->final_report().accuracy
                                           : record.final_report().accuracy;
  record.model_checksum = model_checksum(result.model);
  record.fingerprint = config_fingerprint(record.config);
  record.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return record;
}

GridResult run_grid(const ExperimentConfig& base,
                    const std::vector<int>& malicious_pcts,
                    const std::vector<AttackKind>& attacks,
                    const std::vector<ModelVersion>& versions) {
  GridResult grid;
  for (ModelVersion version : versions) {
    ExperimentConfig vbase = base;
    vbase.model_version = version;
    validate_config(vbase);
    for (int pct : malicious_pcts) {
      ExperimentConfig cell = vbase;
      cell.malicious_pct = pct;
      validate_config(cell);
    }
  }
  for (ModelVersion version : versions) {
    ExperimentConfig vbase = base;
    vbase.model_version = version;
    const std::size_t baseline_index = grid.records.size();
    grid.records.push_back(run(baseline_config(vbase)));
    for (AttackKind attack : attacks) {
      if (attack == AttackKind::kNone) continue;
      for (int pct : malicious_pcts) {
        if (pct == 0) continue;
        ExperimentConfig cell = baseline_config(vbase);
        cell.attack = attack;
        cell.malicious_pct = pct;
        cell.source_class = base.source_class;
        cell.target_class = base.target_class;
        cell.flood_label = base.flood_label;
        grid.records.push_back(run(cell, &grid.records[baseline_index]));
      }
    }
  }
  grid.rows = grid_rows(grid.records);
  return grid;
}

std::vector<GridRow> grid_rows(const std::vector<RunRecord>& records) {
  std::vector<GridRow> rows;
  rows.reserve(records.size());
  for (const RunRecord& r : records) {
    const MetricsReport& last = r.final_report();
    rows.push_back(GridRow{r.config.model_version, r.config.malicious_pct,
                           r.malicious_clients.empty() ? AttackKind::kNone
                                                       : r.config.attack,
                           last.accuracy, last.accuracy_drop.value_or(0.0)});
  }
  return rows;
}

}  // namespace sflpl
