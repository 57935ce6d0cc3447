#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sflpl/metrics.h"
#include "sflpl/model.h"
#include "sflpl/poisoning.h"
#include "sflpl/protocol.h"

namespace sflpl {

enum class DatasetKind { kMnist, kEcg, kSynth };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);
std::string to_string(AggregationSchedule schedule);
AggregationSchedule parse_aggregation_schedule(std::string_view name);

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::kMnist;
  ModelVersion model_version = ModelVersion::kMnistV1;
  std::size_t num_clients = 10;
  int malicious_pct = 0;  // 0..100
  AttackKind attack = AttackKind::kNone;
  // Unset values are chosen from the clean baseline run.
  std::optional<int> source_class;
  std::optional<int> target_class;
  std::optional<int> flood_label;
  DistanceScope distance_scope = DistanceScope::kBatch;
  std::size_t epochs = 40;
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::string preset = "paper";
  AggregationSchedule schedule = AggregationSchedule::kPerEpoch;
  // Nine hidden widths for the MNIST MLP; empty keeps the default taper.
  std::vector<std::size_t> mnist_widths;

  // Data sizing.
  std::size_t train_per_client = 5000;
  std::size_t holdout_per_client = 1000;
  std::size_t test_size = 0;  // 0 keeps the whole test set
  bool standardize = false;
  std::string mnist_dir;  // holds the four standard IDX files
  std::string ecg_csv;
  // When the dataset files are missing, fall back to synthetic data shaped
  // like the requested dataset instead of failing.
  bool synth_fallback = false;

  // Execution only; never part of the fingerprint.
  std::size_t workers = 1;
  std::string out_dir;
};

/// Defaults for a named preset ("paper" or "desk") and dataset.
ExperimentConfig preset_config(std::string_view preset, DatasetKind dataset);

/// Throws std::invalid_argument on an inconsistent configuration.
void validate_config(const ExperimentConfig& config);

/// round(K * pct / 100); the malicious clients are ids [0, count).
std::size_t malicious_count(const ExperimentConfig& config);

struct RunRecord {
  ExperimentConfig config;  // fully resolved: class choices are filled in
  std::string fingerprint;
  std::string dataset_source;  // "mnist-idx", "ecg-csv" or "synthetic"
  std::vector<int> malicious_clients;
  std::vector<MetricsReport> history;
  std::optional<double> baseline_accuracy;
  std::string model_checksum;
  double duration_seconds = 0.0;  // kept out of report.json

  const MetricsReport& final_report() const { return history.back(); }
};

/// Trains one configuration. When clients are malicious, the clean baseline
/// is trained first (or taken from `baseline`) to choose attack classes and
/// to compute the accuracy drop.
RunRecord run(const ExperimentConfig& config,
              const RunRecord* baseline = nullptr);

struct GridRow {
  ModelVersion version;
  int malicious_pct;
  AttackKind attack;
  double accuracy;
  double accuracy_drop;
};

struct GridResult {
  std::vector<RunRecord> records;  // baseline first per version
  std::vector<GridRow> rows;
};

/// Baseline per version, then every (attack, pct > 0) cell against it.
GridResult run_grid(const ExperimentConfig& base,
                    const std::vector<int>& malicious_pcts,
                    const std::vector<AttackKind>& attacks,
                    const std::vector<ModelVersion>& versions);

std::vector<GridRow> grid_rows(const std::vector<RunRecord>& records);

// ---- Serialization ------------------------------------------------------

nlohmann::ordered_json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json record_to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::ordered_json& j);

/// Stable hash of the result-determining configuration fields.
std::string config_fingerprint(const ExperimentConfig& config);
std::string model_checksum(std::span<const Layer> layers);

enum class ReportFormat { kJson, kCsv, kMarkdown };
ReportFormat parse_report_format(std::string_view name);

std::string render_json(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_json_report(std::string_view text);
/// version,pct,attack,A,A_d with two decimals.
std::string render_csv(const std::vector<GridRow>& rows);
std::string render_markdown(const std::vector<RunRecord>& records,
                            const std::vector<GridRow>& rows);
/// One row per class of every record: version,pct,attack,class,P,R,F.
std::string render_prf_csv(const std::vector<RunRecord>& records);

/// Creates `out_dir` if needed; throws std::runtime_error when it cannot.
void prepare_output_dir(const std::string& out_dir);

/// Writes the requested formats into `out_dir` (report.json, table.csv,
/// table.md, plus prf.csv and timing.json), each via temp file + rename.
void emit_report(const std::vector<RunRecord>& records,
                 const std::vector<GridRow>& rows, const std::string& out_dir,
                 const std::vector<ReportFormat>& formats);

/// Temp file + rename; throws std::runtime_error when the path is unwritable.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace sflpl
