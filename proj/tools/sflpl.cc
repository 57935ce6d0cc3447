// sflpl: SplitFed label-poisoning experiments from the command line.
//
//   sflpl run  --dataset mnist --preset desk --attack targeted --malicious-pct 40
//   sflpl grid --dataset ecg --preset desk --pcts 0,20,40 --out results/ecg
//   sflpl render --in results/ecg/report.json --out results/ecg --format md
//
// Every flag can also come from an SFLPL_<FLAG> environment variable.
// Failures print one JSON line on stderr and exit nonzero.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sflpl/experiment.h"

namespace {

using sflpl::AttackKind;
using sflpl::ExperimentConfig;
using sflpl::ModelVersion;

struct Flags {
  std::optional<std::string> dataset;
  std::optional<std::string> model_version;
  std::optional<std::size_t> clients;
  std::optional<int> malicious_pct;
  std::optional<std::string> attack;
  std::optional<int> source_class;
  std::optional<int> target_class;
  std::optional<int> flood_label;
  std::optional<std::string> distance_scope;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<std::string> aggregation;
  std::vector<std::size_t> mnist_widths;
  std::optional<std::size_t> train_per_client;
  std::optional<std::size_t> holdout_per_client;
  std::optional<std::size_t> test_size;
  std::optional<bool> standardize;
  std::optional<std::string> mnist_dir;
  std::optional<std::string> ecg_csv;
  std::optional<std::size_t> workers;
  std::string out = "sflpl-out";
  std::vector<std::string> formats = {"json", "csv", "md"};
  bool quiet = false;
};

std::string env_name(const std::string& flag) {
  std::string name = "SFLPL_";
  for (char ch : flag) name += ch == '-' ? '_' : static_cast<char>(std::toupper(ch));
  return name;
}

template <typename T>
void add_flag(CLI::App* app, const std::string& name, T& target,
              const std::string& help) {
  app->add_option("--" + name, target, help)->envname(env_name(name));
}

void add_common(CLI::App* app, Flags& f) {
  add_flag(app, "dataset", f.dataset, "mnist | ecg | synth");
  add_flag(app, "model-version", f.model_version, "MNISTv1 | MNISTv2 | ECGv1 | ECGv2");
  add_flag(app, "clients", f.clients, "number of clients K");
  add_flag(app, "malicious-pct", f.malicious_pct, "percentage of malicious clients");
  add_flag(app, "attack", f.attack,
           "none | targeted | untargeted-random | untargeted-fixed | distance");
  add_flag(app, "source-class", f.source_class, "label to flip (default: from baseline)");
  add_flag(app, "target-class", f.target_class, "targeted flip destination");
  add_flag(app, "flood-label", f.flood_label, "untargeted-fixed label");
  add_flag(app, "distance-scope", f.distance_scope, "batch | shard");
  add_flag(app, "epochs", f.epochs, "global epochs");
  add_flag(app, "lr", f.lr, "SGD learning rate");
  add_flag(app, "batch-size", f.batch_size, "local batch size");
  add_flag(app, "seed", f.seed, "master seed");
  add_flag(app, "preset", f.preset, "paper | desk");
  add_flag(app, "aggregation", f.aggregation, "epoch | batch");
  app->add_option("--mnist-widths", f.mnist_widths, "nine hidden widths, comma separated")
      ->envname("SFLPL_MNIST_WIDTHS")
      ->delimiter(',');
  add_flag(app, "train-per-client", f.train_per_client, "training rows per client");
  add_flag(app, "holdout-per-client", f.holdout_per_client, "validation rows per client");
  add_flag(app, "test-size", f.test_size, "test rows (0 keeps all)");
  add_flag(app, "standardize", f.standardize, "z-score ECG features");
  add_flag(app, "mnist-dir", f.mnist_dir, "directory with the four MNIST IDX files");
  add_flag(app, "ecg-csv", f.ecg_csv, "CSV of 124 features plus class token");
  add_flag(app, "workers", f.workers, "client threads");
  add_flag(app, "out", f.out, "output directory");
  app->add_option("--format", f.formats, "json, csv, md")
      ->envname("SFLPL_FORMAT")
      ->delimiter(',');
  app->add_flag("--quiet", f.quiet, "no progress on stderr");
}

ExperimentConfig resolve(const Flags& f) {
  const sflpl::DatasetKind dataset =
      sflpl::parse_dataset_kind(f.dataset.value_or("mnist"));
  ExperimentConfig c = sflpl::preset_config(f.preset.value_or("paper"), dataset);
  if (f.model_version) c.model_version = sflpl::parse_model_version(*f.model_version);
  if (f.clients) c.num_clients = *f.clients;
  if (f.malicious_pct) c.malicious_pct = *f.malicious_pct;
  if (f.attack) c.attack = sflpl::parse_attack_kind(*f.attack);
  c.source_class = f.source_class;
  c.target_class = f.target_class;
  c.flood_label = f.flood_label;
  if (f.distance_scope) c.distance_scope = sflpl::parse_distance_scope(*f.distance_scope);
  if (f.epochs) c.epochs = *f.epochs;
  if (f.lr) c.lr = *f.lr;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.seed) c.seed = *f.seed;
  if (f.aggregation) c.schedule = sflpl::parse_aggregation_schedule(*f.aggregation);
  if (!f.mnist_widths.empty()) c.mnist_widths = f.mnist_widths;
  if (f.train_per_client) c.train_per_client = *f.train_per_client;
  if (f.holdout_per_client) c.holdout_per_client = *f.holdout_per_client;
  if (f.test_size) c.test_size = *f.test_size;
  if (f.standardize) c.standardize = *f.standardize;
  if (f.mnist_dir) c.mnist_dir = *f.mnist_dir;
  if (f.ecg_csv) c.ecg_csv = *f.ecg_csv;
  if (f.workers) c.workers = *f.workers;
  c.out_dir = f.out;
  sflpl::validate_config(c);
  return c;
}

std::vector<sflpl::ReportFormat> resolve_formats(const Flags& f) {
  std::vector<sflpl::ReportFormat> out;
  for (const auto& name : f.formats) out.push_back(sflpl::parse_report_format(name));
  return out;
}

void progress(const Flags& f, const sflpl::RunRecord& r) {
  if (f.quiet) return;
  const auto& last = r.final_report();
  std::cerr << sflpl::to_string(r.config.model_version) << " pct=" << r.config.malicious_pct
            << " attack=" << sflpl::to_string(r.config.attack) << " A=" << last.accuracy
            << " A_d=" << last.accuracy_drop.value_or(0.0) << " (" << r.duration_seconds
            << "s)\n";
}

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SplitFed learning label-poisoning simulator"};
  app.require_subcommand(1);

  Flags run_flags;
  CLI::App* run_cmd = app.add_subcommand("run", "train one configuration");
  add_common(run_cmd, run_flags);

  Flags grid_flags;
  std::vector<int> pcts = {0, 20, 40};
  std::vector<std::string> attacks = {"untargeted-fixed", "targeted", "distance"};
  std::vector<std::string> versions;
  CLI::App* grid_cmd =
      app.add_subcommand("grid", "baseline plus every (version, attack, pct) cell");
  add_common(grid_cmd, grid_flags);
  grid_cmd->add_option("--pcts", pcts, "malicious percentages")
      ->delimiter(',')
      ->envname("SFLPL_PCTS");
  grid_cmd->add_option("--attacks", attacks, "attack kinds")
      ->delimiter(',')
      ->envname("SFLPL_ATTACKS");
  grid_cmd->add_option("--versions", versions, "model versions (default: both of the dataset)")
      ->delimiter(',')
      ->envname("SFLPL_VERSIONS");

  std::string render_in;
  std::string render_out;
  std::vector<std::string> render_formats = {"csv", "md"};
  CLI::App* render_cmd =
      app.add_subcommand("render", "rebuild tables from an existing report.json");
  render_cmd->add_option("--in", render_in, "report.json")->required();
  render_cmd->add_option("--out", render_out, "output directory")->required();
  render_cmd->add_option("--format", render_formats, "json, csv, md")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (run_cmd->parsed()) {
      const ExperimentConfig config = resolve(run_flags);
      const auto formats = resolve_formats(run_flags);
      sflpl::prepare_output_dir(run_flags.out);
      const sflpl::RunRecord record = sflpl::run(config);
      progress(run_flags, record);
      const std::vector<sflpl::RunRecord> records = {record};
      sflpl::emit_report(records, sflpl::grid_rows(records), run_flags.out, formats);
    } else if (grid_cmd->parsed()) {
      const ExperimentConfig base = resolve(grid_flags);
      const auto formats = resolve_formats(grid_flags);
      sflpl::prepare_output_dir(grid_flags.out);
      std::vector<ModelVersion> vs;
      for (const auto& v : versions) vs.push_back(sflpl::parse_model_version(v));
      if (vs.empty()) {
        const bool ecg = base.model_version == ModelVersion::kEcgV1 ||
                         base.model_version == ModelVersion::kEcgV2;
        vs = ecg ? std::vector{ModelVersion::kEcgV1, ModelVersion::kEcgV2}
                 : std::vector{ModelVersion::kMnistV1, ModelVersion::kMnistV2};
      }
      std::vector<AttackKind> kinds;
      for (const auto& a : attacks) kinds.push_back(sflpl::parse_attack_kind(a));
      const sflpl::GridResult grid = sflpl::run_grid(base, pcts, kinds, vs);
      for (const auto& r : grid.records) progress(grid_flags, r);
      sflpl::emit_report(grid.records, grid.rows, grid_flags.out, formats);
    } else if (render_cmd->parsed()) {
      std::ifstream in(render_in, std::ios::binary);
      if (!in) throw std::runtime_error("cannot read " + render_in);
      std::ostringstream text;
      text << in.rdbuf();
      const auto records = sflpl::parse_json_report(text.str());
      std::vector<sflpl::ReportFormat> formats;
      for (const auto& name : render_formats) {
        formats.push_back(sflpl::parse_report_format(name));
      }
      sflpl::emit_report(records, sflpl::grid_rows(records), render_out, formats);
    }
  } catch (const std::invalid_argument& e) {
    return fail("invalid_config", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
