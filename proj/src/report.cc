#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sflpl/experiment.h"

namespace sflpl {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr int kReportSchema = 1;

std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

json optional_int(const std::optional<int>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<int> read_optional_int(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<int>();
}

json confusion_to_json(const ConfusionMatrix& cm) {
  json rows = json::array();
  for (std::size_t a = 0; a < cm.classes(); ++a) {
    json row = json::array();
    for (std::size_t p = 0; p < cm.classes(); ++p) row.push_back(cm.at(a, p));
    rows.push_back(std::move(row));
  }
  return rows;
}

ConfusionMatrix confusion_from_json(const json& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const json& row = rows.at(a);
    if (row.size() != rows.size()) {
      throw std::invalid_argument("confusion matrix row " + std::to_string(a) +
                                  " has " + std::to_string(row.size()) +
                                  " entries, expected " + std::to_string(rows.size()));
    }
    for (std::size_t p = 0; p < row.size(); ++p) {
      cm.add(a, p, row.at(p).get<std::uint64_t>());
    }
  }
  return cm;
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["epoch"] = r.epoch;
  j["accuracy"] = r.accuracy;
  j["accuracy_drop"] = r.accuracy_drop ? json(*r.accuracy_drop) : json(nullptr);
  j["validation_accuracy"] = r.validation_accuracy;
  j["train_loss"] = r.train_loss;
  j["confusion"] = confusion_to_json(r.confusion);
  json prf = json::array();
  for (const ClassScores& s : r.per_class) {
    prf.push_back(json{{"precision", s.precision},
                       {"recall", s.recall},
                       {"fscore", s.fscore}});
  }
  j["per_class"] = std::move(prf);
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  if (!j.at("accuracy_drop").is_null()) {
    r.accuracy_drop = j.at("accuracy_drop").get<double>();
  }
  r.validation_accuracy = j.at("validation_accuracy").get<double>();
  r.train_loss = j.at("train_loss").get<double>();
  r.confusion = confusion_from_json(j.at("confusion"));
  for (const json& s : j.at("per_class")) {
    r.per_class.push_back(ClassScores{s.at("precision").get<double>(),
                                      s.at("recall").get<double>(),
                                      s.at("fscore").get<double>()});
  }
  return r;
}

std::string record_label(const RunRecord& r) {
  if (r.malicious_clients.empty()) return "none 0%";
  return to_string(r.config.attack) + " " + std::to_string(r.config.malicious_pct) + "%";
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = to_string(c.dataset);
  j["model_version"] = to_string(c.model_version);
  j["num_clients"] = c.num_clients;
  j["malicious_pct"] = c.malicious_pct;
  j["attack"] = to_string(c.attack);
  j["source_class"] = optional_int(c.source_class);
  j["target_class"] = optional_int(c.target_class);
  j["flood_label"] = optional_int(c.flood_label);
  j["distance_scope"] = to_string(c.distance_scope);
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["preset"] = c.preset;
  j["aggregation"] = to_string(c.schedule);
  j["mnist_widths"] = c.mnist_widths;
  j["train_per_client"] = c.train_per_client;
  j["holdout_per_client"] = c.holdout_per_client;
  j["test_size"] = c.test_size;
  j["standardize"] = c.standardize;
  j["mnist_dir"] = c.mnist_dir;
  j["ecg_csv"] = c.ecg_csv;
  j["synth_fallback"] = c.synth_fallback;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.dataset = parse_dataset_kind(j.at("dataset").get<std::string>());
  c.model_version = parse_model_version(j.at("model_version").get<std::string>());
  c.num_clients = j.at("num_clients").get<std::size_t>();
  c.malicious_pct = j.at("malicious_pct").get<int>();
  c.attack = parse_attack_kind(j.at("attack").get<std::string>());
  c.source_class = read_optional_int(j, "source_class");
  c.target_class = read_optional_int(j, "target_class");
  c.flood_label = read_optional_int(j, "flood_label");
  c.distance_scope = parse_distance_scope(j.at("distance_scope").get<std::string>());
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.preset = j.at("preset").get<std::string>();
  c.schedule = parse_aggregation_schedule(j.at("aggregation").get<std::string>());
  c.mnist_widths = j.at("mnist_widths").get<std::vector<std::size_t>>();
  c.train_per_client = j.at("train_per_client").get<std::size_t>();
  c.holdout_per_client = j.at("holdout_per_client").get<std::size_t>();
  c.test_size = j.at("test_size").get<std::size_t>();
  c.standardize = j.at("standardize").get<bool>();
  c.mnist_dir = j.at("mnist_dir").get<std::string>();
  c.ecg_csv = j.at("ecg_csv").get<std::string>();
  c.synth_fallback = j.at("synth_fallback").get<bool>();
  return c;
}

json record_to_json(const RunRecord& r) {
  json j;
  j["fingerprint"] = r.fingerprint;
  j["config"] = config_to_json(r.config);
  j["dataset_source"] = r.dataset_source;
  j["malicious_clients"] = r.malicious_clients;
  j["baseline_accuracy"] =
      r.baseline_accuracy ? json(*r.baseline_accuracy) : json(nullptr);
  j["model_checksum"] = r.model_checksum;
  json history = json::array();
  for (const MetricsReport& m : r.history) history.push_back(report_to_json(m));
  j["history"] = std::move(history);
  return j;
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.config = config_from_json(j.at("config"));
  r.dataset_source = j.at("dataset_source").get<std::string>();
  r.malicious_clients = j.at("malicious_clients").get<std::vector<int>>();
  if (!j.at("baseline_accuracy").is_null()) {
    r.baseline_accuracy = j.at("baseline_accuracy").get<double>();
  }
  r.model_checksum = j.at("model_checksum").get<std::string>();
  for (const json& m : j.at("history")) r.history.push_back(report_from_json(m));
  if (r.history.empty()) {
    throw std::invalid_argument("record " + r.fingerprint + " has no history");
  }
  return r;
}

std::string config_fingerprint(const ExperimentConfig& config) {
  const std::string canonical = config_to_json(config).dump();
  return hex64(fnv1a(canonical.data(), canonical.size()));
}

std::string model_checksum(std::span<const Layer> layers) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Layer& l : layers) {
    for (const Tensor* t : {&l.weights, &l.biases}) {
      const auto values = t->data();
      h = fnv1a(values.data(), values.size_bytes(), h);
    }
  }
  return hex64(h);
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "md" || name == "markdown") return ReportFormat::kMarkdown;
  throw std::invalid_argument("unknown report format '" + std::string(name) +
                              "' (expected json|csv|md)");
}

std::string render_json(const std::vector<RunRecord>& records) {
  json j;
  j["schema"] = kReportSchema;
  json runs = json::array();
  for (const RunRecord& r : records) runs.push_back(record_to_json(r));
  j["runs"] = std::move(runs);
  json table = json::array();
  for (const GridRow& row : grid_rows(records)) {
    table.push_back(json{{"version", to_string(row.version)},
                         {"malicious_pct", row.malicious_pct},
                         {"attack", to_string(row.attack)},
                         {"accuracy", row.accuracy},
                         {"accuracy_drop", row.accuracy_drop}});
  }
  j["table"] = std::move(table);
  return j.dump(2) + "\n";
}

std::vector<RunRecord> parse_json_report(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("report is not valid JSON: ") + e.what());
  }
  if (j.value("schema", 0) != kReportSchema) {
    throw std::invalid_argument("unsupported report schema");
  }
  std::vector<RunRecord> out;
  for (const json& r : j.at("runs")) out.push_back(record_from_json(r));
  return out;
}

std::string render_csv(const std::vector<GridRow>& rows) {
  std::ostringstream out;
  out << "version,pct,attack,A,A_d\n";
  for (const GridRow& r : rows) {
    out << to_string(r.version) << ',' << r.malicious_pct << ','
        << to_string(r.attack) << ',' << fixed2(r.accuracy) << ','
        << fixed2(r.accuracy_drop) << '\n';
  }
  return out.str();
}

std::string render_prf_csv(const std::vector<RunRecord>& records) {
  std::ostringstream out;
  out << "version,pct,attack,class,P,R,F\n";
  for (const RunRecord& r : records) {
    const auto& prf = r.final_report().per_class;
    const std::string attack =
        r.malicious_clients.empty() ? "none" : to_string(r.config.attack);
    for (std::size_t c = 0; c < prf.size(); ++c) {
      out << to_string(r.config.model_version) << ',' << r.config.malicious_pct
          << ',' << attack << ',' << c << ',' << fixed4(prf[c].precision) << ','
          << fixed4(prf[c].recall) << ',' << fixed4(prf[c].fscore) << '\n';
    }
  }
  return out.str();
}

std::string render_markdown(const std::vector<RunRecord>& records,
                            const std::vector<GridRow>& rows) {
  std::ostringstream out;
  out << "| version | pct | attack | A | A_d |\n"
      << "|---|---:|---|---:|---:|\n";
  for (const GridRow& r : rows) {
    out << "| " << to_string(r.version) << " | " << r.malicious_pct << " | "
        << to_string(r.attack) << " | " << fixed2(r.accuracy) << " | "
        << fixed2(r.accuracy_drop) << " |\n";
  }

  // Per-class P/R/F, one table per version with a column group per run.
  std::map<std::string, std::vector<const RunRecord*>> by_version;
  for (const RunRecord& r : records) {
    by_version[to_string(r.config.model_version)].push_back(&r);
  }
  for (const auto& [version, runs] : by_version) {
    out << "\n### " << version << " per-class P / R / F\n\n| class |";
    for (const RunRecord* r : runs) out << ' ' << record_label(*r) << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < runs.size(); ++i) out << "---|";
    out << '\n';
    const std::size_t classes = runs.front()->final_report().per_class.size();
    for (std::size_t c = 0; c < classes; ++c) {
      out << "| " << c << " |";
      for (const RunRecord* r : runs) {
        const ClassScores& s = r->final_report().per_class.at(c);
        out << ' ' << fixed2(s.precision) << " / " << fixed2(s.recall) << " / "
            << fixed2(s.fscore) << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp + ": " + std::strerror(errno));
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw std::runtime_error("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

void prepare_output_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory " + out_dir + ": " +
                             ec.message());
  }
}

void emit_report(const std::vector<RunRecord>& records,
                 const std::vector<GridRow>& rows, const std::string& out_dir,
                 const std::vector<ReportFormat>& formats) {
  prepare_output_dir(out_dir);
  const fs::path dir(out_dir);
  for (ReportFormat f : formats) {
    switch (f) {
      case ReportFormat::kJson:
        write_file_atomic((dir / "report.json").string(), render_json(records));
        break;
      case ReportFormat::kCsv:
        write_file_atomic((dir / "table.csv").string(), render_csv(rows));
        write_file_atomic((dir / "prf.csv").string(), render_prf_csv(records));
        break;
      case ReportFormat::kMarkdown:
        write_file_atomic((dir / "table.md").string(), render_markdown(records, rows));
        break;
    }
  }
  json timing = json::array();
  for (const RunRecord& r : records) {
    timing.push_back(json{{"fingerprint", r.fingerprint},
                          {"duration_seconds", r.duration_seconds}});
  }
  write_file_atomic((dir / "timing.json").string(), timing.dump(2) + "\n");
}

}  // namespace sflpl
