#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace arlab {

// Reproducible experiments. Each one generates its own seeded data, runs, and
// returns a JSON report; pass/fail comes only from the thresholds carried in
// the config.

inline constexpr int kReportSchemaVersion = 1;

/// compile-verify | parity-train | parity-sweep | mult-train | grad-check
const std::vector<std::string>& experiment_names();

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: nothing written
  /// Experiment parameters; missing keys take the defaults of
  /// default_params(name), unknown keys are rejected.
  nlohmann::json params = nlohmann::json::object();
  /// {"metric.path": {"min": x} | {"max": y}} over the report metrics.
  nlohmann::json thresholds = nlohmann::json::object();

  /// Requires "experiment" and "seed". Throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Defaults for every parameter of an experiment (ConfigError if unknown).
nlohmann::json default_params(const std::string& name);

struct ThresholdCheck {
  std::string metric;
  std::string op;  // "min" or "max"
  double threshold = 0.0;
  double value = 0.0;
  bool pass = false;
};

struct ExperimentReport {
  int schema_version = kReportSchemaVersion;
  std::string experiment;
  nlohmann::json config;   // echo with defaults filled in
  nlohmann::json metrics;  // deterministic given the config
  std::vector<ThresholdCheck> checks;
  bool pass = true;
  double seconds = 0.0;    // wall clock, excluded from metrics

  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
};

/// Checks every threshold against `metrics` (dotted paths). ConfigError when
/// a threshold names a missing or non-numeric metric or a bad operator.
std::vector<ThresholdCheck> evaluate_thresholds(const nlohmann::json& metrics, const nlohmann::json& thresholds);

/// Runs the experiment. Progress lines go to `log` when given. Writes
/// report.json (and any checkpoints) into out_dir when set. Throws
/// ConfigError for bad configs and IOError for unreadable inputs or an
/// unwritable output directory.
ExperimentReport run(const ExperimentConfig& config, std::ostream* log = nullptr);

/// Reads a config file (JSON). Throws IOError / ConfigError.
ExperimentConfig load_experiment_config(const std::string& path);
void write_report(const ExperimentReport& report, const std::string& path);
ExperimentReport read_report(const std::string& path);

enum class TableFormat { kCsv, kMarkdown };

/// One table for reports of a single experiment type. Column order is fixed
/// per type; rows are sorted by the type's primary parameter. An empty input
/// gives a header-only table: that of `name` if given, else the generic
/// experiment,seed,pass header. Throws ConfigError on mixed types.
std::string report_table(const std::vector<ExperimentReport>& reports, TableFormat format = TableFormat::kCsv,
                         const std::string& name = "");

}  // namespace arlab
