#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtms/metrics.hpp"

namespace mtms {

/// One evaluated dataset: per-fold metrics and their mean and population std.
struct DatasetResult {
  std::string dataset;
  bool target = false;
  std::vector<MetricSet> folds;
  MetricSet mean;
  MetricSet std;

  bool operator==(const DatasetResult&) const = default;
};

/// One evaluated model (a teacher or a student run) across datasets.
struct ModelResult {
  std::string model;
  std::string kind;       // "teacher", "da_teacher" or "student"
  int labelled_size = 0;  // students only
  nlohmann::json settings = nlohmann::json::object();  // ablation flags, schedule, bank
  std::vector<DatasetResult> datasets;

  bool operator==(const ModelResult&) const = default;
};

struct RunReport {
  std::string experiment;
  nlohmann::json config = nlohmann::json::object();  // effective configuration snapshot
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> fold_seeds;
  std::vector<ModelResult> models;
  /// Not serialized: reports must be byte-identical across repeats, so timing
  /// is written beside them instead.
  double wall_clock_seconds = 0.0;

  bool operator==(const RunReport& o) const {
    return experiment == o.experiment && config == o.config && seed == o.seed && fold_seeds == o.fold_seeds &&
           models == o.models;
  }

  const ModelResult* find(const std::string& model, int labelled_size = -1) const;
};

/// Recomputes mean/std of every DatasetResult from its folds.
void finalize(RunReport& report);

nlohmann::json to_json(const MetricSet& m);
MetricSet metric_set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

/// Canonical text (2-space indent, trailing newline).
std::string dump_report(const RunReport& report);
void write_report(const std::filesystem::path& path, const RunReport& report);
RunReport read_report(const std::filesystem::path& path);

/// Flat comparison table: one row per (model, labelled size, dataset).
void write_report_csv(const std::filesystem::path& path, const std::vector<RunReport>& reports);

}  // namespace mtms
