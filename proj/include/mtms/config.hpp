#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtms/aggregator.hpp"
#include "mtms/phantom.hpp"
#include "mtms/student.hpp"
#include "mtms/teacher.hpp"

namespace mtms {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AblationSuiteConfig {
  /// Source-teacher index sets; empty means every leave-one-out subset.
  std::vector<std::vector<int>> teacher_subsets;
  /// (prior epochs, fine-tune epochs) pairs.
  std::vector<std::pair<int, int>> epoch_grid{{20, 10}, {40, 20}, {60, 30}};
  int labelled_size = 64;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<DomainParams> domains;  // domain_id = position
  int target_index = -1;
  CorruptionRanges corruption;
  int samples_per_class = 0;
  double test_fraction = 0.2;
  int folds = 5;

  ModelConfig model;
  AggregatorConfig aggregator;
  TeacherTrainConfig teacher;
  PriorConfig prior;
  FineTuneConfig finetune;
  std::vector<int> labelled_sizes{32, 64};
  AblationFlags ablation;
  AblationSuiteConfig suite;

  std::filesystem::path output_dir = "mtms_out";
  int jobs = 1;

  const DomainParams& target() const { return domains.at(static_cast<std::size_t>(target_index)); }
  /// Source domain indices in configuration order.
  std::vector<int> source_indices() const;
};

/// Parses and validates; errors name the offending key. Required keys: seed,
/// domains, corruption, samples_per_class.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Complete (defaults filled in) representation; config_from_json() inverts it.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Throws ConfigError on violated invariants.
void validate(const ExperimentConfig& cfg);

}  // namespace mtms
