#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtms/config.hpp"
#include "mtms/harness.hpp"

namespace mtms {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitMissing = 3, kExitRuntime = 4 };

/// An earlier stage's output is absent.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Outputs of the stage already exist and --force was not given.
class OutputExists : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool force = false;
  std::vector<int> labelled_sizes;  // replaces the configured list when non-empty
  std::optional<int> folds;         // cv only
};

/// Config file plus flag overrides; MTMS_OUT replaces the output directory.
ExperimentConfig effective_config(const CommandOptions& opts);

/// Output layout under the configured directory.
struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path teachers() const { return root / "teachers"; }
  std::filesystem::path students() const { return root / "students"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path embeddings() const { return root / "embeddings"; }
  std::filesystem::path log() const { return root / "log.txt"; }
};

void cmd_gen_data(const ExperimentConfig& cfg, bool force);
void cmd_train_teachers(const ExperimentConfig& cfg, bool force);
void cmd_train_student(const ExperimentConfig& cfg, bool force);
RunReport cmd_evaluate(const ExperimentConfig& cfg);
std::vector<RunReport> cmd_ablate(const ExperimentConfig& cfg);
void cmd_export_embeddings(const ExperimentConfig& cfg);
RunReport cmd_cv(const ExperimentConfig& cfg, int folds);

/// Loads persisted artefacts of earlier stages.
std::vector<Dataset> load_datasets(const ExperimentConfig& cfg);
TeacherSet load_teacher_set(const ExperimentConfig& cfg);

/// Runs one command and maps failures to exit codes, printing a message to `err`.
int run_command(const std::string& command, const CommandOptions& opts, std::ostream& err);

}  // namespace mtms
