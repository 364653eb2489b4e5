#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtms/config.hpp"
#include "mtms/distillatory.hpp"
#include "mtms/report.hpp"
#include "mtms/student.hpp"
#include "mtms/teacher.hpp"

namespace mtms {

/// Runs fn(0..count-1) on up to `jobs` threads. Callers write results by index,
/// so the outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

/// Every configured domain, deterministic in the configuration.
std::vector<Dataset> generate_datasets(const ExperimentConfig& cfg);

/// One train/test split of every domain.
struct FoldData {
  int fold_id = 0;
  std::uint64_t seed = 0;  // experiment seed + fold_id
  int target_index = 0;
  std::vector<Dataset> train;
  std::vector<Dataset> test;
  std::vector<SplitSpec> splits;

  const Dataset& target_train() const { return train.at(static_cast<std::size_t>(target_index)); }
};

/// Stratified holdout split (test_fraction) of every domain; fold id 0.
FoldData holdout_fold(const ExperimentConfig& cfg, std::span<const Dataset> datasets);
/// k stratified folds of every domain; fold f tests on partition f of each domain.
std::vector<FoldData> cv_folds(const ExperimentConfig& cfg, std::span<const Dataset> datasets, int k);

struct TeacherSet {
  std::vector<std::shared_ptr<TeacherModel>> teachers;  // source order
  std::shared_ptr<DATeacher> da_teacher;                // null with a single source domain
  std::vector<TrainingLog> logs;
  TrainingLog da_log;

  TeacherBank bank() const;
};

/// N per-domain teachers plus T_DA on the fold's source training splits.
TeacherSet train_teacher_set(const ExperimentConfig& cfg, const FoldData& fold, int jobs = 1);

/// Target training split partitioned into labelled (n/2 per class) and
/// unlabelled. The labelled sets of different sizes are nested.
TargetPartition target_partition(const FoldData& fold, int labelled_size);

struct StudentSpec {
  std::string name = "student";
  int labelled_size = 64;
  AblationFlags flags;
  PriorConfig prior;
  FineTuneConfig finetune;
};

StudentSpec default_student_spec(const ExperimentConfig& cfg, int labelled_size);
nlohmann::json spec_json(const StudentSpec& spec);

StudentRun run_student(const ExperimentConfig& cfg, const FoldData& fold, const TeacherBank& bank,
                       const StudentSpec& spec);

/// Metrics of a model on every domain's test split (one fold).
ModelResult evaluate_teacher(const FrozenTeacher& teacher, const std::string& kind, const FoldData& fold);
ModelResult evaluate_student(const StudentModel& student, const StudentSpec& spec,
                             const std::vector<std::string>& bank_names, const FoldData& fold);

/// Appends per-fold results of a fold to the matching entries of `into`
/// (same order), or adopts them when `into` is empty.
void merge_fold(std::vector<ModelResult>& into, const std::vector<ModelResult>& fold_results);

RunReport make_report(const std::string& experiment, const ExperimentConfig& cfg,
                      std::span<const FoldData> folds, std::vector<ModelResult> models);

/// Full pipeline per fold (teachers, one student per labelled size) with
/// per-fold metrics and mean/std.
RunReport run_cv(const ExperimentConfig& cfg, int k);

/// Ablation cells over given folds and their teachers: full, exclude_F,
/// exclude_T_DA, exclude_both, every teacher subset and every epoch pair.
/// All cells share data, teachers and student seeds.
std::vector<RunReport> run_ablation_suite(const ExperimentConfig& cfg, std::span<const FoldData> folds,
                                          std::span<const TeacherSet> teachers);
/// Convenience overload: generates data, uses the holdout split and trains the teachers.
std::vector<RunReport> run_ablation_suite(const ExperimentConfig& cfg);

/// Ablation cell specs in suite order.
std::vector<StudentSpec> ablation_cells(const ExperimentConfig& cfg, int source_count, bool has_da_teacher);

/// CSV with header sample_id,domain_id,label,e0..e{d-1}; one row per sample,
/// blank label when unlabelled. `embeddings` is d x samples.
void export_embeddings(const nn::Mat<float>& embeddings, std::span<const Sample> samples,
                       const std::filesystem::path& path);
void export_embeddings(const FrozenTeacher& teacher, const Dataset& ds, const std::filesystem::path& path);
void export_embeddings(const StudentModel& student, const Dataset& ds, const std::filesystem::path& path);
/// Unmasked e_KD of the bank through the aggregator.
void export_embeddings(const TeacherBank& bank, const Aggregator<float>& aggregator, const Dataset& ds,
                       const std::filesystem::path& path);

}  // namespace mtms
