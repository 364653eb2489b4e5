#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtms/aggregator.hpp"
#include "mtms/distillatory.hpp"
#include "mtms/teacher.hpp"

namespace mtms {

struct PriorConfig {
  int epochs = 40;
  int batch_size = 128;
  double learning_rate = 1e-3;
  int query_batch = 32;  // epoch-end labelled pass uses min(N', query_batch)
  std::uint64_t seed = 0;
};

struct FineTuneConfig {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
};

struct AblationFlags {
  bool exclude_da_teacher = false;
  bool exclude_filter = false;
  std::vector<int> teacher_subset;  // empty = all source teachers
  bool mask_da_teacher = true;      // whether F may mask the T_DA token
};

/// f_theta (encoder producing e_ST) and c_theta (classifier head).
class StudentModel {
 public:
  StudentModel() = default;
  explicit StudentModel(const ModelConfig& cfg);

  void init(Rng& rng);
  const ModelConfig& config() const { return cfg_; }
  int embedding_dim() const { return cfg_.encoder.embedding_dim; }

  nn::Encoder<float>& encoder() { return encoder_; }
  const nn::Encoder<float>& encoder() const { return encoder_; }
  nn::MlpHead<float>& classifier() { return classifier_; }
  const nn::MlpHead<float>& classifier() const { return classifier_; }

  /// Evaluation-mode e_ST (d x batch) and probabilities (1 x batch).
  nn::Mat<float> embed(const nn::FeatureMap<float>& batch) const { return encoder_.embed(batch); }
  nn::Mat<float> predict_proba(const nn::FeatureMap<float>& batch) const;

  nn::ParameterSet<float> encoder_parameters();
  nn::ParameterSet<float> classifier_parameters();
  nn::ParameterSet<float> parameters();
  std::string encoder_checksum() const;
  std::string classifier_checksum() const;

 private:
  ModelConfig cfg_;
  nn::Encoder<float> encoder_;
  nn::MlpHead<float> classifier_;
};

Prediction student_predict(const StudentModel& student, const Image& image);
std::vector<Prediction> student_predict_samples(const StudentModel& student, std::span<const Sample> samples);

struct PriorEpoch {
  int epoch = 0;
  double distill_loss = 0.0;     // mean per-sample ||e_KD - e_ST||
  double query_bce_theta = 0.0;  // mean over query batches
  double query_bce_phi = 0.0;
};

struct FineTuneEpoch {
  int epoch = 0;
  double bce = 0.0;
  double labelled_accuracy = 0.0;  // evaluation mode, after the epoch
};

enum class PriorPhase { kDistillBatch, kQueryBatch };

/// Observer hook for instrumented runs: called after every optimizer update.
struct PriorProbe {
  PriorPhase phase;
  int epoch;
  int batch;
  const StudentModel& student;
  const Aggregator<float>& aggregator;
};
using PriorObserver = std::function<void(const PriorProbe&)>;

struct PriorResult {
  StudentModel student;
  Aggregator<float> aggregator;
  std::vector<PriorEpoch> history;
};

/// Prior stage. Per mini-batch of D_S: e_KD (masked by F for labelled samples
/// when use_filter) is a constant target and only theta is updated from the
/// summed distillation loss. After each epoch, D_S^Labelled is the query set:
/// BCE through c_theta updates (theta, c_theta) and BCE through c_phi updates
/// (phi, c_phi), each with its own optimizer.
PriorResult prior_train(const TeacherBank& bank, Aggregator<float> aggregator, StudentModel student,
                        const TargetPartition& target, const PriorConfig& cfg, bool use_filter = true,
                        const FilterOptions& filter_opts = {}, const PriorObserver& observer = {});

struct FineTuneResult {
  StudentModel student;
  std::vector<FineTuneEpoch> history;
};

/// BCE-only training of (theta, c_theta) on the labelled set with a fresh optimizer.
/// Batch-norm estimates are refreshed after every epoch from `calibration`
/// (images only; labels unused), or from the labelled set when it is empty.
FineTuneResult fine_tune(StudentModel student, std::span<const Sample> labelled, const FineTuneConfig& cfg,
                         std::span<const Sample> calibration = {});

struct StudentRun {
  StudentModel student;
  Aggregator<float> aggregator;
  std::vector<std::string> bank_names;
  std::vector<PriorEpoch> prior_history;
  std::vector<FineTuneEpoch> finetune_history;
};

/// Bank as modified by the ablation flags.
TeacherBank apply_ablation(const TeacherBank& bank, const AblationFlags& flags);

/// Algorithm end to end: fresh student and aggregator from `seed`, prior stage,
/// then fine-tuning.
StudentRun train_student(const TeacherBank& bank, const TargetPartition& target, const ModelConfig& model_cfg,
                         const AggregatorConfig& agg_cfg, const PriorConfig& prior_cfg,
                         const FineTuneConfig& finetune_cfg, const AblationFlags& flags, std::uint64_t seed);

void save_student(StudentModel& student, const std::filesystem::path& stem, const nlohmann::json& metadata);
StudentModel load_student(const std::filesystem::path& stem);

}  // namespace mtms
