#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtms/dataset.hpp"
#include "mtms/nn/networks.hpp"

namespace mtms {

struct ModelConfig {
  nn::EncoderConfig encoder;
  int classifier_hidden = 128;  // scaled with the embedding dimension by default
  int domain_hidden = 100;
};

nlohmann::json model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TeacherTrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double grl_lambda = 1.0;
  std::uint64_t seed = 0;
};

struct Prediction {
  float probability = 0.0f;
  int label = 0;  // probability >= 0.5 -> 1
};

inline int threshold_label(float probability) { return probability >= 0.5f ? 1 : 0; }

/// Read-only view of a trained network as the distillatory sees it. Real
/// teachers and test stubs both implement it.
class FrozenTeacher {
 public:
  virtual ~FrozenTeacher() = default;
  virtual const std::string& name() const = 0;
  virtual int embedding_dim() const = 0;
  virtual bool frozen() const = 0;
  /// Embeddings, embedding_dim x batch.
  virtual nn::Mat<float> embed(const nn::FeatureMap<float>& batch) const = 0;
  /// Label probabilities, 1 x batch.
  virtual nn::Mat<float> predict_proba(const nn::FeatureMap<float>& batch) const = 0;
  virtual std::string checksum() const = 0;
};

Eigen::VectorXf embed(const FrozenTeacher& t, const Image& image);
Prediction predict(const FrozenTeacher& t, const Image& image);

/// Embeddings (d x n) of many samples, computed in chunks.
nn::Mat<float> embed_samples(const FrozenTeacher& t, std::span<const Sample> samples);
std::vector<Prediction> predict_samples(const FrozenTeacher& t, std::span<const Sample> samples);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
  std::optional<double> domain_loss;
  std::optional<double> domain_accuracy;
};

using TrainingLog = std::vector<EpochLog>;

/// T_j: encoder plus label classifier. Training mutates it; after freeze()
/// embed/predict are available and the parameters never change again.
class TeacherModel : public FrozenTeacher {
 public:
  TeacherModel() = default;
  TeacherModel(std::string name, const ModelConfig& cfg);

  void init(Rng& rng);
  void freeze() { frozen_ = true; }
  bool frozen() const override { return frozen_; }
  const ModelConfig& config() const { return cfg_; }

  const std::string& name() const override { return name_; }
  int embedding_dim() const override { return cfg_.encoder.embedding_dim; }
  nn::Mat<float> embed(const nn::FeatureMap<float>& batch) const override;
  nn::Mat<float> predict_proba(const nn::FeatureMap<float>& batch) const override;
  std::string checksum() const override;

  nn::Encoder<float>& encoder() { return encoder_; }
  nn::MlpHead<float>& classifier() { return classifier_; }
  virtual void collect(nn::ParameterSet<float>& set);
  nn::ParameterSet<float> parameters();

  nlohmann::json metadata;  // source domains, config, final metrics

 protected:
  void require_frozen() const;

  std::string name_;
  ModelConfig cfg_;
  nn::Encoder<float> encoder_;
  nn::MlpHead<float> classifier_;
  bool frozen_ = false;
};

/// T_DA: a teacher with an additional adversarial domain classifier behind a
/// gradient-reversal junction.
class DATeacher : public TeacherModel {
 public:
  DATeacher() = default;
  DATeacher(std::string name, const ModelConfig& cfg, int domains, double grl_lambda);

  void init(Rng& rng);
  nn::DomainHead<float>& domain_classifier() { return domain_head_; }
  int domains() const { return domain_head_.domains(); }
  /// Domain log-probabilities, domains x batch (evaluation mode).
  nn::Mat<float> domain_log_probs(const nn::FeatureMap<float>& batch) const;
  void collect(nn::ParameterSet<float>& set) override;

 private:
  nn::DomainHead<float> domain_head_;
};

/// Sets the encoder's batch-norm running estimates to the average statistics of
/// `batches` under the current weights.
void recalibrate_batchnorm(nn::Encoder<float>& encoder, std::span<const Sample> samples,
                           const std::vector<std::vector<std::size_t>>& batches);

template <typename Model>
struct Trained {
  Model model;
  TrainingLog log;
};

/// Supervised BCE training on one labelled domain; returns a frozen teacher.
/// When `eval` is given, its accuracy (evaluation mode) is logged per epoch.
Trained<TeacherModel> train_teacher(const Dataset& train, const TeacherTrainConfig& cfg, const ModelConfig& model_cfg,
                                    const Dataset* eval = nullptr);

/// Joint label BCE + domain NLL (through gradient reversal) over several domains.
/// Domain k of the head is datasets[k]. Batches interleave domains round-robin.
Trained<DATeacher> train_da_teacher(std::span<const Dataset> datasets, const TeacherTrainConfig& cfg,
                                    const ModelConfig& model_cfg);

/// Accuracy of threshold_label(predict) against sample labels (all must be labelled).
double teacher_accuracy(const FrozenTeacher& t, std::span<const Sample> samples);

void save_teacher(TeacherModel& t, const std::filesystem::path& stem);
/// Restores a TeacherModel or DATeacher (by metadata) in frozen state.
std::shared_ptr<TeacherModel> load_teacher(const std::filesystem::path& stem);

}  // namespace mtms
