#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtms/config.hpp"
#include "mtms/dataset.hpp"
#include "mtms/teacher.hpp"

namespace mtms::testkit {

/// Image of the given size whose first pixel encodes `code` (code / 4096).
inline Image coded_image(int code, int size, Rng& rng) {
  Image img(size, size);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(uniform(rng, 0.0, 1.0));
  img(0, 0) = static_cast<float>(code) / 4096.0f;
  return img;
}

inline int image_code(const float* pixels) { return static_cast<int>(std::lround(pixels[0] * 4096.0f)); }

/// Labelled samples whose images carry their index as code.
inline std::vector<Sample> coded_samples(int n, int size, Rng& rng) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.image = coded_image(i, size, rng);
    s.label = static_cast<int>(uniform_int(rng, 0, 1));
    s.id = static_cast<std::uint32_t>(i);
    out.push_back(std::move(s));
  }
  return out;
}

/// Frozen teacher with scripted predictions: the sample with code c is
/// predicted as labels[c]. Embeddings are a fixed nonlinear function of the
/// pixels, distinct per teacher.
class StubTeacher : public FrozenTeacher {
 public:
  StubTeacher(std::string name, int dim, std::vector<int> labels, std::uint64_t salt = 0)
      : name_(std::move(name)), dim_(dim), labels_(std::move(labels)), salt_(salt) {}

  const std::string& name() const override { return name_; }
  int embedding_dim() const override { return dim_; }
  bool frozen() const override { return true; }

  nn::Mat<float> embed(const nn::FeatureMap<float>& batch) const override {
    const Eigen::Index hw = static_cast<Eigen::Index>(batch.height) * batch.width;
    nn::Mat<float> out(dim_, batch.batch);
    for (int n = 0; n < batch.batch; ++n) {
      const auto px = batch.data.middleCols(n * hw, hw);
      const float mean = px.mean();
      const float first = px(0, 0);
      for (int k = 0; k < dim_; ++k) {
        out(k, n) = std::abs(std::sin(static_cast<float>(k + 1 + salt_) * mean + first * static_cast<float>(k + salt_)));
      }
    }
    return out;
  }

  nn::Mat<float> predict_proba(const nn::FeatureMap<float>& batch) const override {
    const Eigen::Index hw = static_cast<Eigen::Index>(batch.height) * batch.width;
    nn::Mat<float> out(1, batch.batch);
    for (int n = 0; n < batch.batch; ++n) {
      const int code = image_code(batch.data.data() + n * hw);
      const int label = labels_.at(static_cast<std::size_t>(code));
      out(0, n) = label == 1 ? 0.9f : 0.1f;
    }
    return out;
  }

  std::string checksum() const override { return name_; }

 private:
  std::string name_;
  int dim_;
  std::vector<int> labels_;
  std::uint64_t salt_;
};

/// Small but complete experiment: two sources and a target at 16x16.
inline nlohmann::json tiny_config_json() {
  return nlohmann::json::parse(R"({
    "seed": 11,
    "samples_per_class": 20,
    "domains": [
      {"name": "bright", "gamma": 0.6, "ellipses_min": 0, "ellipses_max": 1, "image_size": 16},
      {"name": "grey", "gamma": 1.0, "background": 0.3, "contrast": 0.8, "ellipses_min": 0, "ellipses_max": 1,
       "image_size": 16},
      {"name": "target", "gamma": 0.5, "gamma_max": 1.8, "background": 0.0, "background_max": 0.35,
       "ellipses_min": 0, "ellipses_max": 1, "image_size": 16, "target": true}
    ],
    "corruption": {"axis": "rows", "shift_min": 2, "shift_max": 5, "frequency_min": 0.05, "frequency_max": 0.3,
                   "threshold_min": 0.3, "threshold_max": 0.7},
    "model": {"channels": [4], "embedding_dim": 8, "classifier_hidden": 8, "domain_hidden": 8},
    "aggregator": {"model_dim": 8, "blocks": 1, "heads": 2, "ff_dim": 16, "classifier_hidden": 8},
    "teacher": {"epochs": 2, "batch_size": 8, "learning_rate": 0.001, "grl_lambda": 0.1},
    "prior": {"epochs": 2, "batch_size": 16, "learning_rate": 0.001, "query_batch": 8},
    "finetune": {"epochs": 2, "batch_size": 8, "learning_rate": 0.0001},
    "labelled_sizes": [4, 8],
    "ablation_suite": {"epoch_grid": [[1, 1]], "labelled_size": 8},
    "folds": 3
  })");
}

inline ExperimentConfig tiny_config() { return config_from_json(tiny_config_json()); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mtms_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mtms::testkit
