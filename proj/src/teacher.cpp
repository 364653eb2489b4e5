#include "mtms/teacher.hpp"

#include <stdexcept>

#include "mtms/batching.hpp"
#include "mtms/checkpoint.hpp"
#include "mtms/nn/adam.hpp"
#include "mtms/nn/loss.hpp"

namespace mtms {

using nlohmann::json;

namespace {

constexpr std::size_t kInferenceChunk = 256;

nn::FeatureMap<float> single(const Image& image) {
  std::vector<Image> one{image};
  return nn::images_to_map<float>(one);
}

void check_model_config(const ModelConfig& cfg) {
  const int blocks = static_cast<int>(cfg.encoder.channels.size()) + 1;
  if (cfg.encoder.embedding_dim < 1 || cfg.classifier_hidden < 1 || blocks < 1) {
    throw std::invalid_argument("model config: dimensions must be positive");
  }
}

void check_train_config(const TeacherTrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 2 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("teacher config: epochs >= 0, batch_size >= 2 and learning_rate > 0 required");
  }
}

int count_correct(const nn::Mat<float>& logits, std::span<const int> labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const float p = 1.0f / (1.0f + std::exp(-logits(0, i)));
    correct += threshold_label(p) == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return correct;
}

// Same computation as teacher_accuracy(), usable while the model still trains.
double unfrozen_accuracy(TeacherModel& model, std::span<const Sample> samples) {
  std::size_t correct = 0;
  const auto order = index_order(samples.size(), nullptr);
  for (std::size_t i = 0; i < samples.size(); i += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, samples.size() - i);
    const auto idx = std::span(order).subspan(i, n);
    const auto probs = model.classifier().probabilities(model.encoder().embed(batch_map(samples, idx)));
    const auto labels = batch_labels(samples, idx);
    for (std::size_t k = 0; k < n; ++k) correct += threshold_label(probs(0, static_cast<Eigen::Index>(k))) == labels[k] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

json model_config_json(const ModelConfig& cfg) {
  return {{"channels", cfg.encoder.channels},
          {"embedding_dim", cfg.encoder.embedding_dim},
          {"classifier_hidden", cfg.classifier_hidden},
          {"domain_hidden", cfg.domain_hidden}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.encoder.channels = j.at("channels").get<std::vector<int>>();
  cfg.encoder.embedding_dim = j.at("embedding_dim").get<int>();
  cfg.classifier_hidden = j.at("classifier_hidden").get<int>();
  cfg.domain_hidden = j.at("domain_hidden").get<int>();
  return cfg;
}

Eigen::VectorXf embed(const FrozenTeacher& t, const Image& image) { return t.embed(single(image)).col(0); }

Prediction predict(const FrozenTeacher& t, const Image& image) {
  const float p = t.predict_proba(single(image))(0, 0);
  return {p, threshold_label(p)};
}

nn::Mat<float> embed_samples(const FrozenTeacher& t, std::span<const Sample> samples) {
  nn::Mat<float> out(t.embedding_dim(), static_cast<Eigen::Index>(samples.size()));
  const auto order = index_order(samples.size(), nullptr);
  for (std::size_t i = 0; i < samples.size(); i += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, samples.size() - i);
    out.middleCols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) =
        t.embed(batch_map(samples, std::span(order).subspan(i, n)));
  }
  return out;
}

std::vector<Prediction> predict_samples(const FrozenTeacher& t, std::span<const Sample> samples) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  const auto order = index_order(samples.size(), nullptr);
  for (std::size_t i = 0; i < samples.size(); i += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, samples.size() - i);
    const auto probs = t.predict_proba(batch_map(samples, std::span(order).subspan(i, n)));
    for (Eigen::Index k = 0; k < probs.cols(); ++k) out.push_back({probs(0, k), threshold_label(probs(0, k))});
  }
  return out;
}

double teacher_accuracy(const FrozenTeacher& t, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("teacher_accuracy: no samples");
  const auto preds = predict_samples(t, samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw std::invalid_argument("teacher_accuracy: unlabelled sample");
    correct += preds[i].label == *samples[i].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------

TeacherModel::TeacherModel(std::string name, const ModelConfig& cfg)
    : name_(std::move(name)),
      cfg_(cfg),
      encoder_(cfg.encoder, name_ + ".enc"),
      classifier_(cfg.encoder.embedding_dim, cfg.classifier_hidden, name_ + ".cls") {
  check_model_config(cfg);
}

void TeacherModel::init(Rng& rng) {
  encoder_.init(rng);
  classifier_.init(rng);
}

void TeacherModel::require_frozen() const {
  if (!frozen_) throw std::logic_error("teacher " + name_ + " must be frozen before use as a teacher");
}

nn::Mat<float> TeacherModel::embed(const nn::FeatureMap<float>& batch) const {
  require_frozen();
  return encoder_.embed(batch);
}

nn::Mat<float> TeacherModel::predict_proba(const nn::FeatureMap<float>& batch) const {
  require_frozen();
  return classifier_.probabilities(encoder_.embed(batch));
}

std::string TeacherModel::checksum() const {
  // Read-only traversal; collect() needs mutable access to build the view.
  return parameter_checksum(const_cast<TeacherModel*>(this)->parameters());
}

void TeacherModel::collect(nn::ParameterSet<float>& set) {
  encoder_.collect(set);
  classifier_.collect(set);
}

nn::ParameterSet<float> TeacherModel::parameters() {
  nn::ParameterSet<float> set;
  collect(set);
  return set;
}

DATeacher::DATeacher(std::string name, const ModelConfig& cfg, int domains, double grl_lambda)
    : TeacherModel(std::move(name), cfg),
      domain_head_(cfg.encoder.embedding_dim, cfg.domain_hidden, domains, grl_lambda, name_ + ".dom") {}

void DATeacher::init(Rng& rng) {
  TeacherModel::init(rng);
  domain_head_.init(rng);
}

nn::Mat<float> DATeacher::domain_log_probs(const nn::FeatureMap<float>& batch) const {
  require_frozen();
  return domain_head_.log_probs(encoder_.embed(batch));
}

void DATeacher::collect(nn::ParameterSet<float>& set) {
  TeacherModel::collect(set);
  domain_head_.collect(set);
}

// ---------------------------------------------------------------------------

void recalibrate_batchnorm(nn::Encoder<float>& encoder, std::span<const Sample> samples,
                           const std::vector<std::vector<std::size_t>>& batches) {
  std::vector<nn::FeatureMap<float>> maps;
  maps.reserve(batches.size());
  for (const auto& b : batches) maps.push_back(batch_map(samples, b));
  encoder.recalibrate(maps);
}

Trained<TeacherModel> train_teacher(const Dataset& train, const TeacherTrainConfig& cfg, const ModelConfig& model_cfg,
                                    const Dataset* eval) {
  check_train_config(cfg);
  const auto counts = train.class_counts();
  if (counts[0] == 0 || counts[1] == 0) {
    throw std::invalid_argument("train_teacher: dataset " + train.name + " must contain both classes");
  }
  if (counts[0] + counts[1] != train.size()) throw std::invalid_argument("train_teacher: unlabelled samples in " + train.name);

  Trained<TeacherModel> out{TeacherModel("T_" + train.name, model_cfg), {}};
  auto& model = out.model;
  Rng init_rng = make_rng(cfg.seed, Stream::kTeacherInit);
  model.init(init_rng);
  const auto params = model.parameters();
  nn::AdamState<float> adam(params, {cfg.learning_rate});
  Rng shuffle_rng = make_rng(cfg.seed, Stream::kTeacherShuffle);
  const std::span<const Sample> samples(train.samples);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int correct = 0;
    const auto batches = chunk(index_order(samples.size(), &shuffle_rng), cfg.batch_size);
    for (const auto& b : batches) {
      const auto labels = batch_labels(samples, b);
      params.zero_grad();
      const auto features = model.encoder().forward(batch_map(samples, b), nn::Mode::kTrain);
      const auto logits = model.classifier().forward(features);
      const auto loss = nn::sigmoid_bce_loss<float>(logits, labels);
      model.encoder().backward(model.classifier().backward(loss.grad));
      nn::adam_step(params, adam);
      loss_sum += loss.value;
      correct += count_correct(logits, labels);
    }
    recalibrate_batchnorm(model.encoder(), samples, batches);
    EpochLog log;
    log.epoch = epoch + 1;
    log.loss = loss_sum / static_cast<double>(batches.size());
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    if (eval) log.eval_accuracy = unfrozen_accuracy(model, eval->samples);
    out.log.push_back(log);
  }
  model.freeze();
  model.metadata = {{"kind", "teacher"},
                    {"name", model.name()},
                    {"source_domains", {train.name}},
                    {"model", model_config_json(model_cfg)},
                    {"train", {{"epochs", cfg.epochs}, {"batch_size", cfg.batch_size},
                               {"learning_rate", cfg.learning_rate}, {"seed", cfg.seed}}}};
  return out;
}

Trained<DATeacher> train_da_teacher(std::span<const Dataset> datasets, const TeacherTrainConfig& cfg,
                                    const ModelConfig& model_cfg) {
  check_train_config(cfg);
  if (datasets.size() < 2) throw std::invalid_argument("train_da_teacher: need at least 2 source domains");
  for (const auto& ds : datasets) {
    const auto c = ds.class_counts();
    if (c[0] + c[1] != ds.size() || ds.empty()) {
      throw std::invalid_argument("train_da_teacher: dataset " + ds.name + " must be fully labelled");
    }
  }

  const int k = static_cast<int>(datasets.size());
  Trained<DATeacher> out{DATeacher("T_DA", model_cfg, k, cfg.grl_lambda), {}};
  auto& model = out.model;
  Rng init_rng = make_rng(cfg.seed, Stream::kTeacherInit);
  model.init(init_rng);
  const auto params = model.parameters();
  nn::AdamState<float> adam(params, {cfg.learning_rate});
  Rng shuffle_rng = make_rng(cfg.seed, Stream::kTeacherShuffle);

  // Flattened view: pool[i] = (domain, sample).
  std::vector<Sample> pool;
  std::vector<int> domain_of;
  for (int d = 0; d < k; ++d) {
    for (const auto& s : datasets[static_cast<std::size_t>(d)].samples) {
      pool.push_back(s);
      domain_of.push_back(d);
    }
  }
  const std::span<const Sample> samples(pool);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Round-robin interleave of independently shuffled domains.
    std::vector<std::vector<std::size_t>> per_domain(static_cast<std::size_t>(k));
    std::size_t base = 0;
    for (int d = 0; d < k; ++d) {
      auto order = index_order(datasets[static_cast<std::size_t>(d)].size(), &shuffle_rng);
      for (auto& i : order) i += base;
      base += datasets[static_cast<std::size_t>(d)].size();
      per_domain[static_cast<std::size_t>(d)] = std::move(order);
    }
    std::vector<std::size_t> order;
    for (std::size_t pos = 0; order.size() < pool.size(); ++pos) {
      for (const auto& dom : per_domain) {
        if (pos < dom.size()) order.push_back(dom[pos]);
      }
    }

    double loss_sum = 0.0, dom_loss_sum = 0.0;
    int correct = 0, dom_correct = 0;
    const auto batches = chunk(order, cfg.batch_size);
    for (const auto& b : batches) {
      const auto labels = batch_labels(samples, b);
      std::vector<int> domains;
      for (std::size_t i : b) domains.push_back(domain_of[i]);
      params.zero_grad();
      const auto features = model.encoder().forward(batch_map(samples, b), nn::Mode::kTrain);
      const auto logits = model.classifier().forward(features);
      const auto log_probs = model.domain_classifier().forward(features, nn::Mode::kTrain);
      const auto label_loss = nn::sigmoid_bce_loss<float>(logits, labels);
      const auto domain_loss = nn::nll_loss<float>(log_probs, domains);
      const nn::Mat<float> d_features =
          model.classifier().backward(label_loss.grad) + model.domain_classifier().backward(domain_loss.grad);
      model.encoder().backward(d_features);
      nn::adam_step(params, adam);

      loss_sum += label_loss.value;
      dom_loss_sum += domain_loss.value;
      correct += count_correct(logits, labels);
      for (Eigen::Index i = 0; i < log_probs.cols(); ++i) {
        Eigen::Index arg = 0;
        log_probs.col(i).maxCoeff(&arg);
        dom_correct += arg == domains[static_cast<std::size_t>(i)] ? 1 : 0;
      }
    }
    recalibrate_batchnorm(model.encoder(), samples, batches);
    EpochLog log;
    log.epoch = epoch + 1;
    log.loss = loss_sum / static_cast<double>(batches.size());
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(pool.size());
    log.domain_loss = dom_loss_sum / static_cast<double>(batches.size());
    log.domain_accuracy = static_cast<double>(dom_correct) / static_cast<double>(pool.size());
    out.log.push_back(log);
  }
  model.freeze();
  json sources = json::array();
  for (const auto& ds : datasets) sources.push_back(ds.name);
  model.metadata = {{"kind", "da_teacher"},
                    {"name", model.name()},
                    {"source_domains", sources},
                    {"domains", k},
                    {"grl_lambda", cfg.grl_lambda},
                    {"model", model_config_json(model_cfg)},
                    {"train", {{"epochs", cfg.epochs}, {"batch_size", cfg.batch_size},
                               {"learning_rate", cfg.learning_rate}, {"seed", cfg.seed}}}};
  return out;
}

void save_teacher(TeacherModel& t, const std::filesystem::path& stem) {
  if (!t.frozen()) throw std::logic_error("save_teacher: teacher " + t.name() + " is not frozen");
  save_checkpoint(t.parameters(), stem, t.metadata);
}

std::shared_ptr<TeacherModel> load_teacher(const std::filesystem::path& stem) {
  const json meta = read_checkpoint_metadata(stem);
  const auto cfg = model_config_from_json(meta.at("model"));
  const auto name = meta.at("name").get<std::string>();
  std::shared_ptr<TeacherModel> t;
  if (meta.at("kind").get<std::string>() == "da_teacher") {
    t = std::make_shared<DATeacher>(name, cfg, meta.at("domains").get<int>(), meta.at("grl_lambda").get<double>());
  } else {
    t = std::make_shared<TeacherModel>(name, cfg);
  }
  auto params = t->parameters();
  load_checkpoint(params, stem);
  t->metadata = meta;
  t->freeze();
  return t;
}

}  // namespace mtms
