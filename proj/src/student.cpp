#include "mtms/student.hpp"

#include <algorithm>
#include <stdexcept>

#include "mtms/batching.hpp"
#include "mtms/checkpoint.hpp"
#include "mtms/nn/adam.hpp"
#include "mtms/nn/loss.hpp"

namespace mtms {

using nlohmann::json;

StudentModel::StudentModel(const ModelConfig& cfg)
    : cfg_(cfg),
      encoder_(cfg.encoder, "student.enc"),
      classifier_(cfg.encoder.embedding_dim, cfg.classifier_hidden, "student.cls") {}

void StudentModel::init(Rng& rng) {
  encoder_.init(rng);
  classifier_.init(rng);
}

nn::Mat<float> StudentModel::predict_proba(const nn::FeatureMap<float>& batch) const {
  return classifier_.probabilities(encoder_.embed(batch));
}

nn::ParameterSet<float> StudentModel::encoder_parameters() {
  nn::ParameterSet<float> set;
  encoder_.collect(set);
  return set;
}

nn::ParameterSet<float> StudentModel::classifier_parameters() {
  nn::ParameterSet<float> set;
  classifier_.collect(set);
  return set;
}

nn::ParameterSet<float> StudentModel::parameters() {
  auto set = encoder_parameters();
  set.append(classifier_parameters());
  return set;
}

std::string StudentModel::encoder_checksum() const {
  return parameter_checksum(const_cast<StudentModel*>(this)->encoder_parameters());
}

std::string StudentModel::classifier_checksum() const {
  return parameter_checksum(const_cast<StudentModel*>(this)->classifier_parameters());
}

Prediction student_predict(const StudentModel& student, const Image& image) {
  std::vector<Image> one{image};
  const float p = student.predict_proba(nn::images_to_map<float>(one))(0, 0);
  return {p, threshold_label(p)};
}

std::vector<Prediction> student_predict_samples(const StudentModel& student, std::span<const Sample> samples) {
  constexpr std::size_t kChunk = 256;
  std::vector<Prediction> out;
  out.reserve(samples.size());
  const auto order = index_order(samples.size(), nullptr);
  for (std::size_t i = 0; i < samples.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - i);
    const auto probs = student.predict_proba(batch_map(samples, std::span(order).subspan(i, n)));
    for (Eigen::Index k = 0; k < probs.cols(); ++k) out.push_back({probs(0, k), threshold_label(probs(0, k))});
  }
  return out;
}

namespace {

TokenBatch<float> make_tokens(const std::vector<EmbeddingStack>& stacks, const std::vector<const FilterMask*>& masks,
                              const std::vector<std::size_t>& idx) {
  TokenBatch<float> batch;
  for (std::size_t i : idx) batch.add(stacks[i], masks[i] ? &masks[i]->keep : nullptr);
  return batch;
}

double bce_step(StudentModel& student, std::span<const Sample> samples, const std::vector<std::size_t>& idx,
                const nn::ParameterSet<float>& params, nn::AdamState<float>& adam) {
  const auto labels = batch_labels(samples, idx);
  params.zero_grad();
  const auto logits = student.classifier().forward(student.encoder().forward(batch_map(samples, idx), nn::Mode::kTrain));
  const auto loss = nn::sigmoid_bce_loss<float>(logits, labels);
  student.encoder().backward(student.classifier().backward(loss.grad));
  nn::adam_step(params, adam);
  return loss.value;
}

}  // namespace

PriorResult prior_train(const TeacherBank& bank, Aggregator<float> aggregator, StudentModel student,
                        const TargetPartition& target, const PriorConfig& cfg, bool use_filter,
                        const FilterOptions& filter_opts, const PriorObserver& observer) {
  if (target.labelled.empty()) throw std::invalid_argument("prior_train: empty labelled set (query step undefined)");
  if (cfg.epochs < 0 || cfg.batch_size < 2 || cfg.query_batch < 1 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("prior_train: invalid configuration");
  }
  if (student.embedding_dim() != bank.embedding_dim() || aggregator.config().embedding_dim != bank.embedding_dim()) {
    throw std::invalid_argument("prior_train: student d=" + std::to_string(student.embedding_dim()) + ", bank d=" +
                                std::to_string(bank.embedding_dim()));
  }
  if (aggregator.config().slots != bank.token_count()) {
    throw std::invalid_argument("prior_train: aggregator has " + std::to_string(aggregator.config().slots) +
                                " slots, bank has " + std::to_string(bank.token_count()) + " teachers");
  }
  for (const auto& s : target.labelled) {
    if (!s.label) throw std::invalid_argument("prior_train: labelled partition holds an unlabelled sample");
  }

  // D_S = labelled ++ unlabelled. Teachers are frozen, so stacks and masks are
  // computed once; e_KD itself is recomputed with the current aggregator.
  std::vector<Sample> pool = target.labelled;
  pool.insert(pool.end(), target.unlabelled.begin(), target.unlabelled.end());
  const std::span<const Sample> all(pool);
  const std::span<const Sample> labelled(target.labelled);
  const auto n_lab = target.labelled.size();

  const auto stacks = collect_embeddings(bank, all);
  const auto masks = use_filter ? filter_masks(bank, labelled, filter_opts) : std::vector<FilterMask>{};
  std::vector<const FilterMask*> mask_of(pool.size(), nullptr);
  for (std::size_t i = 0; i < masks.size(); ++i) mask_of[i] = &masks[i];

  PriorResult result{std::move(student), std::move(aggregator), {}};
  auto& st = result.student;
  auto& agg = result.aggregator;
  const auto theta = st.encoder_parameters();
  auto theta_c = st.encoder_parameters();
  theta_c.append(st.classifier_parameters());
  nn::ParameterSet<float> phi;
  agg.collect(phi);

  nn::AdamState<float> adam_distill(theta, {cfg.learning_rate});
  nn::AdamState<float> adam_query_student(theta_c, {cfg.learning_rate});
  nn::AdamState<float> adam_query_agg(phi, {cfg.learning_rate});
  Rng rng = make_rng(cfg.seed, Stream::kStudentShuffle);
  const int query_batch = std::min<int>(static_cast<int>(n_lab), cfg.query_batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    PriorEpoch log;
    log.epoch = epoch + 1;

    const auto batches = chunk(index_order(pool.size(), &rng), cfg.batch_size);
    int b_index = 0;
    for (const auto& b : batches) {
      const nn::Mat<float> e_kd = agg.aggregate(make_tokens(stacks, mask_of, b));
      theta.zero_grad();
      const auto e_st = st.encoder().forward(batch_map(all, b), nn::Mode::kTrain);
      const auto loss = nn::batch_distill_loss<float>(e_kd, e_st);
      st.encoder().backward(loss.grad);
      nn::adam_step(theta, adam_distill);
      log.distill_loss += loss.value;
      if (observer) observer({PriorPhase::kDistillBatch, epoch, b_index, st, agg});
      ++b_index;
    }
    log.distill_loss /= static_cast<double>(pool.size());
    recalibrate_batchnorm(st.encoder(), all, batches);

    const auto query = chunk(index_order(n_lab, &rng), query_batch, 1);
    b_index = 0;
    for (const auto& q : query) {
      log.query_bce_theta += bce_step(st, labelled, q, theta_c, adam_query_student);

      const auto labels = batch_labels(labelled, q);
      phi.zero_grad();
      const auto logits = agg.forward_logits(make_tokens(stacks, mask_of, q));
      const auto loss = nn::sigmoid_bce_loss<float>(logits, labels);
      agg.backward_logits(loss.grad);
      nn::adam_step(phi, adam_query_agg);
      log.query_bce_phi += loss.value;
      if (observer) observer({PriorPhase::kQueryBatch, epoch, b_index, st, agg});
      ++b_index;
    }
    log.query_bce_theta /= static_cast<double>(query.size());
    log.query_bce_phi /= static_cast<double>(query.size());
    result.history.push_back(log);
  }
  return result;
}

FineTuneResult fine_tune(StudentModel student, std::span<const Sample> labelled, const FineTuneConfig& cfg,
                         std::span<const Sample> calibration) {
  if (labelled.empty()) throw std::invalid_argument("fine_tune: empty labelled set");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("fine_tune: invalid configuration");
  }
  FineTuneResult result{std::move(student), {}};
  auto& st = result.student;
  const auto params = st.parameters();
  nn::AdamState<float> adam(params, {cfg.learning_rate});
  Rng rng = make_rng(cfg.seed, Stream::kStudentShuffle, 1);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    FineTuneEpoch log;
    log.epoch = epoch + 1;
    const auto batches = chunk(index_order(labelled.size(), &rng), cfg.batch_size);
    for (const auto& b : batches) log.bce += bce_step(st, labelled, b, params, adam);
    log.bce /= static_cast<double>(batches.size());
    if (calibration.empty()) {
      recalibrate_batchnorm(st.encoder(), labelled, batches);
    } else {
      recalibrate_batchnorm(st.encoder(), calibration, chunk(index_order(calibration.size(), &rng), cfg.batch_size));
    }
    const auto preds = student_predict_samples(st, labelled);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labelled.size(); ++i) correct += preds[i].label == *labelled[i].label ? 1 : 0;
    log.labelled_accuracy = static_cast<double>(correct) / static_cast<double>(labelled.size());
    result.history.push_back(log);
  }
  return result;
}

TeacherBank apply_ablation(const TeacherBank& bank, const AblationFlags& flags) {
  const int sources = bank.token_count() - (bank.has_da_teacher() ? 1 : 0);
  std::vector<int> chosen = flags.teacher_subset;
  if (chosen.empty()) {
    for (int i = 0; i < sources; ++i) chosen.push_back(i);
  }
  return bank.select(chosen, !flags.exclude_da_teacher);
}

StudentRun train_student(const TeacherBank& bank, const TargetPartition& target, const ModelConfig& model_cfg,
                         const AggregatorConfig& agg_cfg, const PriorConfig& prior_cfg,
                         const FineTuneConfig& finetune_cfg, const AblationFlags& flags, std::uint64_t seed) {
  const TeacherBank used = apply_ablation(bank, flags);
  if (model_cfg.encoder.embedding_dim != used.embedding_dim()) {
    throw std::invalid_argument("train_student: student d=" + std::to_string(model_cfg.encoder.embedding_dim) +
                                " differs from bank d=" + std::to_string(used.embedding_dim()));
  }
  AggregatorConfig acfg = agg_cfg;
  acfg.embedding_dim = used.embedding_dim();
  acfg.slots = used.token_count();

  StudentModel student(model_cfg);
  Rng student_rng = make_rng(seed, Stream::kStudentInit);
  student.init(student_rng);
  Aggregator<float> aggregator(acfg);
  Rng agg_rng = make_rng(seed, Stream::kAggregatorInit);
  aggregator.init(agg_rng);

  PriorConfig pc = prior_cfg;
  pc.seed = seed;
  FineTuneConfig fc = finetune_cfg;
  fc.seed = seed;
  FilterOptions fo;
  fo.mask_da_teacher = flags.mask_da_teacher;

  auto prior = prior_train(used, std::move(aggregator), std::move(student), target, pc, !flags.exclude_filter, fo);
  std::vector<Sample> pool = target.labelled;
  pool.insert(pool.end(), target.unlabelled.begin(), target.unlabelled.end());
  auto tuned = fine_tune(std::move(prior.student), target.labelled, fc, pool);
  return {std::move(tuned.student), std::move(prior.aggregator), used.names(), std::move(prior.history),
          std::move(tuned.history)};
}

void save_student(StudentModel& student, const std::filesystem::path& stem, const json& metadata) {
  json meta = metadata;
  meta["kind"] = "student";
  meta["model"] = model_config_json(student.config());
  save_checkpoint(student.parameters(), stem, meta);
}

StudentModel load_student(const std::filesystem::path& stem) {
  const json meta = read_checkpoint_metadata(stem);
  StudentModel student(model_config_from_json(meta.at("model")));
  load_checkpoint(student.parameters(), stem);
  return student;
}

}  // namespace mtms
