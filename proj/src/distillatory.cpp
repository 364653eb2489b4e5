#include "mtms/distillatory.hpp"

#include <fstream>
#include <stdexcept>

#include "mtms/batching.hpp"

namespace mtms {

TeacherBank::TeacherBank(std::vector<std::shared_ptr<const FrozenTeacher>> teachers,
                         std::shared_ptr<const FrozenTeacher> da_teacher)
    : members_(std::move(teachers)), has_da_(da_teacher != nullptr) {
  if (da_teacher) members_.push_back(std::move(da_teacher));
  if (members_.empty()) throw std::invalid_argument("TeacherBank: at least one teacher required");
  dim_ = members_.front()->embedding_dim();
  for (const auto& m : members_) {
    if (!m) throw std::invalid_argument("TeacherBank: null teacher");
    if (!m->frozen()) throw std::invalid_argument("TeacherBank: teacher " + m->name() + " is not frozen");
    if (m->embedding_dim() != dim_) {
      throw std::invalid_argument("TeacherBank: teacher " + m->name() + " has d=" + std::to_string(m->embedding_dim()) +
                                  ", bank has d=" + std::to_string(dim_));
    }
  }
}

std::vector<std::string> TeacherBank::names() const {
  std::vector<std::string> out;
  for (const auto& m : members_) out.push_back(m->name());
  return out;
}

std::vector<std::string> TeacherBank::checksums() const {
  std::vector<std::string> out;
  for (const auto& m : members_) out.push_back(m->checksum());
  return out;
}

TeacherBank TeacherBank::without_da_teacher() const {
  if (!has_da_) return *this;
  return TeacherBank({members_.begin(), members_.end() - 1}, nullptr);
}

TeacherBank TeacherBank::select(const std::vector<int>& teacher_indices, bool keep_da) const {
  const int sources = token_count() - (has_da_ ? 1 : 0);
  std::vector<std::shared_ptr<const FrozenTeacher>> chosen;
  for (int i : teacher_indices) {
    if (i < 0 || i >= sources) throw std::invalid_argument("TeacherBank::select: teacher index " + std::to_string(i) + " out of range");
    chosen.push_back(members_[static_cast<std::size_t>(i)]);
  }
  std::shared_ptr<const FrozenTeacher> da = (keep_da && has_da_) ? members_.back() : nullptr;
  if (chosen.empty() && !da) throw std::invalid_argument("TeacherBank::select: empty selection");
  return TeacherBank(std::move(chosen), std::move(da));
}

EmbeddingStack collect_embeddings(const TeacherBank& bank, const Image& image) {
  EmbeddingStack stack(bank.embedding_dim(), bank.token_count());
  for (int j = 0; j < bank.token_count(); ++j) stack.col(j) = embed(bank.member(j), image);
  return stack;
}

std::vector<EmbeddingStack> collect_embeddings(const TeacherBank& bank, std::span<const Sample> samples) {
  std::vector<EmbeddingStack> stacks(samples.size(), EmbeddingStack(bank.embedding_dim(), bank.token_count()));
  for (int j = 0; j < bank.token_count(); ++j) {
    const nn::Mat<float> e = embed_samples(bank.member(j), samples);
    for (std::size_t i = 0; i < samples.size(); ++i) stacks[i].col(j) = e.col(static_cast<Eigen::Index>(i));
  }
  return stacks;
}

namespace {

FilterMask mask_from_predictions(const TeacherBank& bank, const std::vector<int>& predicted, int label,
                                 const FilterOptions& opts) {
  FilterMask m;
  m.keep.resize(predicted.size());
  bool any = false;
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    const bool is_da = bank.has_da_teacher() && static_cast<int>(j) == bank.token_count() - 1;
    m.keep[j] = predicted[j] == label || (is_da && !opts.mask_da_teacher);
    any = any || m.keep[j];
  }
  if (!any) {
    m.keep.assign(m.keep.size(), true);
    m.fallback = true;
  }
  return m;
}

}  // namespace

FilterMask filter_mask(const TeacherBank& bank, const Sample& sample, const FilterOptions& opts) {
  if (!sample.label) throw std::invalid_argument("filter_mask: sample " + std::to_string(sample.id) + " is unlabelled");
  std::vector<int> predicted;
  for (int j = 0; j < bank.token_count(); ++j) predicted.push_back(predict(bank.member(j), sample.image).label);
  return mask_from_predictions(bank, predicted, *sample.label, opts);
}

std::vector<FilterMask> filter_masks(const TeacherBank& bank, std::span<const Sample> samples, const FilterOptions& opts) {
  std::vector<std::vector<int>> predicted(samples.size());
  for (const auto& s : samples) {
    if (!s.label) throw std::invalid_argument("filter_mask: sample " + std::to_string(s.id) + " is unlabelled");
  }
  for (int j = 0; j < bank.token_count(); ++j) {
    const auto preds = predict_samples(bank.member(j), samples);
    for (std::size_t i = 0; i < samples.size(); ++i) predicted[i].push_back(preds[i].label);
  }
  std::vector<FilterMask> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(mask_from_predictions(bank, predicted[i], *samples[i].label, opts));
  }
  return out;
}

Eigen::VectorXf aggregate(const Aggregator<float>& agg, const EmbeddingStack& stack, const FilterMask* mask) {
  TokenBatch<float> batch;
  batch.add(stack, mask ? &mask->keep : nullptr);
  return agg.aggregate(batch).col(0);
}

float aggregator_predict(const Aggregator<float>& agg, const Eigen::VectorXf& e_kd) {
  return agg.predict(nn::Mat<float>(e_kd))(0, 0);
}

void write_mask_audit(const std::filesystem::path& path, const TeacherBank& bank, std::span<const Sample> samples,
                      std::span<const FilterMask> masks) {
  if (samples.size() != masks.size()) throw std::invalid_argument("write_mask_audit: size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,label";
  for (const auto& n : bank.names()) out << ',' << n;
  out << ",fallback\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << samples[i].id << ',' << (samples[i].label ? std::to_string(*samples[i].label) : "");
    for (bool k : masks[i].keep) out << ',' << (k ? 1 : 0);
    out << ',' << (masks[i].fallback ? 1 : 0) << '\n';
  }
}

}  // namespace mtms
