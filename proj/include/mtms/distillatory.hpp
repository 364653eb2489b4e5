#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtms/aggregator.hpp"
#include "mtms/teacher.hpp"

namespace mtms {

/// Teacher embeddings of one image, d x tokens; column j comes from bank slot j.
using EmbeddingStack = Eigen::MatrixXf;

struct FilterMask {
  std::vector<bool> keep;
  bool fallback = false;  // every teacher was wrong, so everything is kept
};

struct FilterOptions {
  bool mask_da_teacher = true;  // false: the T_DA token is always kept
};

/// Ordered frozen teachers T_1..T_N followed by the optional T_DA.
class TeacherBank {
 public:
  TeacherBank() = default;
  TeacherBank(std::vector<std::shared_ptr<const FrozenTeacher>> teachers,
              std::shared_ptr<const FrozenTeacher> da_teacher = nullptr);

  int token_count() const { return static_cast<int>(members_.size()); }
  int embedding_dim() const { return dim_; }
  bool has_da_teacher() const { return has_da_; }
  /// Slot j; the T_DA slot, when present, is the last one.
  const FrozenTeacher& member(int j) const { return *members_.at(static_cast<std::size_t>(j)); }
  std::vector<std::string> names() const;
  std::vector<std::string> checksums() const;

  TeacherBank without_da_teacher() const;
  /// Keeps the listed source teachers (indices into T_1..T_N) and T_DA if present.
  TeacherBank select(const std::vector<int>& teacher_indices, bool keep_da) const;

 private:
  std::vector<std::shared_ptr<const FrozenTeacher>> members_;
  bool has_da_ = false;
  int dim_ = 0;
};

EmbeddingStack collect_embeddings(const TeacherBank& bank, const Image& image);
/// Stacks for many samples, batched per teacher.
std::vector<EmbeddingStack> collect_embeddings(const TeacherBank& bank, std::span<const Sample> samples);

/// keep[j] = teacher j predicts the sample's label; all-false falls back to all-true.
FilterMask filter_mask(const TeacherBank& bank, const Sample& sample, const FilterOptions& opts = {});
std::vector<FilterMask> filter_masks(const TeacherBank& bank, std::span<const Sample> samples,
                                     const FilterOptions& opts = {});

/// e_KD of one stack; a null mask keeps every token.
Eigen::VectorXf aggregate(const Aggregator<float>& agg, const EmbeddingStack& stack, const FilterMask* mask = nullptr);
float aggregator_predict(const Aggregator<float>& agg, const Eigen::VectorXf& e_kd);

/// CSV audit of filter decisions: sample_id,label,<teacher names...>,fallback.
void write_mask_audit(const std::filesystem::path& path, const TeacherBank& bank, std::span<const Sample> samples,
                      std::span<const FilterMask> masks);

}  // namespace mtms
