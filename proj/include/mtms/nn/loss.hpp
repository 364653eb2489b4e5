#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "mtms/nn/tensor.hpp"

namespace mtms::nn {

inline constexpr double kProbClamp = 1e-7;

/// Scalar loss with its gradient w.r.t. the loss input.
template <typename S>
struct LossResult {
  S value{};
  Mat<S> grad;
};

/// Mean binary cross-entropy of probabilities (1 x N) against 0/1 labels.
/// Probabilities are clamped to [1e-7, 1 - 1e-7]; the gradient is zero where
/// the clamp is active.
template <typename S>
LossResult<S> bce_loss(const Mat<S>& probs, std::span<const int> labels) {
  if (probs.rows() != 1 || static_cast<std::size_t>(probs.cols()) != labels.size()) {
    throw std::invalid_argument("bce_loss: expected 1 x " + std::to_string(labels.size()) + " probabilities, got " +
                                shape_str(probs.rows(), probs.cols()));
  }
  const auto n = static_cast<S>(labels.size());
  const S lo = static_cast<S>(kProbClamp);
  const S hi = S(1) - lo;
  LossResult<S> out{S(0), Mat<S>::Zero(1, probs.cols())};
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    const S raw = probs(0, i);
    const S p = std::clamp(raw, lo, hi);
    const S y = static_cast<S>(labels[static_cast<std::size_t>(i)]);
    out.value -= y * std::log(p) + (S(1) - y) * std::log(S(1) - p);
    if (raw > lo && raw < hi) out.grad(0, i) = -(y / p - (S(1) - y) / (S(1) - p)) / n;
  }
  out.value /= n;
  return out;
}

/// Sigmoid followed by bce_loss, differentiated w.r.t. the logits
/// (gradient (p - y) / N, which stays informative when p saturates).
template <typename S>
LossResult<S> sigmoid_bce_loss(const Mat<S>& logits, std::span<const int> labels) {
  const Mat<S> p = (S(1) / (S(1) + (-logits.array()).exp())).matrix();
  LossResult<S> out = bce_loss<S>(p, labels);
  const auto n = static_cast<S>(labels.size());
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    out.grad(0, i) = (p(0, i) - static_cast<S>(labels[static_cast<std::size_t>(i)])) / n;
  }
  return out;
}

/// Mean negative log-likelihood of column-wise log-probabilities (K x N).
template <typename S>
LossResult<S> nll_loss(const Mat<S>& log_probs, std::span<const int> targets) {
  if (static_cast<std::size_t>(log_probs.cols()) != targets.size()) {
    throw std::invalid_argument("nll_loss: " + std::to_string(log_probs.cols()) + " columns vs " +
                                std::to_string(targets.size()) + " targets");
  }
  const auto n = static_cast<S>(targets.size());
  LossResult<S> out{S(0), Mat<S>::Zero(log_probs.rows(), log_probs.cols())};
  for (Eigen::Index i = 0; i < log_probs.cols(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= log_probs.rows()) {
      throw std::invalid_argument("nll_loss: class index " + std::to_string(t) + " out of range [0," +
                                  std::to_string(log_probs.rows()) + ")");
    }
    out.value -= log_probs(t, i);
    out.grad(t, i) = -S(1) / n;
  }
  out.value /= n;
  return out;
}

/// Euclidean distance between two embeddings.
template <typename S>
S distill_loss(const Vec<S>& e_kd, const Vec<S>& e_st) {
  if (e_kd.size() != e_st.size()) {
    throw std::invalid_argument("distill_loss: length mismatch " + std::to_string(e_kd.size()) + " vs " +
                                std::to_string(e_st.size()));
  }
  return (e_kd - e_st).norm();
}

/// Sum over columns of ||target_i - student_i||_2; gradient w.r.t. the student
/// embeddings. Targets are constants.
template <typename S>
LossResult<S> batch_distill_loss(const Mat<S>& targets, const Mat<S>& student) {
  if (targets.rows() != student.rows() || targets.cols() != student.cols()) {
    throw std::invalid_argument("batch_distill_loss: shape mismatch " + shape_str(targets.rows(), targets.cols()) +
                                " vs " + shape_str(student.rows(), student.cols()));
  }
  LossResult<S> out{S(0), Mat<S>::Zero(student.rows(), student.cols())};
  for (Eigen::Index i = 0; i < student.cols(); ++i) {
    const Vec<S> diff = student.col(i) - targets.col(i);
    const S norm = diff.norm();
    out.value += norm;
    if (norm > S(0)) out.grad.col(i) = diff / norm;
  }
  return out;
}

}  // namespace mtms::nn
