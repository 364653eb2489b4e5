#pragma once

#include <cmath>
#include <vector>

#include "mtms/nn/tensor.hpp"

namespace mtms::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments laid out like the trainable parameters of the set it
/// was created for.
template <typename S>
struct AdamState {
  AdamConfig config;
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
  long step = 0;

  AdamState() = default;
  AdamState(const ParameterSet<S>& params, AdamConfig cfg) : config(cfg) {
    for (const auto* p : params) {
      m.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }
};

/// One bias-corrected Adam update of every trainable parameter. Gradients are
/// left untouched.
template <typename S>
void adam_step(const ParameterSet<S>& params, AdamState<S>& state) {
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state/parameter layout mismatch");
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(c.beta1);
  const S b2 = static_cast<S>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.rows() != p.grad.rows() || m.cols() != p.grad.cols()) {
      throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
    }
    m = b1 * m + (S(1) - b1) * p.grad;
    v = b2 * v + (S(1) - b2) * p.grad.cwiseAbs2();
    const auto m_hat = m.array() / static_cast<S>(bc1);
    const auto v_hat = v.array() / static_cast<S>(bc2);
    p.value.array() -= static_cast<S>(c.learning_rate) * m_hat / (v_hat.sqrt() + static_cast<S>(c.eps));
  }
}

}  // namespace mtms::nn
