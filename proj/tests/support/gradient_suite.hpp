#pragma once

#include <map>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mtms/aggregator.hpp"
#include "mtms/nn/loss.hpp"
#include "mtms/nn/networks.hpp"

namespace mtms::testkit {

namespace grad_cases {

using nn::FeatureMap;
using nn::Mode;

inline std::vector<int> random_labels(int n, int classes, Rng& rng) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<int>(uniform_int(rng, 0, classes - 1));
  return out;
}

inline GradReport linear(Rng& rng) {
  const int in = static_cast<int>(uniform_int(rng, 1, 5)), out = static_cast<int>(uniform_int(rng, 1, 5));
  const int n = static_cast<int>(uniform_int(rng, 1, 4));
  nn::Linear<double> layer(in, out, "fc");
  layer.init(rng);
  MatD x = random_mat(in, n, rng);
  const MatD w = random_mat(out, n, rng);
  nn::ParameterSet<double> set;
  layer.collect(set);
  layer.forward(x);
  const MatD dx = layer.backward(w);
  std::vector<GradTarget> t{{"x", &x, dx}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, layer.apply(x)); }, t);
}

inline GradReport conv3x3(Rng& rng) {
  const int in = static_cast<int>(uniform_int(rng, 1, 3)), out = static_cast<int>(uniform_int(rng, 1, 3));
  nn::Conv3x3<double> layer(in, out, "conv");
  layer.init(rng);
  auto x = random_map(in, 2, static_cast<int>(uniform_int(rng, 2, 5)), static_cast<int>(uniform_int(rng, 2, 5)), rng);
  const MatD w = random_mat(out, x.data.cols(), rng);
  nn::ParameterSet<double> set;
  layer.collect(set);
  layer.forward(x);
  FeatureMap<double> dy = x;
  dy.data = w;
  const MatD dx = layer.backward(dy).data;
  std::vector<GradTarget> t{{"x", &x.data, dx}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, layer.apply(x).data); }, t);
}

inline GradReport batchnorm(Rng& rng, Mode mode) {
  const int f = static_cast<int>(uniform_int(rng, 1, 4)), n = static_cast<int>(uniform_int(rng, 2, 6));
  nn::BatchNorm<double> layer(f, "bn");
  nn::ParameterSet<double> set;
  layer.collect(set);
  set[0].value = random_mat(f, 1, rng, 0.5, 1.5);
  set[1].value = random_mat(f, 1, rng);
  set[2].value = random_mat(f, 1, rng);
  set[3].value = random_mat(f, 1, rng, 0.3, 2.0);
  MatD x = random_mat(f, n, rng, -2.0, 2.0);
  const MatD w = random_mat(f, n, rng);
  const MatD mean = set[2].value, var = set[3].value;
  layer.forward(x, mode);
  const MatD dx = layer.backward(w);
  std::vector<GradTarget> t{{"x", &x, dx}};
  add_parameters(t, set);
  return check_gradients(
      [&] {
        set[2].value = mean;
        set[3].value = var;
        return weighted_sum(w, layer.forward(x, mode));
      },
      t);
}

inline GradReport layernorm(Rng& rng) {
  const int f = static_cast<int>(uniform_int(rng, 2, 6)), n = static_cast<int>(uniform_int(rng, 1, 4));
  nn::LayerNorm<double> layer(f, "ln");
  nn::ParameterSet<double> set;
  layer.collect(set);
  set[0].value = random_mat(f, 1, rng, 0.5, 1.5);
  set[1].value = random_mat(f, 1, rng);
  MatD x = random_mat(f, n, rng, -2.0, 2.0);
  const MatD w = random_mat(f, n, rng);
  layer.forward(x);
  const MatD dx = layer.backward(w);
  std::vector<GradTarget> t{{"x", &x, dx}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, layer.apply(x)); }, t);
}

template <typename Layer>
GradReport pointwise(Rng& rng) {
  MatD x = random_mat_off_zero(static_cast<int>(uniform_int(rng, 1, 5)), static_cast<int>(uniform_int(rng, 1, 4)), rng);
  const MatD w = random_mat(x.rows(), x.cols(), rng);
  Layer layer;
  layer.forward(x);
  std::vector<GradTarget> t{{"x", &x, layer.backward(w)}};
  return check_gradients([&] { return weighted_sum(w, Layer::apply(x)); }, t);
}

inline GradReport avgpool(Rng& rng) {
  auto x = random_map(static_cast<int>(uniform_int(rng, 1, 3)), 2, 2 * static_cast<int>(uniform_int(rng, 1, 3)),
                      2 * static_cast<int>(uniform_int(rng, 1, 3)), rng);
  nn::AvgPool2<double> layer;
  const auto y = layer.forward(x);
  FeatureMap<double> dy = y;
  dy.data = random_mat(y.data.rows(), y.data.cols(), rng);
  std::vector<GradTarget> t{{"x", &x.data, layer.backward(dy).data}};
  return check_gradients([&] { return weighted_sum(dy.data, nn::AvgPool2<double>::apply(x).data); }, t);
}

inline GradReport global_avgpool(Rng& rng) {
  auto x = random_map(static_cast<int>(uniform_int(rng, 1, 3)), static_cast<int>(uniform_int(rng, 1, 3)),
                      static_cast<int>(uniform_int(rng, 1, 4)), static_cast<int>(uniform_int(rng, 1, 4)), rng);
  nn::GlobalAvgPool<double> layer;
  const MatD y = layer.forward(x);
  const MatD w = random_mat(y.rows(), y.cols(), rng);
  std::vector<GradTarget> t{{"x", &x.data, layer.backward(w).data}};
  return check_gradients([&] { return weighted_sum(w, nn::GlobalAvgPool<double>::apply(x)); }, t);
}

/// The reversal layer's backward must equal -lambda times the true derivative.
inline GradReport grad_reverse(Rng& rng) {
  const double lambda = uniform(rng, 0.0, 2.0);
  nn::GradReverse<double> layer(lambda);
  MatD x = random_mat(static_cast<int>(uniform_int(rng, 1, 5)), static_cast<int>(uniform_int(rng, 1, 4)), rng);
  const MatD w = random_mat(x.rows(), x.cols(), rng);
  layer.forward(x);
  std::vector<GradTarget> t{{"x", &x, layer.backward(w)}};
  return check_gradients([&] { return -lambda * weighted_sum(w, layer.forward(x)); }, t);
}

inline GradReport mlp_head(Rng& rng) {
  const int in = static_cast<int>(uniform_int(rng, 1, 5)), n = static_cast<int>(uniform_int(rng, 1, 4));
  nn::MlpHead<double> head(in, static_cast<int>(uniform_int(rng, 1, 5)), "cls");
  head.init(rng);
  MatD x = random_mat(in, n, rng);
  const MatD w = random_mat(1, n, rng);
  nn::ParameterSet<double> set;
  head.collect(set);
  head.forward(x);
  std::vector<GradTarget> t{{"x", &x, head.backward(w)}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, head.logits(x)); }, t);
}

/// Head parameters see the true gradient; the input sees it reversed.
inline GradReport domain_head(Rng& rng) {
  const int in = static_cast<int>(uniform_int(rng, 1, 4)), k = static_cast<int>(uniform_int(rng, 2, 4));
  const int n = static_cast<int>(uniform_int(rng, 2, 5));
  const double lambda = uniform(rng, 0.1, 2.0);
  nn::DomainHead<double> head(in, static_cast<int>(uniform_int(rng, 2, 5)), k, lambda, "dom");
  head.init(rng);
  MatD x = random_mat(in, n, rng);
  const MatD w = random_mat(k, n, rng);
  nn::ParameterSet<double> set;
  head.collect(set);
  const MatD mean = set[4].value, var = set[5].value;  // batch-norm running estimates
  auto loss = [&] {
    set[4].value = mean;
    set[5].value = var;
    return weighted_sum(w, head.forward(x, Mode::kTrain));
  };
  loss();
  const MatD dx = head.backward(w);
  std::vector<GradTarget> params;
  add_parameters(params, set);
  GradReport a = check_gradients(loss, params);
  std::vector<GradTarget> input{{"x", &x, dx}};
  GradReport b = check_gradients([&] { return -lambda * loss(); }, input);
  return a.max_rel_error >= b.max_rel_error ? a : b;
}

inline GradReport bce(Rng& rng) {
  const int n = static_cast<int>(uniform_int(rng, 1, 8));
  MatD p = random_mat(1, n, rng, 0.05, 0.95);
  const auto labels = random_labels(n, 2, rng);
  std::vector<GradTarget> t{{"p", &p, nn::bce_loss<double>(p, labels).grad}};
  return check_gradients([&] { return nn::bce_loss<double>(p, labels).value; }, t);
}

inline GradReport sigmoid_bce(Rng& rng) {
  const int n = static_cast<int>(uniform_int(rng, 1, 8));
  MatD z = random_mat(1, n, rng, -4.0, 4.0);
  const auto labels = random_labels(n, 2, rng);
  std::vector<GradTarget> t{{"logits", &z, nn::sigmoid_bce_loss<double>(z, labels).grad}};
  return check_gradients([&] { return nn::sigmoid_bce_loss<double>(z, labels).value; }, t);
}

/// NLL composed with log-softmax, the way the domain head uses it.
inline GradReport nll(Rng& rng) {
  const int k = static_cast<int>(uniform_int(rng, 2, 5)), n = static_cast<int>(uniform_int(rng, 1, 6));
  MatD z = random_mat(k, n, rng, -3.0, 3.0);
  const auto targets = random_labels(n, k, rng);
  nn::LogSoftmax<double> lsm;
  const auto r = nn::nll_loss<double>(lsm.forward(z), targets);
  std::vector<GradTarget> t{{"logits", &z, lsm.backward(r.grad)}};
  return check_gradients([&] { return nn::nll_loss<double>(nn::LogSoftmax<double>::apply(z), targets).value; }, t);
}

inline GradReport distill(Rng& rng) {
  const int d = static_cast<int>(uniform_int(rng, 1, 6)), n = static_cast<int>(uniform_int(rng, 1, 5));
  const MatD target = random_mat(d, n, rng);
  MatD student = random_mat(d, n, rng);
  std::vector<GradTarget> t{{"student", &student, nn::batch_distill_loss<double>(target, student).grad}};
  return check_gradients([&] { return nn::batch_distill_loss<double>(target, student).value; }, t);
}

inline nn::EncoderConfig small_encoder(Rng& rng) {
  nn::EncoderConfig cfg;
  cfg.channels = {static_cast<int>(uniform_int(rng, 1, 3))};
  cfg.embedding_dim = static_cast<int>(uniform_int(rng, 2, 4));
  return cfg;
}

/// Restores every running statistic before each evaluation so the loss is a
/// pure function of the trainable values.
struct RunningStatGuard {
  std::vector<std::pair<MatD*, MatD>> saved;
  explicit RunningStatGuard(const nn::ParameterSet<double>& set) {
    for (auto* p : set) {
      if (!p->trainable) saved.emplace_back(&p->value, p->value);
    }
  }
  void restore() const {
    for (const auto& [ptr, v] : saved) *ptr = v;
  }
};

/// Teacher path: encoder -> classifier -> sigmoid BCE.
inline GradReport teacher_network(Rng& rng) {
  nn::Encoder<double> enc(small_encoder(rng), "enc");
  enc.init(rng);
  nn::MlpHead<double> cls(enc.embedding_dim(), 3, "cls");
  cls.init(rng);
  auto x = random_map(1, 3, 4, 4, rng);
  const auto labels = random_labels(3, 2, rng);
  nn::ParameterSet<double> set;
  enc.collect(set);
  cls.collect(set);
  RunningStatGuard guard(set);
  auto loss = [&] {
    guard.restore();
    return nn::sigmoid_bce_loss<double>(cls.forward(enc.forward(x, Mode::kTrain)), labels).value;
  };
  guard.restore();
  const auto r = nn::sigmoid_bce_loss<double>(cls.forward(enc.forward(x, Mode::kTrain)), labels);
  const MatD dx = enc.backward(cls.backward(r.grad)).data;
  std::vector<GradTarget> t{{"x", &x.data, dx}};
  add_parameters(t, set);
  return check_gradients(loss, t);
}

/// Domain-adaptation path: encoder feeding a label head and a reversed domain head.
/// Encoder and input gradients follow label loss - lambda * domain loss; the
/// heads follow their own losses.
inline GradReport da_network(Rng& rng) {
  const double lambda = uniform(rng, 0.1, 2.0);
  const int k = static_cast<int>(uniform_int(rng, 2, 3));
  nn::Encoder<double> enc(small_encoder(rng), "enc");
  enc.init(rng);
  nn::MlpHead<double> cls(enc.embedding_dim(), 3, "cls");
  cls.init(rng);
  nn::DomainHead<double> dom(enc.embedding_dim(), 3, k, lambda, "dom");
  dom.init(rng);
  auto x = random_map(1, 4, 4, 4, rng);
  const auto labels = random_labels(4, 2, rng);
  const auto domains = random_labels(4, k, rng);
  nn::ParameterSet<double> enc_set, head_set, all;
  enc.collect(enc_set);
  cls.collect(head_set);
  dom.collect(head_set);
  all.append(enc_set);
  all.append(head_set);
  RunningStatGuard guard(all);
  auto losses = [&](double& label_loss, double& domain_loss) {
    guard.restore();
    const MatD e = enc.forward(x, Mode::kTrain);
    label_loss = nn::sigmoid_bce_loss<double>(cls.forward(e), labels).value;
    domain_loss = nn::nll_loss<double>(dom.forward(e, Mode::kTrain), domains).value;
  };
  guard.restore();
  const MatD e = enc.forward(x, Mode::kTrain);
  const auto lb = nn::sigmoid_bce_loss<double>(cls.forward(e), labels);
  const auto dl = nn::nll_loss<double>(dom.forward(e, Mode::kTrain), domains);
  const MatD de = cls.backward(lb.grad) + dom.backward(dl.grad);
  const MatD dx = enc.backward(de).data;

  std::vector<GradTarget> heads;
  add_parameters(heads, head_set);
  const GradReport a = check_gradients(
      [&] {
        double l, d;
        losses(l, d);
        return l + d;
      },
      heads);
  std::vector<GradTarget> body{{"x", &x.data, dx}};
  add_parameters(body, enc_set);
  const GradReport b = check_gradients(
      [&] {
        double l, d;
        losses(l, d);
        return l - lambda * d;
      },
      body);
  return a.max_rel_error >= b.max_rel_error ? a : b;
}

/// Student path: encoder embeddings against constant targets (distillation loss).
inline GradReport student_network(Rng& rng) {
  nn::Encoder<double> enc(small_encoder(rng), "student");
  enc.init(rng);
  auto x = random_map(1, 3, 4, 4, rng);
  const MatD target = random_mat(enc.embedding_dim(), 3, rng, 0.0, 1.0);
  nn::ParameterSet<double> set;
  enc.collect(set);
  RunningStatGuard guard(set);
  guard.restore();
  const auto r = nn::batch_distill_loss<double>(target, enc.forward(x, Mode::kTrain));
  const MatD dx = enc.backward(r.grad).data;
  std::vector<GradTarget> t{{"x", &x.data, dx}};
  add_parameters(t, set);
  return check_gradients(
      [&] {
        guard.restore();
        return nn::batch_distill_loss<double>(target, enc.forward(x, Mode::kTrain)).value;
      },
      t);
}

inline std::vector<Eigen::Index> random_offsets(Rng& rng, int samples, int max_tokens) {
  std::vector<Eigen::Index> off{0};
  for (int s = 0; s < samples; ++s) off.push_back(off.back() + uniform_int(rng, 1, max_tokens));
  return off;
}

inline GradReport attention(Rng& rng) {
  const int heads = static_cast<int>(uniform_int(rng, 1, 2));
  const int dim = 2 * heads;
  SelfAttention<double> attn(dim, heads, "attn");
  attn.init(rng);
  const auto off = random_offsets(rng, static_cast<int>(uniform_int(rng, 1, 3)), 3);
  MatD x = random_mat(dim, off.back(), rng);
  const MatD w = random_mat(dim, off.back(), rng);
  nn::ParameterSet<double> set;
  attn.collect(set);
  attn.forward(x, off);
  std::vector<GradTarget> t{{"x", &x, attn.backward(w)}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, attn.apply(x, off)); }, t);
}

inline GradReport encoder_block(Rng& rng) {
  const int dim = 4;
  EncoderBlock<double> block(dim, static_cast<int>(uniform_int(rng, 1, 2)), 5, "blk");
  block.init(rng);
  const auto off = random_offsets(rng, static_cast<int>(uniform_int(rng, 1, 3)), 3);
  MatD x = random_mat(dim, off.back(), rng);
  const MatD w = random_mat(dim, off.back(), rng);
  nn::ParameterSet<double> set;
  block.collect(set);
  block.forward(x, off);
  std::vector<GradTarget> t{{"x", &x, block.backward(w)}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, block.apply(x, off)); }, t);
}

/// Aggregator with classifier over a masked token batch (tokens removed per sample).
inline GradReport aggregator(Rng& rng) {
  AggregatorConfig cfg;
  cfg.embedding_dim = 3;
  cfg.model_dim = 4;
  cfg.blocks = static_cast<int>(uniform_int(rng, 1, 2));
  cfg.heads = 2;
  cfg.ff_dim = 5;
  cfg.classifier_hidden = 3;
  cfg.slots = 3;
  Aggregator<double> agg(cfg);
  agg.init(rng);
  TokenBatch<double> batch;
  const int samples = static_cast<int>(uniform_int(rng, 1, 3));
  for (int s = 0; s < samples; ++s) {
    std::vector<bool> keep(3);
    do {
      for (std::size_t j = 0; j < 3; ++j) keep[j] = uniform(rng, 0.0, 1.0) < 0.6;
    } while (std::none_of(keep.begin(), keep.end(), [](bool b) { return b; }));
    batch.add(random_mat(3, 3, rng, 0.0, 1.0), &keep);
  }
  const MatD w = random_mat(1, samples, rng);
  nn::ParameterSet<double> set;
  agg.collect(set);
  agg.forward_logits(batch);
  std::vector<GradTarget> t{{"tokens", &batch.tokens, agg.backward_logits(w)}};
  add_parameters(t, set);
  return check_gradients([&] { return weighted_sum(w, agg.forward_logits(batch)); }, t);
}

}  // namespace grad_cases

struct GradSuiteRow {
  std::string component;
  int instances = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

/// Every differentiable component, `instances` random instances each.
inline std::vector<GradSuiteRow> run_gradient_suite(int instances, std::uint64_t seed = 2024) {
  using namespace grad_cases;
  const std::vector<std::pair<std::string, std::function<GradReport(Rng&)>>> cases{
      {"linear", linear},
      {"conv3x3", conv3x3},
      {"batchnorm_train", [](Rng& r) { return batchnorm(r, nn::Mode::kTrain); }},
      {"batchnorm_eval", [](Rng& r) { return batchnorm(r, nn::Mode::kEval); }},
      {"layernorm", layernorm},
      {"relu", pointwise<nn::Relu<double>>},
      {"sigmoid", pointwise<nn::Sigmoid<double>>},
      {"log_softmax", pointwise<nn::LogSoftmax<double>>},
      {"avgpool2", avgpool},
      {"global_avgpool", global_avgpool},
      {"grad_reverse", grad_reverse},
      {"mlp_head", mlp_head},
      {"domain_head", domain_head},
      {"bce_loss", bce},
      {"sigmoid_bce_loss", sigmoid_bce},
      {"nll_loss", nll},
      {"distill_loss", distill},
      {"self_attention", attention},
      {"encoder_block", encoder_block},
      {"aggregator", aggregator},
      {"teacher_encoder", teacher_network},
      {"da_teacher_encoder", da_network},
      {"student_encoder", student_network},
  };
  std::vector<GradSuiteRow> rows;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradSuiteRow row{cases[c].first, instances, 0.0, ""};
    for (int i = 0; i < instances; ++i) {
      Rng rng = make_rng(seed + c, Stream::kTest, static_cast<std::uint64_t>(i));
      const GradReport r = cases[c].second(rng);
      if (r.max_rel_error >= row.max_rel_error) {
        row.max_rel_error = r.max_rel_error;
        row.worst = r.worst + " (instance " + std::to_string(i) + ")";
      }
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mtms::testkit
