#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtms/nn/layers.hpp"
#include "mtms/nn/networks.hpp"

namespace mtms {

struct AggregatorConfig {
  int embedding_dim = 128;  // d, both the token width and the output width
  int model_dim = 128;
  int blocks = 2;
  int heads = 4;
  int ff_dim = 256;
  int classifier_hidden = 128;
  int slots = 4;  // teacher token slots (bank size)
};

/// Variable-length token sets packed column-wise. Sample i owns columns
/// [offsets[i], offsets[i+1]); `slots` gives the bank position of each column.
/// Masked tokens are simply absent, which makes them invisible to attention
/// and to the pool.
template <typename S>
struct TokenBatch {
  nn::Mat<S> tokens;
  std::vector<int> slots;
  std::vector<Eigen::Index> offsets{0};

  int samples() const { return static_cast<int>(offsets.size()) - 1; }

  /// Appends the kept columns of `stack` (d x T, one column per bank slot).
  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& stack, const std::vector<bool>* keep = nullptr) {
    const Eigen::Index t_count = stack.cols();
    if (keep && static_cast<Eigen::Index>(keep->size()) != t_count) {
      throw std::invalid_argument("TokenBatch: mask length " + std::to_string(keep->size()) + " vs " +
                                  std::to_string(t_count) + " tokens");
    }
    Eigen::Index kept = 0;
    for (Eigen::Index t = 0; t < t_count; ++t) kept += (!keep || (*keep)[static_cast<std::size_t>(t)]) ? 1 : 0;
    if (kept == 0) throw std::invalid_argument("TokenBatch: mask keeps no token");
    const Eigen::Index start = offsets.back();
    if (tokens.size() == 0) tokens.resize(stack.rows(), 0);
    if (tokens.rows() != stack.rows()) throw std::invalid_argument("TokenBatch: embedding width mismatch");
    tokens.conservativeResize(Eigen::NoChange, start + kept);
    Eigen::Index col = start;
    for (Eigen::Index t = 0; t < t_count; ++t) {
      if (keep && !(*keep)[static_cast<std::size_t>(t)]) continue;
      tokens.col(col++) = stack.col(t).template cast<S>();
      slots.push_back(static_cast<int>(t));
    }
    offsets.push_back(start + kept);
  }
};

namespace detail {

template <typename S>
void softmax_columns(nn::Mat<S>& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const S mx = m.col(j).maxCoeff();
    m.col(j) = (m.col(j).array() - mx).exp();
    m.col(j) /= m.col(j).sum();
  }
}

}  // namespace detail

/// Multi-head self-attention restricted to tokens of the same sample.
template <typename S>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(int model_dim, int heads, const std::string& name)
      : heads_(heads),
        q_(model_dim, model_dim, name + ".q"),
        k_(model_dim, model_dim, name + ".k"),
        v_(model_dim, model_dim, name + ".v"),
        o_(model_dim, model_dim, name + ".o") {
    if (heads <= 0 || model_dim % heads != 0) {
      throw std::invalid_argument("attention " + name + ": model_dim " + std::to_string(model_dim) +
                                  " not divisible by " + std::to_string(heads) + " heads");
    }
  }

  void init(Rng& rng) {
    q_.init(rng);
    k_.init(rng);
    v_.init(rng);
    o_.init(rng);
  }

  nn::Mat<S> apply(const nn::Mat<S>& x, const std::vector<Eigen::Index>& offsets) const {
    std::vector<nn::Mat<S>> unused;
    return o_.apply(attend(q_.apply(x), k_.apply(x), v_.apply(x), offsets, unused));
  }

  nn::Mat<S> forward(const nn::Mat<S>& x, const std::vector<Eigen::Index>& offsets) {
    offsets_ = offsets;
    qm_ = q_.forward(x);
    km_ = k_.forward(x);
    vm_ = v_.forward(x);
    return o_.forward(attend(qm_, km_, vm_, offsets, weights_));
  }

  nn::Mat<S> backward(const nn::Mat<S>& dy) {
    const nn::Mat<S> dctx = o_.backward(dy);
    const auto dh = head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    nn::Mat<S> dq = nn::Mat<S>::Zero(qm_.rows(), qm_.cols());
    nn::Mat<S> dk = dq, dv = dq;
    std::size_t w = 0;
    for (std::size_t s = 0; s + 1 < offsets_.size(); ++s) {
      const auto start = offsets_[s];
      const auto n = offsets_[s + 1] - start;
      for (int h = 0; h < heads_; ++h, ++w) {
        const auto& a = weights_[w];  // keys x queries
        const auto rows = static_cast<Eigen::Index>(h) * dh;
        const auto v = vm_.block(rows, start, dh, n);
        const auto q = qm_.block(rows, start, dh, n);
        const auto k = km_.block(rows, start, dh, n);
        const nn::Mat<S> dout = dctx.block(rows, start, dh, n);
        dv.block(rows, start, dh, n) += dout * a.transpose();
        const nn::Mat<S> da = v.transpose() * dout;
        const Eigen::Matrix<S, 1, Eigen::Dynamic> inner = (a.array() * da.array()).colwise().sum();
        const nn::Mat<S> ds = (a.array() * (da.array().rowwise() - inner.array())).matrix() * scale;
        dq.block(rows, start, dh, n) += k * ds;
        dk.block(rows, start, dh, n) += q * ds.transpose();
      }
    }
    return q_.backward(dq) + k_.backward(dk) + v_.backward(dv);
  }

  void collect(nn::ParameterSet<S>& set) {
    q_.collect(set);
    k_.collect(set);
    v_.collect(set);
    o_.collect(set);
  }

 private:
  Eigen::Index head_dim() const { return q_.out_features() / heads_; }

  nn::Mat<S> attend(const nn::Mat<S>& q, const nn::Mat<S>& k, const nn::Mat<S>& v,
                    const std::vector<Eigen::Index>& offsets, std::vector<nn::Mat<S>>& weights) const {
    const auto dh = head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    nn::Mat<S> ctx(q.rows(), q.cols());
    weights.clear();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const auto start = offsets[s];
      const auto n = offsets[s + 1] - start;
      for (int h = 0; h < heads_; ++h) {
        const auto rows = static_cast<Eigen::Index>(h) * dh;
        nn::Mat<S> a = (k.block(rows, start, dh, n).transpose() * q.block(rows, start, dh, n)) * scale;
        detail::softmax_columns(a);
        ctx.block(rows, start, dh, n) = v.block(rows, start, dh, n) * a;
        weights.push_back(std::move(a));
      }
    }
    return ctx;
  }

  int heads_ = 1;
  nn::Linear<S> q_, k_, v_, o_;
  std::vector<Eigen::Index> offsets_;
  nn::Mat<S> qm_, km_, vm_;
  std::vector<nn::Mat<S>> weights_;
};

/// Pre-norm transformer encoder block.
template <typename S>
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(int model_dim, int heads, int ff_dim, const std::string& name)
      : ln1_(model_dim, name + ".ln1"),
        attn_(model_dim, heads, name + ".attn"),
        ln2_(model_dim, name + ".ln2"),
        ff1_(model_dim, ff_dim, name + ".ff1"),
        ff2_(ff_dim, model_dim, name + ".ff2") {}

  void init(Rng& rng) {
    attn_.init(rng);
    ff1_.init(rng);
    ff2_.init(rng);
  }

  nn::Mat<S> apply(const nn::Mat<S>& x, const std::vector<Eigen::Index>& offsets) const {
    const nn::Mat<S> x2 = x + attn_.apply(ln1_.apply(x), offsets);
    return x2 + ff2_.apply(nn::Relu<S>::apply(ff1_.apply(ln2_.apply(x2))));
  }

  nn::Mat<S> forward(const nn::Mat<S>& x, const std::vector<Eigen::Index>& offsets) {
    const nn::Mat<S> x2 = x + attn_.forward(ln1_.forward(x), offsets);
    return x2 + ff2_.forward(relu_.forward(ff1_.forward(ln2_.forward(x2))));
  }

  nn::Mat<S> backward(const nn::Mat<S>& dy) {
    const nn::Mat<S> dx2 = dy + ln2_.backward(ff1_.backward(relu_.backward(ff2_.backward(dy))));
    return dx2 + ln1_.backward(attn_.backward(dx2));
  }

  void collect(nn::ParameterSet<S>& set) {
    ln1_.collect(set);
    attn_.collect(set);
    ln2_.collect(set);
    ff1_.collect(set);
    ff2_.collect(set);
  }

 private:
  nn::LayerNorm<S> ln1_;
  SelfAttention<S> attn_;
  nn::LayerNorm<S> ln2_;
  nn::Linear<S> ff1_, ff2_;
  nn::Relu<S> relu_;
};

/// Feature aggregator g_phi with its classifier c_phi. Tokens are projected to
/// model_dim, tagged with a learned per-slot embedding, passed through the
/// encoder blocks, mean-pooled over the sample's (kept) tokens and projected
/// back to embedding_dim through a ReLU, so the output lives in the same
/// non-negative range as encoder embeddings.
template <typename S>
class Aggregator {
 public:
  Aggregator() = default;
  explicit Aggregator(const AggregatorConfig& cfg)
      : cfg_(cfg),
        in_proj_(cfg.embedding_dim, cfg.model_dim, "agg.in_proj"),
        slot_embed_("agg.slot_embed", cfg.model_dim, cfg.slots),
        final_ln_(cfg.model_dim, "agg.final_ln"),
        out_proj_(cfg.model_dim, cfg.embedding_dim, "agg.out_proj"),
        classifier_(cfg.embedding_dim, cfg.classifier_hidden, "agg_cls") {
    for (int b = 0; b < cfg.blocks; ++b) {
      blocks_.emplace_back(cfg.model_dim, cfg.heads, cfg.ff_dim, "agg.block" + std::to_string(b));
    }
  }

  /// Slot embeddings are drawn last so banks of different sizes share every
  /// other initial weight.
  void init(Rng& rng) {
    in_proj_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    out_proj_.init(rng);
    classifier_.init(rng);
    nn::fill_uniform(slot_embed_.value, rng, 0.1);
  }

  const AggregatorConfig& config() const { return cfg_; }

  /// e_KD for every sample of the batch (embedding_dim x samples).
  nn::Mat<S> aggregate(const TokenBatch<S>& batch) const {
    nn::Mat<S> h = embed_tokens(batch);
    for (const auto& b : blocks_) h = b.apply(h, batch.offsets);
    return nn::Relu<S>::apply(out_proj_.apply(pool(final_ln_.apply(h), batch.offsets)));
  }

  /// Classifier probabilities for aggregated embeddings (1 x samples).
  nn::Mat<S> predict(const nn::Mat<S>& e_kd) const { return classifier_.probabilities(e_kd); }

  /// Training path: aggregate + classify, returning logits; caches for backward.
  nn::Mat<S> forward_logits(const TokenBatch<S>& batch) {
    e_kd_ = forward_embedding(batch);
    return classifier_.forward(e_kd_);
  }

  nn::Mat<S> forward_embedding(const TokenBatch<S>& batch) {
    offsets_ = batch.offsets;
    slots_ = batch.slots;
    nn::Mat<S> h = in_proj_.forward(batch.tokens);
    for (std::size_t c = 0; c < slots_.size(); ++c) h.col(static_cast<Eigen::Index>(c)) += slot_embed_.value.col(slots_[c]);
    for (auto& b : blocks_) h = b.forward(h, offsets_);
    h = final_ln_.forward(h);
    return out_relu_.forward(out_proj_.forward(pool(h, offsets_)));
  }

  /// Backward from classifier logits; returns the gradient w.r.t. the tokens.
  nn::Mat<S> backward_logits(const nn::Mat<S>& d_logits) { return backward_embedding(classifier_.backward(d_logits)); }

  nn::Mat<S> backward_embedding(const nn::Mat<S>& d_embedding) {
    const nn::Mat<S> dpooled = out_proj_.backward(out_relu_.backward(d_embedding));
    nn::Mat<S> dh(dpooled.rows(), offsets_.back());
    for (std::size_t s = 0; s + 1 < offsets_.size(); ++s) {
      const auto n = offsets_[s + 1] - offsets_[s];
      dh.middleCols(offsets_[s], n) = (dpooled.col(static_cast<Eigen::Index>(s)) / static_cast<S>(n)).replicate(1, n);
    }
    dh = final_ln_.backward(dh);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dh = it->backward(dh);
    for (std::size_t c = 0; c < slots_.size(); ++c) slot_embed_.grad.col(slots_[c]) += dh.col(static_cast<Eigen::Index>(c));
    return in_proj_.backward(dh);
  }

  /// g_phi parameters.
  void collect_aggregator(nn::ParameterSet<S>& set) {
    in_proj_.collect(set);
    set.add(slot_embed_);
    for (auto& b : blocks_) b.collect(set);
    final_ln_.collect(set);
    out_proj_.collect(set);
  }
  /// c_phi parameters.
  void collect_classifier(nn::ParameterSet<S>& set) { classifier_.collect(set); }
  void collect(nn::ParameterSet<S>& set) {
    collect_aggregator(set);
    collect_classifier(set);
  }

 private:
  nn::Mat<S> embed_tokens(const TokenBatch<S>& batch) const {
    if (batch.tokens.rows() != cfg_.embedding_dim) {
      throw std::invalid_argument("aggregator: token width " + std::to_string(batch.tokens.rows()) + " vs d=" +
                                  std::to_string(cfg_.embedding_dim));
    }
    nn::Mat<S> h = in_proj_.apply(batch.tokens);
    for (std::size_t c = 0; c < batch.slots.size(); ++c) {
      const int slot = batch.slots[c];
      if (slot < 0 || slot >= cfg_.slots) throw std::invalid_argument("aggregator: slot out of range");
      h.col(static_cast<Eigen::Index>(c)) += slot_embed_.value.col(slot);
    }
    return h;
  }

  static nn::Mat<S> pool(const nn::Mat<S>& h, const std::vector<Eigen::Index>& offsets) {
    nn::Mat<S> out(h.rows(), static_cast<Eigen::Index>(offsets.size()) - 1);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      out.col(static_cast<Eigen::Index>(s)) = h.middleCols(offsets[s], offsets[s + 1] - offsets[s]).rowwise().mean();
    }
    return out;
  }

  AggregatorConfig cfg_;
  nn::Linear<S> in_proj_;
  nn::Parameter<S> slot_embed_;
  std::vector<EncoderBlock<S>> blocks_;
  nn::LayerNorm<S> final_ln_;
  nn::Linear<S> out_proj_;
  nn::Relu<S> out_relu_;
  nn::MlpHead<S> classifier_;
  std::vector<Eigen::Index> offsets_;
  std::vector<int> slots_;
  nn::Mat<S> e_kd_;
};

}  // namespace mtms
