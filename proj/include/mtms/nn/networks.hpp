#pragma once

#include <string>
#include <vector>

#include "mtms/nn/layers.hpp"

namespace mtms::nn {

struct EncoderConfig {
  std::vector<int> channels{8, 16, 32};  // widths of all blocks but the last
  int embedding_dim = 128;               // width of the last block = embedding length
};

/// Convolutional feature extractor: blocks of conv3x3 -> batchnorm -> relu ->
/// 2x2 average pool, then global average pooling to an embedding_dim vector.
template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, const std::string& name) : cfg_(cfg) {
    int in = 1;
    std::vector<int> widths = cfg.channels;
    widths.push_back(cfg.embedding_dim);
    for (std::size_t b = 0; b < widths.size(); ++b) {
      const std::string prefix = name + ".block" + std::to_string(b);
      blocks_.push_back({Conv3x3<S>(in, widths[b], prefix + ".conv"), BatchNorm<S>(widths[b], prefix + ".bn"), {}, {}});
      in = widths[b];
    }
  }

  void init(Rng& rng) {
    for (auto& b : blocks_) b.conv.init(rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  int embedding_dim() const { return cfg_.embedding_dim; }

  /// Evaluation-mode embeddings (embedding_dim x batch); no state is touched.
  Mat<S> embed(const FeatureMap<S>& x) const {
    FeatureMap<S> h = x;
    for (const auto& b : blocks_) {
      h = b.conv.apply(h);
      h.data = Relu<S>::apply(b.bn.apply(h.data));
      h = AvgPool2<S>::apply(h);
    }
    return GlobalAvgPool<S>::apply(h);
  }

  Mat<S> forward(const FeatureMap<S>& x, Mode mode) {
    FeatureMap<S> h = x;
    for (auto& b : blocks_) {
      h = b.conv.forward(h);
      h.data = b.relu.forward(b.bn.forward(h.data, mode));
      h = b.pool.forward(h);
    }
    return gap_.forward(h);
  }

  /// Replaces the running batch-norm estimates with averages over `batches`
  /// (training-mode statistics, fixed weights).
  template <typename Range>
  void recalibrate(const Range& batches) {
    for (auto& b : blocks_) b.bn.begin_accumulation();
    for (const auto& x : batches) forward(x, Mode::kTrain);
    for (auto& b : blocks_) b.bn.end_accumulation();
  }

  /// Returns the gradient w.r.t. the input map.
  FeatureMap<S> backward(const Mat<S>& d_embedding) {
    FeatureMap<S> g = gap_.backward(d_embedding);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      g = it->pool.backward(g);
      g.data = it->bn.backward(it->relu.backward(g.data));
      g = it->conv.backward(g);
    }
    return g;
  }

  void collect(ParameterSet<S>& set) {
    for (auto& b : blocks_) {
      b.conv.collect(set);
      b.bn.collect(set);
    }
  }

 private:
  struct Block {
    Conv3x3<S> conv;
    BatchNorm<S> bn;
    Relu<S> relu;
    AvgPool2<S> pool;
  };

  EncoderConfig cfg_;
  std::vector<Block> blocks_;
  GlobalAvgPool<S> gap_;
};

/// Two-layer classifier in -> hidden -> 1 producing logits; the sigmoid is
/// applied by the caller (or fused into the loss).
template <typename S>
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(int in, int hidden, const std::string& name)
      : fc1_(in, hidden, name + ".fc1"), fc2_(hidden, 1, name + ".fc2") {}

  void init(Rng& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
  }

  Mat<S> logits(const Mat<S>& x) const { return fc2_.apply(Relu<S>::apply(fc1_.apply(x))); }
  Mat<S> probabilities(const Mat<S>& x) const { return Sigmoid<S>::apply(logits(x)); }

  Mat<S> forward(const Mat<S>& x) { return fc2_.forward(relu_.forward(fc1_.forward(x))); }
  Mat<S> backward(const Mat<S>& d_logits) { return fc1_.backward(relu_.backward(fc2_.backward(d_logits))); }

  void collect(ParameterSet<S>& set) {
    fc1_.collect(set);
    fc2_.collect(set);
  }

 private:
  Linear<S> fc1_, fc2_;
  Relu<S> relu_;
};

/// Adversarial domain classifier: gradient reversal -> in -> hidden -> batchnorm
/// -> relu -> K with log-softmax.
template <typename S>
class DomainHead {
 public:
  DomainHead() = default;
  DomainHead(int in, int hidden, int domains, double lambda, const std::string& name)
      : grl_(lambda),
        fc1_(in, hidden, name + ".fc1"),
        bn_(hidden, name + ".bn"),
        fc2_(hidden, domains, name + ".fc2") {}

  void init(Rng& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
  }

  int domains() const { return fc2_.out_features(); }
  void set_lambda(double l) { grl_.set_lambda(l); }

  Mat<S> log_probs(const Mat<S>& x) const {
    return LogSoftmax<S>::apply(fc2_.apply(Relu<S>::apply(bn_.apply(fc1_.apply(GradReverse<S>::apply(x))))));
  }

  Mat<S> forward(const Mat<S>& x, Mode mode) {
    return lsm_.forward(fc2_.forward(relu_.forward(bn_.forward(fc1_.forward(grl_.forward(x)), mode))));
  }

  /// Gradient w.r.t. the input features, already reversed and scaled.
  Mat<S> backward(const Mat<S>& d_log_probs) {
    return grl_.backward(fc1_.backward(bn_.backward(relu_.backward(fc2_.backward(lsm_.backward(d_log_probs))))));
  }

  void collect(ParameterSet<S>& set) {
    fc1_.collect(set);
    bn_.collect(set);
    fc2_.collect(set);
  }

 private:
  GradReverse<S> grl_;
  Linear<S> fc1_;
  BatchNorm<S> bn_;
  Relu<S> relu_;
  Linear<S> fc2_;
  LogSoftmax<S> lsm_;
};

}  // namespace mtms::nn
