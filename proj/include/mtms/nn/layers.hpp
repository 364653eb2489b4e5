#pragma once

#include <cmath>
#include <string>

#include "mtms/nn/tensor.hpp"

namespace mtms::nn {

// Every layer follows the same contract: `apply` is a pure forward pass,
// `forward` additionally caches what `backward` needs, and `backward` maps the
// upstream gradient to the input gradient while accumulating parameter
// gradients into Parameter::grad.

template <typename S>
void fill_uniform(Mat<S>& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(uniform(rng, -bound, bound));
}

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, std::string name)
      : weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1), name_(std::move(name)) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
    fill_uniform(weight_.value, rng, bound);
    fill_uniform(bias_.value, rng, bound);
  }

  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }

  Mat<S> apply(const Mat<S>& x) const {
    if (x.rows() != weight_.value.cols()) {
      throw std::invalid_argument("linear " + name_ + ": expected " + std::to_string(in_features()) +
                                  " input rows, got " + shape_str(x.rows(), x.cols()));
    }
    Mat<S> y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }

  Mat<S> forward(const Mat<S>& x) {
    input_ = x;
    return apply(x);
  }

  Mat<S> backward(const Mat<S>& dy) {
    weight_.grad.noalias() += dy * input_.transpose();
    bias_.grad += dy.rowwise().sum();
    return weight_.value.transpose() * dy;
  }

  void collect(ParameterSet<S>& set) {
    set.add(weight_);
    set.add(bias_);
  }

  Parameter<S>& weight() { return weight_; }
  Parameter<S>& bias() { return bias_; }

 private:
  Parameter<S> weight_, bias_;
  std::string name_;
  Mat<S> input_;
};

/// 3x3 convolution, stride 1, zero padding 1, via im2col.
template <typename S>
class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(int in_ch, int out_ch, std::string name)
      : weight_(name + ".weight", out_ch, 9 * in_ch), bias_(name + ".bias", out_ch, 1), name_(std::move(name)) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(weight_.value.cols()));
    fill_uniform(weight_.value, rng, bound);
    fill_uniform(bias_.value, rng, bound);
  }

  int in_channels() const { return static_cast<int>(weight_.value.cols() / 9); }

  FeatureMap<S> apply(const FeatureMap<S>& x) const { return conv(x, im2col(x)); }

  FeatureMap<S> forward(const FeatureMap<S>& x) {
    cols_ = im2col(x);
    shape_ = x;
    shape_.data.resize(0, 0);
    in_ch_ = x.channels();
    return conv(x, cols_);
  }

  FeatureMap<S> backward(const FeatureMap<S>& dy) {
    weight_.grad.noalias() += dy.data * cols_.transpose();
    bias_.grad += dy.data.rowwise().sum();
    const Mat<S> dcols = weight_.value.transpose() * dy.data;
    FeatureMap<S> dx = shape_;
    dx.data = Mat<S>::Zero(in_ch_, dy.data.cols());
    for (int n = 0; n < dx.batch; ++n) {
      for (int r = 0; r < dx.height; ++r) {
        for (int c = 0; c < dx.width; ++c) {
          const auto col = dx.column(n, r, c);
          for (int k = 0; k < 9; ++k) {
            const int rr = r + k / 3 - 1;
            const int cc = c + k % 3 - 1;
            if (rr < 0 || rr >= dx.height || cc < 0 || cc >= dx.width) continue;
            dx.data.col(dx.column(n, rr, cc)) += dcols.block(k * in_ch_, col, in_ch_, 1);
          }
        }
      }
    }
    return dx;
  }

  void collect(ParameterSet<S>& set) {
    set.add(weight_);
    set.add(bias_);
  }

 private:
  Mat<S> im2col(const FeatureMap<S>& x) const {
    const int ch = x.channels();
    if (ch != in_channels()) {
      throw std::invalid_argument("conv3x3 " + name_ + ": expected " + std::to_string(in_channels()) +
                                  " channels, got " + std::to_string(ch));
    }
    Mat<S> cols = Mat<S>::Zero(9 * ch, x.data.cols());
    for (int n = 0; n < x.batch; ++n) {
      for (int r = 0; r < x.height; ++r) {
        for (int c = 0; c < x.width; ++c) {
          const auto col = x.column(n, r, c);
          for (int k = 0; k < 9; ++k) {
            const int rr = r + k / 3 - 1;
            const int cc = c + k % 3 - 1;
            if (rr < 0 || rr >= x.height || cc < 0 || cc >= x.width) continue;
            cols.block(k * ch, col, ch, 1) = x.data.col(x.column(n, rr, cc));
          }
        }
      }
    }
    return cols;
  }

  FeatureMap<S> conv(const FeatureMap<S>& x, const Mat<S>& cols) const {
    FeatureMap<S> y;
    y.batch = x.batch;
    y.height = x.height;
    y.width = x.width;
    y.data.noalias() = weight_.value * cols;
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  Parameter<S> weight_, bias_;
  std::string name_;
  Mat<S> cols_;
  FeatureMap<S> shape_;
  int in_ch_ = 0;
};

/// Batch normalization over columns (per row = per channel / feature).
/// Training mode normalizes with batch statistics and updates the running
/// estimates with momentum 0.1; evaluation mode uses the running estimates.
template <typename S>
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm() = default;
  BatchNorm(int features, std::string name)
      : gamma_(name + ".gamma", features, 1),
        beta_(name + ".beta", features, 1),
        running_mean_(name + ".running_mean", features, 1, false),
        running_var_(name + ".running_var", features, 1, false),
        name_(std::move(name)) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  Mat<S> apply(const Mat<S>& x) const {
    check(x);
    const Vec<S> inv = (running_var_.value.col(0).array() + S(kEps)).rsqrt().matrix();
    const Mat<S> xhat = ((x.colwise() - running_mean_.value.col(0)).array().colwise() * inv.array()).matrix();
    Mat<S> y = (xhat.array().colwise() * gamma_.value.col(0).array()).matrix();
    y.colwise() += beta_.value.col(0);
    return y;
  }

  Mat<S> forward(const Mat<S>& x, Mode mode) {
    check(x);
    mode_ = mode;
    if (mode == Mode::kEval) {
      inv_std_ = (running_var_.value.col(0).array() + S(kEps)).rsqrt().matrix();
      xhat_ = ((x.colwise() - running_mean_.value.col(0)).array().colwise() * inv_std_.array()).matrix();
      Mat<S> y = (xhat_.array().colwise() * gamma_.value.col(0).array()).matrix();
      y.colwise() += beta_.value.col(0);
      return y;
    }
    const auto n = static_cast<S>(x.cols());
    const Vec<S> mean = x.rowwise().mean();
    const Mat<S> centered = x.colwise() - mean;
    const Vec<S> var = centered.array().square().rowwise().sum().matrix() / n;
    inv_std_ = (var.array() + S(kEps)).rsqrt().matrix();
    xhat_ = (centered.array().colwise() * inv_std_.array()).matrix();

    const S m = accumulated_ >= 0 ? S(1) / static_cast<S>(++accumulated_) : static_cast<S>(kMomentum);
    const S unbias = x.cols() > 1 ? n / (n - S(1)) : S(1);
    running_mean_.value.col(0) = (S(1) - m) * running_mean_.value.col(0) + m * mean;
    running_var_.value.col(0) = (S(1) - m) * running_var_.value.col(0) + m * unbias * var;

    Mat<S> y = (xhat_.array().colwise() * gamma_.value.col(0).array()).matrix();
    y.colwise() += beta_.value.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    const auto g = gamma_.value.col(0).array();
    beta_.grad.col(0) += dy.rowwise().sum();
    gamma_.grad.col(0) += (dy.array() * xhat_.array()).rowwise().sum().matrix();
    // Fixed statistics make the map affine in evaluation mode.
    if (mode_ == Mode::kEval) return (dy.array().colwise() * (g * inv_std_.array())).matrix();
    const auto n = static_cast<S>(dy.cols());
    const Mat<S> dxhat = (dy.array().colwise() * g).matrix();
    const Vec<S> sum_d = dxhat.rowwise().sum();
    const Vec<S> sum_dx = (dxhat.array() * xhat_.array()).rowwise().sum().matrix();
    Mat<S> dx = (n * dxhat).colwise() - sum_d;
    dx -= (xhat_.array().colwise() * sum_dx.array()).matrix();
    return (dx.array().colwise() * (inv_std_.array() / n)).matrix();
  }

  /// Until end_accumulation(), training-mode passes set the running estimates
  /// to the equal-weight average of their batch statistics.
  void begin_accumulation() { accumulated_ = 0; }
  void end_accumulation() { accumulated_ = -1; }

  void collect(ParameterSet<S>& set) {
    set.add(gamma_);
    set.add(beta_);
    set.add(running_mean_);
    set.add(running_var_);
  }

 private:
  void check(const Mat<S>& x) const {
    if (x.rows() != gamma_.value.rows()) {
      throw std::invalid_argument("batchnorm " + name_ + ": expected " + std::to_string(gamma_.value.rows()) +
                                  " features, got " + shape_str(x.rows(), x.cols()));
    }
  }

  Parameter<S> gamma_, beta_, running_mean_, running_var_;
  std::string name_;
  Mode mode_ = Mode::kEval;
  long accumulated_ = -1;
  Mat<S> xhat_;
  Vec<S> inv_std_;
};

/// Layer normalization over rows of each column (per token).
template <typename S>
class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  LayerNorm(int features, std::string name) : gamma_(name + ".gamma", features, 1), beta_(name + ".beta", features, 1) {
    gamma_.value.setOnes();
  }

  Mat<S> apply(const Mat<S>& x) const {
    Mat<S> xhat;
    Eigen::Matrix<S, 1, Eigen::Dynamic> inv;
    normalize(x, xhat, inv);
    return affine(xhat);
  }

  Mat<S> forward(const Mat<S>& x) {
    normalize(x, xhat_, inv_std_);
    return affine(xhat_);
  }

  Mat<S> backward(const Mat<S>& dy) {
    beta_.grad.col(0) += dy.rowwise().sum();
    gamma_.grad.col(0) += (dy.array() * xhat_.array()).rowwise().sum().matrix();
    const auto n = static_cast<S>(dy.rows());
    const Mat<S> dxhat = (dy.array().colwise() * gamma_.value.col(0).array()).matrix();
    const Eigen::Matrix<S, 1, Eigen::Dynamic> mean_d = dxhat.colwise().sum() / n;
    const Eigen::Matrix<S, 1, Eigen::Dynamic> mean_dx = (dxhat.array() * xhat_.array()).colwise().sum().matrix() / n;
    Mat<S> dx = dxhat.rowwise() - mean_d;
    dx -= (xhat_.array().rowwise() * mean_dx.array()).matrix();
    return (dx.array().rowwise() * inv_std_.array()).matrix();
  }

  void collect(ParameterSet<S>& set) {
    set.add(gamma_);
    set.add(beta_);
  }

 private:
  static void normalize(const Mat<S>& x, Mat<S>& xhat, Eigen::Matrix<S, 1, Eigen::Dynamic>& inv) {
    const auto n = static_cast<S>(x.rows());
    const Eigen::Matrix<S, 1, Eigen::Dynamic> mean = x.colwise().sum() / n;
    xhat = x.rowwise() - mean;
    inv = ((xhat.array().square().colwise().sum() / n) + S(kEps)).rsqrt().matrix();
    xhat = (xhat.array().rowwise() * inv.array()).matrix();
  }

  Mat<S> affine(const Mat<S>& xhat) const {
    Mat<S> y = (xhat.array().colwise() * gamma_.value.col(0).array()).matrix();
    y.colwise() += beta_.value.col(0);
    return y;
  }

  Parameter<S> gamma_, beta_;
  Mat<S> xhat_;
  Eigen::Matrix<S, 1, Eigen::Dynamic> inv_std_;
};

template <typename S>
class Relu {
 public:
  static Mat<S> apply(const Mat<S>& x) { return x.cwiseMax(S(0)); }
  Mat<S> forward(const Mat<S>& x) {
    mask_ = (x.array() > S(0)).template cast<S>().matrix();
    return apply(x);
  }
  Mat<S> backward(const Mat<S>& dy) const { return dy.cwiseProduct(mask_); }

 private:
  Mat<S> mask_;
};

template <typename S>
class Sigmoid {
 public:
  static Mat<S> apply(const Mat<S>& x) { return (S(1) / (S(1) + (-x.array()).exp())).matrix(); }
  Mat<S> forward(const Mat<S>& x) {
    out_ = apply(x);
    return out_;
  }
  Mat<S> backward(const Mat<S>& dy) const { return (dy.array() * out_.array() * (S(1) - out_.array())).matrix(); }

 private:
  Mat<S> out_;
};

/// Column-wise log-softmax (each column is one sample's class scores).
template <typename S>
class LogSoftmax {
 public:
  static Mat<S> apply(const Mat<S>& x) {
    Mat<S> y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const S mx = x.col(j).maxCoeff();
      const S lse = mx + std::log((x.col(j).array() - mx).exp().sum());
      y.col(j) = x.col(j).array() - lse;
    }
    return y;
  }
  Mat<S> forward(const Mat<S>& x) {
    out_ = apply(x);
    return out_;
  }
  Mat<S> backward(const Mat<S>& dy) const {
    const Mat<S> p = out_.array().exp().matrix();
    return dy - (p.array().rowwise() * dy.colwise().sum().array()).matrix();
  }

 private:
  Mat<S> out_;
};

/// 2x2 average pooling with stride 2.
template <typename S>
class AvgPool2 {
 public:
  static FeatureMap<S> apply(const FeatureMap<S>& x) {
    if (x.height % 2 != 0 || x.width % 2 != 0) {
      throw std::invalid_argument("avgpool2: extents must be even, got " + shape_str(x.height, x.width));
    }
    FeatureMap<S> y;
    y.batch = x.batch;
    y.height = x.height / 2;
    y.width = x.width / 2;
    y.data.resize(x.data.rows(), static_cast<Eigen::Index>(y.batch) * y.height * y.width);
    for (int n = 0; n < y.batch; ++n) {
      for (int r = 0; r < y.height; ++r) {
        for (int c = 0; c < y.width; ++c) {
          y.data.col(y.column(n, r, c)) =
              S(0.25) * (x.data.col(x.column(n, 2 * r, 2 * c)) + x.data.col(x.column(n, 2 * r, 2 * c + 1)) +
                         x.data.col(x.column(n, 2 * r + 1, 2 * c)) + x.data.col(x.column(n, 2 * r + 1, 2 * c + 1)));
        }
      }
    }
    return y;
  }

  FeatureMap<S> forward(const FeatureMap<S>& x) {
    in_shape_ = {Mat<S>(), x.batch, x.height, x.width};
    return apply(x);
  }

  FeatureMap<S> backward(const FeatureMap<S>& dy) const {
    FeatureMap<S> dx = in_shape_;
    dx.data.resize(dy.data.rows(), static_cast<Eigen::Index>(dx.batch) * dx.height * dx.width);
    for (int n = 0; n < dy.batch; ++n) {
      for (int r = 0; r < dy.height; ++r) {
        for (int c = 0; c < dy.width; ++c) {
          const auto g = (S(0.25) * dy.data.col(dy.column(n, r, c))).eval();
          dx.data.col(dx.column(n, 2 * r, 2 * c)) = g;
          dx.data.col(dx.column(n, 2 * r, 2 * c + 1)) = g;
          dx.data.col(dx.column(n, 2 * r + 1, 2 * c)) = g;
          dx.data.col(dx.column(n, 2 * r + 1, 2 * c + 1)) = g;
        }
      }
    }
    return dx;
  }

 private:
  FeatureMap<S> in_shape_;
};

/// Mean over all spatial positions: channels x batch.
template <typename S>
class GlobalAvgPool {
 public:
  static Mat<S> apply(const FeatureMap<S>& x) {
    const Eigen::Index hw = static_cast<Eigen::Index>(x.height) * x.width;
    Mat<S> y(x.data.rows(), x.batch);
    for (int n = 0; n < x.batch; ++n) y.col(n) = x.data.middleCols(n * hw, hw).rowwise().mean();
    return y;
  }

  Mat<S> forward(const FeatureMap<S>& x) {
    in_shape_ = {Mat<S>(), x.batch, x.height, x.width};
    return apply(x);
  }

  FeatureMap<S> backward(const Mat<S>& dy) const {
    FeatureMap<S> dx = in_shape_;
    const Eigen::Index hw = static_cast<Eigen::Index>(dx.height) * dx.width;
    dx.data.resize(dy.rows(), hw * dx.batch);
    for (int n = 0; n < dx.batch; ++n) {
      dx.data.middleCols(n * hw, hw) = (dy.col(n) / static_cast<S>(hw)).replicate(1, hw);
    }
    return dx;
  }

 private:
  FeatureMap<S> in_shape_;
};

/// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename S>
class GradReverse {
 public:
  explicit GradReverse(double lambda = 1.0) : lambda_(lambda) {}
  static Mat<S> apply(const Mat<S>& x) { return x; }
  Mat<S> forward(const Mat<S>& x) const { return x; }
  Mat<S> backward(const Mat<S>& dy) const { return -static_cast<S>(lambda_) * dy; }
  double lambda() const { return lambda_; }
  void set_lambda(double l) { lambda_ = l; }

 private:
  double lambda_;
};

}  // namespace mtms::nn
