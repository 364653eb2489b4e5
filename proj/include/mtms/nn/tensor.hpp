#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtms/seed.hpp"

namespace mtms::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Batch-norm and friends behave differently while training.
enum class Mode { kTrain, kEval };

/// Batch of feature maps. `data` is channels x (batch*height*width); column
/// (n*height + r)*width + c holds the channel vector of pixel (r,c) of sample n.
/// Dense activations use the same column-per-sample convention with height = width = 1.
template <typename S>
struct FeatureMap {
  Mat<S> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index column(int n, int r, int c) const {
    return (static_cast<Eigen::Index>(n) * height + r) * width + c;
  }
};

template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;  // false for running statistics

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)), value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)), trainable(train) {}
};

/// Ordered view over the parameters of one or more modules. The order is the
/// serialization order and the key for optimizer state.
template <typename S>
class ParameterSet {
 public:
  void add(Parameter<S>& p) { params_.push_back(&p); }
  void append(const ParameterSet& other) {
    params_.insert(params_.end(), other.params_.begin(), other.params_.end());
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) const { return *params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() const {
    for (auto* p : params_) p->grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto* p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<Parameter<S>*> params_;
};

/// Column-stacked batch of images as a single-channel feature map.
template <typename S, typename ImageRange>
FeatureMap<S> images_to_map(const ImageRange& images) {
  FeatureMap<S> fm;
  fm.batch = static_cast<int>(std::size(images));
  if (fm.batch == 0) throw std::invalid_argument("images_to_map: empty batch");
  const auto& first = *std::begin(images);
  fm.height = static_cast<int>(first.rows());
  fm.width = static_cast<int>(first.cols());
  const Eigen::Index hw = static_cast<Eigen::Index>(fm.height) * fm.width;
  fm.data.resize(1, hw * fm.batch);
  Eigen::Index off = 0;
  for (const auto& img : images) {
    if (img.rows() != fm.height || img.cols() != fm.width) {
      throw std::invalid_argument("images_to_map: mixed image shapes");
    }
    // Images are row-major, so the flat buffer is already in (r, c) order.
    for (Eigen::Index i = 0; i < hw; ++i) fm.data(0, off + i) = static_cast<S>(img.data()[i]);
    off += hw;
  }
  return fm;
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

}  // namespace mtms::nn
