#include "mtms/batching.hpp"

#include <numeric>
#include <stdexcept>

namespace mtms {

nn::FeatureMap<float> batch_map(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("batch_map: empty batch");
  const auto& first = samples[indices.front()].image;
  nn::FeatureMap<float> fm;
  fm.batch = static_cast<int>(indices.size());
  fm.height = static_cast<int>(first.rows());
  fm.width = static_cast<int>(first.cols());
  const Eigen::Index hw = first.size();
  fm.data.resize(1, hw * fm.batch);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& img = samples[indices[k]].image;
    if (img.rows() != fm.height || img.cols() != fm.width) throw std::invalid_argument("batch_map: mixed shapes");
    fm.data.middleCols(static_cast<Eigen::Index>(k) * hw, hw) = Eigen::Map<const Eigen::RowVectorXf>(img.data(), hw);
  }
  return fm;
}

nn::FeatureMap<float> batch_map(std::span<const Sample> samples) {
  return batch_map(samples, index_order(samples.size(), nullptr));
}

std::vector<int> batch_labels(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (!samples[i].label) throw std::invalid_argument("batch_labels: sample " + std::to_string(samples[i].id) + " has no label");
    out.push_back(*samples[i].label);
  }
  return out;
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, int batch_size, std::size_t min_size) {
  if (batch_size < 1) throw std::invalid_argument("chunk: batch_size must be positive");
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < order.size(); i += bs) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + bs)));
  }
  if (out.size() > 1 && out.back().size() < min_size) {
    auto tail = std::move(out.back());
    out.pop_back();
    out.back().insert(out.back().end(), tail.begin(), tail.end());
  }
  return out;
}

std::vector<std::size_t> index_order(std::size_t n, Rng* rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (rng) shuffle(idx, *rng);
  return idx;
}

}  // namespace mtms
