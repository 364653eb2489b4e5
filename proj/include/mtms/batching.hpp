#pragma once

#include <span>
#include <vector>

#include "mtms/dataset.hpp"
#include "mtms/nn/tensor.hpp"

namespace mtms {

nn::FeatureMap<float> batch_map(std::span<const Sample> samples, std::span<const std::size_t> indices);
nn::FeatureMap<float> batch_map(std::span<const Sample> samples);

/// Labels of the indexed samples; throws if any is missing.
std::vector<int> batch_labels(std::span<const Sample> samples, std::span<const std::size_t> indices);

/// Consecutive chunks of `order`. A trailing chunk smaller than `min_size` is
/// merged into the previous one (batch statistics need at least two samples).
std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, int batch_size,
                                            std::size_t min_size = 2);

/// 0..n-1, shuffled when rng is given.
std::vector<std::size_t> index_order(std::size_t n, Rng* rng);

}  // namespace mtms
