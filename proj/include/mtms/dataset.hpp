#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mtms {

/// Grayscale image, intensities in [0,1], row-major; both extents are powers of two.
using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool is_power_of_two(long n);

/// Throws std::invalid_argument if the image breaks the Image invariants.
void validate_image(const Image& img);

struct Sample {
  Image image;
  std::optional<int> label;  // 0 = clean, 1 = artifact
  int domain_id = 0;
  std::uint32_t id = 0;      // position in the originating dataset
};

struct Dataset {
  std::string name;
  int domain_id = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// {clean, artifact} counts over labelled samples.
  std::array<std::size_t, 2> class_counts() const;
  /// Throws on mixed domains, bad labels or bad images.
  void validate() const;
};

struct TargetPartition {
  std::vector<Sample> labelled;
  std::vector<Sample> unlabelled;  // labels stripped
};

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::optional<int> fold_id;
  std::uint64_t seed = 0;
};

/// Stratified train/test split; |test| = round(test_fraction * |ds|).
SplitSpec split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Stratified k-fold partition; fold i tests on the i-th slice.
std::vector<SplitSpec> make_kfold(const Dataset& ds, int k, std::uint64_t seed);

/// Picks n_per_class labelled samples per class; every other sample goes to the
/// unlabelled side with its label removed.
TargetPartition select_labelled_subset(const Dataset& ds, int n_per_class, std::uint64_t seed);

/// Dataset restricted to the given indices, in the given order.
Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices);

}  // namespace mtms
