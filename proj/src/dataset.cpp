#include "mtms/dataset.hpp"

#include "mtms/seed.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtms {

bool is_power_of_two(long n) { return n > 0 && (n & (n - 1)) == 0; }

void validate_image(const Image& img) {
  if (!is_power_of_two(img.rows()) || !is_power_of_two(img.cols())) {
    throw std::invalid_argument("image extents must be powers of two, got " +
                                std::to_string(img.rows()) + "x" + std::to_string(img.cols()));
  }
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const float v = img.data()[i];
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw std::invalid_argument("image intensity out of [0,1] at flat index " + std::to_string(i));
    }
  }
}

std::array<std::size_t, 2> Dataset::class_counts() const {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& s : samples) {
    if (s.label) ++counts[static_cast<std::size_t>(*s.label)];
  }
  return counts;
}

void Dataset::validate() const {
  for (const auto& s : samples) {
    if (s.domain_id != domain_id) {
      throw std::invalid_argument("dataset " + name + ": sample " + std::to_string(s.id) +
                                  " has domain " + std::to_string(s.domain_id));
    }
    if (s.label && *s.label != 0 && *s.label != 1) {
      throw std::invalid_argument("dataset " + name + ": label must be 0 or 1");
    }
    validate_image(s.image);
  }
}

namespace {

// Index groups {class 0, class 1, unlabelled}, each shuffled.
std::array<std::vector<std::size_t>, 3> shuffled_groups(const Dataset& ds, Rng& rng) {
  std::array<std::vector<std::size_t>, 3> groups;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& lbl = ds.samples[i].label;
    groups[lbl ? static_cast<std::size_t>(*lbl) : 2].push_back(i);
  }
  for (auto& g : groups) shuffle(g, rng);
  return groups;
}

}  // namespace

SplitSpec split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (ds.empty()) throw std::invalid_argument("split_dataset: empty dataset " + ds.name);
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: test_fraction must lie in [0,1)");
  }
  Rng rng(seed);
  auto groups = shuffled_groups(ds, rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));

  // Largest-remainder allocation of n_test across groups.
  std::array<std::size_t, 3> take{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const double exact = static_cast<double>(n_test) * static_cast<double>(groups[g].size()) /
                         static_cast<double>(ds.size());
    take[g] = static_cast<std::size_t>(std::floor(exact));
    rem[g] = exact - static_cast<double>(take[g]);
    assigned += take[g];
  }
  while (assigned < n_test) {
    std::size_t best = 3;
    for (std::size_t g = 0; g < 3; ++g) {
      if (take[g] < groups[g].size() && (best == 3 || rem[g] > rem[best])) best = g;
    }
    ++take[best];
    rem[best] = -1.0;
    ++assigned;
  }

  SplitSpec spec;
  spec.seed = seed;
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t i = 0; i < groups[g].size(); ++i) {
      (i < take[g] ? spec.test : spec.train).push_back(groups[g][i]);
    }
  }
  std::sort(spec.train.begin(), spec.train.end());
  std::sort(spec.test.begin(), spec.test.end());
  return spec;
}

std::vector<SplitSpec> make_kfold(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<std::size_t>(k) > ds.size()) {
    throw std::invalid_argument("make_kfold: need 2 <= k <= |ds|, got k=" + std::to_string(k) +
                                ", |ds|=" + std::to_string(ds.size()));
  }
  Rng rng(seed);
  const auto groups = shuffled_groups(ds, rng);
  std::vector<int> fold_of(ds.size(), 0);
  std::size_t pos = 0;
  for (const auto& g : groups) {
    for (std::size_t idx : g) fold_of[idx] = static_cast<int>(pos++ % static_cast<std::size_t>(k));
  }
  std::vector<SplitSpec> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    auto& spec = folds[static_cast<std::size_t>(f)];
    spec.fold_id = f;
    spec.seed = seed;
    for (std::size_t i = 0; i < ds.size(); ++i) (fold_of[i] == f ? spec.test : spec.train).push_back(i);
  }
  return folds;
}

TargetPartition select_labelled_subset(const Dataset& ds, int n_per_class, std::uint64_t seed) {
  if (n_per_class < 0) throw std::invalid_argument("select_labelled_subset: negative n_per_class");
  Rng rng(seed);
  const auto groups = shuffled_groups(ds, rng);
  const auto n = static_cast<std::size_t>(n_per_class);
  for (int c = 0; c < 2; ++c) {
    if (groups[static_cast<std::size_t>(c)].size() < n) {
      throw std::invalid_argument("select_labelled_subset: class " + std::to_string(c) + " has only " +
                                  std::to_string(groups[static_cast<std::size_t>(c)].size()) +
                                  " labelled samples, need " + std::to_string(n));
    }
  }
  std::vector<bool> chosen(ds.size(), false);
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < n; ++i) chosen[groups[static_cast<std::size_t>(c)][i]] = true;
  }
  TargetPartition part;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (chosen[i]) {
      part.labelled.push_back(ds.samples[i]);
    } else {
      Sample s = ds.samples[i];
      s.label.reset();
      part.unlabelled.push_back(std::move(s));
    }
  }
  return part;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Dataset out{ds.name, ds.domain_id, {}};
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(ds.samples.at(i));
  return out;
}

}  // namespace mtms
