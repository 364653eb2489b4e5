#pragma once

#include "mtms/dataset.hpp"
#include "mtms/kspace.hpp"

#include <cstdint>
#include <string>

namespace mtms {

/// Appearance of one synthetic imaging domain. Every phantom holds a body
/// ellipse with a nested "heart" (myocardium ring around a bright pool) plus
/// a random number of extra ellipses.
struct DomainParams {
  std::string name = "domain";
  int domain_id = 0;
  int ellipses_min = 1;
  int ellipses_max = 4;
  double gamma = 1.0;         // intensity exponent applied after blurring
  double noise_sigma = 0.0;   // additive Gaussian noise
  int blur_radius = 0;        // box blur half-width in pixels
  double background = 0.0;    // intensity floor outside the structures
  double contrast = 1.0;      // structure intensity scale before gamma
  int image_size = 32;
  // Upper ends for per-image sampling; a value below the field above keeps it fixed.
  double gamma_max = -1.0;
  double noise_sigma_max = -1.0;
  int blur_radius_max = -1;
  double background_max = -1.0;
  double contrast_max = -1.0;
};

/// Per-image sampling ranges for CorruptionParams.
struct CorruptionRanges {
  Axis axis = Axis::kRows;
  int shift_min = 2;
  int shift_max = 5;
  double frequency_min = 0.05;
  double frequency_max = 0.3;
  double threshold_min = 0.3;
  double threshold_max = 0.7;
};

/// Noise-free phantom.
Image render_phantom(const DomainParams& params, std::uint64_t seed);

/// Phantom with the domain's acquisition noise; deterministic in (params, seed).
Image gen_phantom(const DomainParams& params, std::uint64_t seed);

/// Adds the domain's noise to an image and clamps to [0,1].
Image add_domain_noise(const Image& image, const DomainParams& params, std::uint64_t seed);

CorruptionParams sample_corruption(const CorruptionRanges& ranges, std::uint64_t seed);

/// Balanced dataset: ids [0, n) are clean phantoms, ids [n, 2n) are fresh phantoms
/// corrupted in k-space. Rejects ranges that allow a zero shift.
Dataset build_domain_dataset(const DomainParams& params, const CorruptionRanges& corruption, int n_per_class,
                             std::uint64_t seed);

}  // namespace mtms
