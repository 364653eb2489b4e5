#pragma once

#include "mtms/dataset.hpp"

#include <complex>
#include <vector>

namespace mtms {

using Spectrum = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Axis { kRows, kColumns };

/// One motion event: the image is shifted circularly by `shift_pixels` along
/// `axis`, and k-space line k comes from the shifted copy whenever
/// sin(2*pi*frequency*k + phase) > threshold.
struct CorruptionParams {
  int shift_pixels = 3;
  Axis axis = Axis::kRows;
  double frequency = 0.1;
  double phase = 0.0;
  double threshold = 0.5;
};

/// Un-normalized forward 2-D DFT (DC bin = sum of pixels). Power-of-two extents only.
Spectrum fft2(const Image& image);
Spectrum fft2(const Spectrum& x);
/// Inverse of fft2 (scaled by 1/(H*W)).
Spectrum ifft2(const Spectrum& spectrum);

/// Pixel (r,c) moves to ((r+shift) mod H, c) for Axis::kRows, and to (r, (c+shift) mod W)
/// for Axis::kColumns.
Image translate_circular(const Image& image, int shift, Axis axis);

std::vector<bool> respiratory_mask(int n_lines, const CorruptionParams& params);

/// Splices k-space lines of the translated image into the reference spectrum
/// (rows of k-space for Axis::kRows, columns otherwise) and returns the clamped
/// magnitude image.
Image corrupt_kspace(const Image& image, const CorruptionParams& params);

}  // namespace mtms
