#include "mtms/kspace.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mtms {

namespace {

using CVec = Eigen::VectorXcd;

void check_extents(Eigen::Index rows, Eigen::Index cols) {
  if (!is_power_of_two(rows) || !is_power_of_two(cols)) {
    throw std::invalid_argument("fft2: extents must be powers of two, got " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
}

Spectrum transform(const Spectrum& in, bool inverse) {
  check_extents(in.rows(), in.cols());
  Eigen::FFT<double> fft;
  Spectrum out = in;
  CVec src, dst;
  auto pass = [&](auto line) {
    src = line.transpose();
    if (inverse) fft.inv(dst, src); else fft.fwd(dst, src);
    line = dst.transpose();
  };
  // A length-1 transform is the identity (and the backend mishandles it).
  if (out.cols() > 1) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) pass(out.row(r));
  }
  if (out.rows() > 1) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) pass(out.col(c).transpose());
  }
  return out;
}

}  // namespace

Spectrum fft2(const Image& image) { return transform(image.cast<double>().cast<std::complex<double>>(), false); }

Spectrum fft2(const Spectrum& x) { return transform(x, false); }

Spectrum ifft2(const Spectrum& spectrum) { return transform(spectrum, true); }

Image translate_circular(const Image& image, int shift, Axis axis) {
  const auto h = image.rows();
  const auto w = image.cols();
  Image out(h, w);
  const auto extent = axis == Axis::kRows ? h : w;
  const auto s = ((static_cast<Eigen::Index>(shift) % extent) + extent) % extent;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (axis == Axis::kRows) out((r + s) % h, c) = image(r, c);
      else out(r, (c + s) % w) = image(r, c);
    }
  }
  return out;
}

std::vector<bool> respiratory_mask(int n_lines, const CorruptionParams& params) {
  if (n_lines < 1) throw std::invalid_argument("respiratory_mask: n_lines must be >= 1");
  std::vector<bool> mask(static_cast<std::size_t>(n_lines));
  for (int k = 0; k < n_lines; ++k) {
    mask[static_cast<std::size_t>(k)] =
        std::sin(2.0 * std::numbers::pi * params.frequency * k + params.phase) > params.threshold;
  }
  return mask;
}

Image corrupt_kspace(const Image& image, const CorruptionParams& params) {
  Spectrum combined = fft2(image);
  const Spectrum moved = fft2(translate_circular(image, params.shift_pixels, params.axis));
  const bool rows = params.axis == Axis::kRows;
  const auto mask = respiratory_mask(static_cast<int>(rows ? image.rows() : image.cols()), params);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) continue;
    const auto line = static_cast<Eigen::Index>(k);
    if (rows) combined.row(line) = moved.row(line);
    else combined.col(line) = moved.col(line);
  }
  return ifft2(combined).cwiseAbs().cwiseMin(1.0).cwiseMax(0.0).cast<float>();
}

}  // namespace mtms
