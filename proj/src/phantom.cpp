#include "mtms/phantom.hpp"

#include "mtms/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mtms {

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle, value;
};

void paint(Eigen::MatrixXd& canvas, const Ellipse& e) {
  const double ca = std::cos(e.angle);
  const double sa = std::sin(e.angle);
  for (Eigen::Index r = 0; r < canvas.rows(); ++r) {
    for (Eigen::Index c = 0; c < canvas.cols(); ++c) {
      const double dy = static_cast<double>(r) + 0.5 - e.cy;
      const double dx = static_cast<double>(c) + 0.5 - e.cx;
      const double u = (dx * ca + dy * sa) / e.rx;
      const double v = (-dx * sa + dy * ca) / e.ry;
      if (u * u + v * v <= 1.0) canvas(r, c) = e.value;
    }
  }
}

Eigen::MatrixXd box_blur(const Eigen::MatrixXd& in, int radius) {
  if (radius <= 0) return in;
  const auto h = in.rows();
  const auto w = in.cols();
  auto clamp_idx = [](Eigen::Index i, Eigen::Index n) { return std::clamp<Eigen::Index>(i, 0, n - 1); };
  Eigen::MatrixXd tmp(h, w), out(h, w);
  const double norm = 1.0 / (2 * radius + 1);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += in(r, clamp_idx(c + k, w));
      tmp(r, c) = s * norm;
    }
  }
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += tmp(clamp_idx(r + k, h), c);
      out(r, c) = s * norm;
    }
  }
  return out;
}

double pick(Rng& rng, double lo, double hi) { return hi > lo ? uniform(rng, lo, hi) : lo; }

}  // namespace

Image render_phantom(const DomainParams& p, std::uint64_t seed) {
  if (!is_power_of_two(p.image_size)) throw std::invalid_argument("image_size must be a power of two");
  if (p.ellipses_min < 0 || p.ellipses_max < p.ellipses_min) throw std::invalid_argument("bad ellipse range");
  Rng rng(seed);
  const double n = p.image_size;
  Eigen::MatrixXd canvas = Eigen::MatrixXd::Zero(p.image_size, p.image_size);

  const double pi = std::numbers::pi;
  const double body_cy = n / 2 + uniform(rng, -0.06, 0.06) * n;
  const double body_cx = n / 2 + uniform(rng, -0.06, 0.06) * n;
  const double body_ry = uniform(rng, 0.32, 0.44) * n;
  const double body_rx = uniform(rng, 0.32, 0.44) * n;
  paint(canvas, {body_cy, body_cx, body_ry, body_rx, uniform(rng, 0, pi), uniform(rng, 0.3, 0.45)});

  const double heart_ry = uniform(rng, 0.14, 0.2) * n;
  const double heart_rx = uniform(rng, 0.14, 0.2) * n;
  const double heart_cy = body_cy + uniform(rng, -0.08, 0.08) * n;
  const double heart_cx = body_cx + uniform(rng, -0.08, 0.08) * n;
  const double heart_angle = uniform(rng, 0, pi);
  paint(canvas, {heart_cy, heart_cx, heart_ry, heart_rx, heart_angle, uniform(rng, 0.55, 0.7)});
  const double pool = uniform(rng, 0.5, 0.7);
  paint(canvas, {heart_cy, heart_cx, heart_ry * pool, heart_rx * pool, heart_angle, uniform(rng, 0.85, 1.0)});

  const auto extra = uniform_int(rng, p.ellipses_min, p.ellipses_max);
  for (std::int64_t i = 0; i < extra; ++i) {
    const double rad = uniform(rng, 0.0, 0.75);
    const double theta = uniform(rng, 0.0, 2 * pi);
    paint(canvas, {body_cy + rad * body_ry * std::sin(theta), body_cx + rad * body_rx * std::cos(theta),
                   uniform(rng, 0.03, 0.1) * n, uniform(rng, 0.03, 0.1) * n, uniform(rng, 0, pi),
                   uniform(rng, 0.15, 0.9)});
  }

  // Appearance draws come after the structure so fixed and ranged domains share layouts.
  const int blur = p.blur_radius_max > p.blur_radius
                       ? static_cast<int>(uniform_int(rng, p.blur_radius, p.blur_radius_max))
                       : p.blur_radius;
  const double contrast = pick(rng, p.contrast, p.contrast_max);
  const double gamma = pick(rng, p.gamma, p.gamma_max);
  const double background = pick(rng, p.background, p.background_max);
  Eigen::MatrixXd img = box_blur(canvas, blur);
  img = (img * contrast).cwiseMin(1.0).cwiseMax(0.0).array().pow(gamma).matrix();
  img = (background + (1.0 - background) * img.array()).matrix();
  return img.cwiseMin(1.0).cwiseMax(0.0).cast<float>();
}

Image add_domain_noise(const Image& image, const DomainParams& p, std::uint64_t seed) {
  Rng rng(seed);
  const double sigma = pick(rng, p.noise_sigma, p.noise_sigma_max);
  if (sigma <= 0.0) return image;
  Image out = image;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double v = out.data()[i] + sigma * normal(rng);
    out.data()[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

Image gen_phantom(const DomainParams& p, std::uint64_t seed) {
  return add_domain_noise(render_phantom(p, seed), p, splitmix64(seed));
}

CorruptionParams sample_corruption(const CorruptionRanges& r, std::uint64_t seed) {
  Rng rng(seed);
  CorruptionParams c;
  c.axis = r.axis;
  c.shift_pixels = static_cast<int>(uniform_int(rng, r.shift_min, r.shift_max));
  c.frequency = uniform(rng, r.frequency_min, r.frequency_max);
  c.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  c.threshold = uniform(rng, r.threshold_min, r.threshold_max);
  return c;
}

Dataset build_domain_dataset(const DomainParams& params, const CorruptionRanges& corruption, int n_per_class,
                             std::uint64_t seed) {
  if (n_per_class < 1) throw std::invalid_argument("build_domain_dataset: n_per_class must be >= 1");
  if (corruption.shift_min < 1 || corruption.shift_max < corruption.shift_min) {
    throw std::invalid_argument("build_domain_dataset: shift range must exclude 0 (classes would coincide)");
  }
  if (corruption.shift_max >= params.image_size) {
    throw std::invalid_argument("build_domain_dataset: shift must be smaller than the image extent");
  }
  Dataset ds{params.name, params.domain_id, {}};
  const auto total = static_cast<std::size_t>(2 * n_per_class);
  ds.samples.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const bool corrupted = i >= static_cast<std::size_t>(n_per_class);
    const auto phantom_seed = derive_seed(seed, Stream::kPhantom, i);
    Image img = render_phantom(params, phantom_seed);
    if (corrupted) img = corrupt_kspace(img, sample_corruption(corruption, derive_seed(seed, Stream::kCorruption, i)));
    Sample& s = ds.samples[i];
    s.image = add_domain_noise(img, params, splitmix64(phantom_seed));
    s.label = corrupted ? 1 : 0;
    s.domain_id = params.domain_id;
    s.id = static_cast<std::uint32_t>(i);
  }
  return ds;
}

}  // namespace mtms
