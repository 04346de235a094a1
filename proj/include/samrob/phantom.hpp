#pragma once

// Synthetic 2D NODDI phantoms: smooth random parameter fields inside a
// circular mask, with Rician-corrupted multi-shell signals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"
#include "samrob/noddi.hpp"
#include "samrob/scheme.hpp"

namespace samrob {

inline constexpr double kDefaultNoiseSigma = 1.0 / 30.0;

struct PhantomDataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;  // row-major, 1 = foreground
  std::vector<NoddiParams> params; // zeroed outside the mask
  Eigen::MatrixXd signals;         // voxels x directions, shells concatenated by ascending b
  MultiShellScheme scheme;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t voxel_count() const { return height * width; }

  std::vector<std::size_t> foreground() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i])
        idx.push_back(i);
    return idx;
  }

  /// Parameter plane k (0 = v_ic, 1 = v_iso, 2 = od), row-major.
  std::vector<double> parameter_plane(std::size_t k) const {
    std::vector<double> plane(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      plane[i] = params[i].targets()[static_cast<Eigen::Index>(k)];
    return plane;
  }

  /// One voxel's signal split into per-shell vectors.
  DwiSignal voxel_signal(std::size_t voxel) const {
    DwiSignal out;
    Eigen::Index off = 0;
    for (const auto& sh : scheme.shells()) {
      const auto n = static_cast<Eigen::Index>(sh.size());
      out.per_shell.emplace_back(signals.row(static_cast<Eigen::Index>(voxel)).segment(off, n).transpose());
      off += n;
    }
    return out;
  }
};

inline NoddiParams background_params() { return NoddiParams{0.0, 0.0, 0.0, GradientDirection{}, 0.0}; }

inline double rician_sample(double value, double sigma, Rng& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  const double re = value + g(rng);
  const double im = g(rng);
  return std::sqrt(re * re + im * im);
}

namespace detail {

// Sum of a few low-frequency plane waves, rescaled to [0, 1] over the mask.
inline std::vector<double> smooth_field(std::size_t h, std::size_t w, const std::vector<std::uint8_t>& mask, Rng& rng,
                                        double f_lo = 0.4, double f_hi = 2.5) {
  constexpr int kModes = 6;
  std::uniform_real_distribution<double> freq(f_lo, f_hi), angle(0.0, 2.0 * std::numbers::pi), amp(0.5, 1.0);
  std::array<double, kModes> kx{}, ky{}, ph{}, a{};
  for (int m = 0; m < kModes; ++m) {
    const double f = freq(rng), th = angle(rng);
    kx[m] = f * std::cos(th);
    ky[m] = f * std::sin(th);
    ph[m] = angle(rng);
    a[m] = amp(rng) / (1.0 + f);
  }
  std::vector<double> field(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double y = (r + 0.5) / static_cast<double>(h), x = (c + 0.5) / static_cast<double>(w);
      double v = 0.0;
      for (int m = 0; m < kModes; ++m)
        v += a[m] * std::cos(2.0 * std::numbers::pi * (kx[m] * x + ky[m] * y) + ph[m]);
      field[r * w + c] = v;
    }
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < field.size(); ++i)
    if (mask[i]) {
      lo = std::min(lo, field[i]);
      hi = std::max(hi, field[i]);
    }
  const double span = hi > lo ? hi - lo : 1.0;
  for (double& v : field)
    v = std::clamp((v - lo) / span, 0.0, 1.0);
  return field;
}

} // namespace detail

inline PhantomDataset generate_phantom(std::size_t height, std::size_t width, const MultiShellScheme& scheme,
                                       double noise_sigma, std::uint64_t seed, const NoddiModel& model = {}) {
  if (height < 16 || width < 16)
    throw UsageError("phantom dimensions must be at least 16x16");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw UsageError("noise sigma must be non-negative");

  PhantomDataset ds;
  ds.height = height;
  ds.width = width;
  ds.scheme = scheme;
  ds.noise_sigma = noise_sigma;
  ds.seed = seed;

  const double radius = 0.45 * static_cast<double>(std::min(height, width));
  const double cy = 0.5 * static_cast<double>(height), cx = 0.5 * static_cast<double>(width);
  ds.mask.resize(height * width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
      ds.mask[r * width + c] = (dx * dx + dy * dy <= radius * radius) ? 1 : 0;
    }

  Rng rng(seed);
  const auto f_ic = detail::smooth_field(height, width, ds.mask, rng);
  const auto f_iso = detail::smooth_field(height, width, ds.mask, rng);
  const auto f_od = detail::smooth_field(height, width, ds.mask, rng);
  // Orientation varies faster so one phantom covers much of the sphere.
  const auto f_theta = detail::smooth_field(height, width, ds.mask, rng, 1.0, 4.0);
  const auto f_phi = detail::smooth_field(height, width, ds.mask, rng, 1.0, 4.0);

  // CSF-like blobs of high free-water fraction.
  struct Blob {
    double y, x, sigma, peak;
  };
  std::uniform_int_distribution<int> blob_count(2, 4);
  std::uniform_real_distribution<double> pos(-0.6, 0.6), size(0.04, 0.09), peak(0.6, 0.9);
  std::vector<Blob> blobs(static_cast<std::size_t>(blob_count(rng)));
  for (auto& b : blobs) {
    b.y = cy + pos(rng) * radius;
    b.x = cx + pos(rng) * radius;
    b.sigma = size(rng) * static_cast<double>(std::min(height, width));
    b.peak = peak(rng);
  }

  ds.params.assign(height * width, background_params());
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      if (!ds.mask[i])
        continue;
      double v_iso = 0.15 * f_iso[i];
      for (const auto& b : blobs) {
        const double dy = r + 0.5 - b.y, dx = c + 0.5 - b.x;
        v_iso = std::max(v_iso, b.peak * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)));
      }
      const double v_ic = 0.1 + 0.8 * f_ic[i];
      const double od = 0.05 + 0.9 * f_od[i];
      const double theta = std::acos(1.0 - 2.0 * f_theta[i]);
      const double phi = 2.0 * std::numbers::pi * f_phi[i];
      const auto mu = GradientDirection::normalized(
          Eigen::Vector3d(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)));
      ds.params[i] = NoddiParams::from_od(v_ic, std::clamp(v_iso, 0.0, 0.95), od, mu);
    }

  const auto n_dirs = static_cast<Eigen::Index>(scheme.total_directions());
  ds.signals = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(height * width), n_dirs);
  for (std::size_t i = 0; i < ds.params.size(); ++i) {
    if (!ds.mask[i])
      continue;
    const DwiSignal e = noddi_signal(ds.params[i], scheme, model);
    Eigen::Index off = 0;
    for (const auto& shell : e.per_shell) {
      for (Eigen::Index k = 0; k < shell.size(); ++k) {
        const double clean = shell[k];
        ds.signals(static_cast<Eigen::Index>(i), off + k) =
            noise_sigma > 0.0 ? rician_sample(clean, noise_sigma, rng) : clean;
      }
      off += shell.size();
    }
  }
  return ds;
}

} // namespace samrob
