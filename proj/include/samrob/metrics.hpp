#pragma once

// Masked PSNR and Gaussian-window SSIM on 2D parameter maps.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"

namespace samrob {

using Image = Eigen::ArrayXXd;                                    // rows x cols
using MaskImage = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline void check_same_shape(const Image& a, const Image& b, const MaskImage& mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != mask.rows() || a.cols() != mask.cols())
    throw UsageError("maps and mask must share one shape");
}

inline Eigen::MatrixXd gaussian_window() {
  Eigen::VectorXd g(kSsimWindow);
  const int half = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i)
    g[i] = std::exp(-0.5 * (i - half) * (i - half) / (kSsimSigma * kSsimSigma));
  g /= g.sum();
  return g * g.transpose();
}

} // namespace detail

/// Sum of squared error and count over masked pixels.
struct SquaredError {
  double sum = 0.0;
  std::size_t count = 0;

  void add(const Image& ref, const Image& test, const MaskImage& mask) {
    detail::check_same_shape(ref, test, mask);
    for (Eigen::Index c = 0; c < ref.cols(); ++c)
      for (Eigen::Index r = 0; r < ref.rows(); ++r)
        if (mask(r, c)) {
          const double d = ref(r, c) - test(r, c);
          sum += d * d;
          ++count;
        }
  }

  double psnr(double data_range) const {
    if (!(data_range > 0.0))
      throw UsageError("data range must be positive");
    if (count == 0)
      throw UsageError("empty mask");
    const double mse = sum / static_cast<double>(count);
    if (mse == 0.0)
      return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
  }
};

/// PSNR in dB over the mask; +inf when the maps agree exactly.
inline double psnr(const Image& ref, const Image& test, const MaskImage& mask, double data_range = 1.0) {
  SquaredError e;
  e.add(ref, test, mask);
  return e.psnr(data_range);
}

/// Local SSIM values at every window center that lies in the mask and whose
/// window fits inside the image.
inline std::vector<double> ssim_map(const Image& ref, const Image& test, const MaskImage& mask,
                                    double data_range = 1.0) {
  detail::check_same_shape(ref, test, mask);
  if (ref.rows() < kSsimWindow || ref.cols() < kSsimWindow)
    throw UsageError("map smaller than the SSIM window");
  if (!(data_range > 0.0))
    throw UsageError("data range must be positive");
  const Eigen::MatrixXd w = detail::gaussian_window();
  const double c1 = (kSsimK1 * data_range) * (kSsimK1 * data_range);
  const double c2 = (kSsimK2 * data_range) * (kSsimK2 * data_range);
  const int half = kSsimWindow / 2;
  std::vector<double> values;
  for (Eigen::Index r = half; r + half < ref.rows(); ++r)
    for (Eigen::Index c = half; c + half < ref.cols(); ++c) {
      if (!mask(r, c))
        continue;
      const auto x = ref.block(r - half, c - half, kSsimWindow, kSsimWindow);
      const auto y = test.block(r - half, c - half, kSsimWindow, kSsimWindow);
      const double mx = (w.array() * x).sum(), my = (w.array() * y).sum();
      const double vx = (w.array() * x * x).sum() - mx * mx;
      const double vy = (w.array() * y * y).sum() - my * my;
      const double cxy = (w.array() * x * y).sum() - mx * my;
      values.push_back((2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
    }
  return values;
}

inline double ssim(const Image& ref, const Image& test, const MaskImage& mask, double data_range = 1.0) {
  const auto v = ssim_map(ref, test, mask, data_range);
  if (v.empty())
    throw UsageError("no masked window centers for SSIM");
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

} // namespace samrob
