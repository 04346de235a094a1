#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "samrob/estimator.hpp"
#include "samrob/scheme.hpp"

namespace samrob::oracle {

// Golden-angle spiral: n nearly equal-area points on the full sphere.
inline std::vector<Eigen::Vector3d> fibonacci_sphere(std::size_t n) {
  std::vector<Eigen::Vector3d> pts;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * static_cast<double>(i);
    pts.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return pts;
}

inline Shell shell_from(double b, const std::vector<Eigen::Vector3d>& pts) {
  Shell sh{b, {}};
  for (const auto& p : pts)
    sh.directions.push_back(GradientDirection::normalized(p));
  return sh;
}

inline std::vector<Eigen::Vector3d> random_directions(std::size_t n, Rng& rng) {
  std::vector<Eigen::Vector3d> v(n);
  for (auto& p : v)
    p = random_unit_vector(rng);
  return v;
}

// Relative error ||analytic - numeric|| / ||numeric|| of the weighted loss
// gradient, numeric by central differences of step eps on every parameter.
inline double gradient_relative_error(const Mlp& model, const Eigen::MatrixXd& xr, const Eigen::MatrixXd& xu,
                                      const Eigen::MatrixXd& y, const LossWeights& w, double eps = 1e-6) {
  const Eigen::VectorXd analytic = backward(model, xr, xu, y, w).gradient;
  Mlp probe = model;
  const Eigen::VectorXd theta = model.parameters();
  auto loss_at = [&](const Eigen::VectorXd& t) {
    probe.set_parameters(t);
    return w.combine(loss_terms(y, probe.forward_batch(xr), probe.forward_batch(xu)));
  };
  Eigen::VectorXd numeric(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd plus = theta, minus = theta;
    plus[k] += eps;
    minus[k] -= eps;
    numeric[k] = (loss_at(plus) - loss_at(minus)) / (2.0 * eps);
  }
  return (analytic - numeric).norm() / numeric.norm();
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      m(r, c) = u(rng);
  return m;
}

// Composite Simpson on [a, b] with n (even) intervals.
template <class F>
double simpson(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k)
    s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

// Integral over the unit sphere: Simpson in theta, trapezoid in phi.
template <class F>
double sphere_integral(F f, int n_theta, int n_phi) {
  const double pi = std::numbers::pi;
  return simpson(
      [&](double th) {
        double s = 0.0;
        for (int p = 0; p < n_phi; ++p) {
          const double ph = 2.0 * pi * p / n_phi;
          s += f(Eigen::Vector3d(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
        }
        return s * 2.0 * pi / n_phi * std::sin(th);
      },
      0.0, pi, n_theta);
}

// SSIM at one window center with an explicitly built 11x11 Gaussian kernel
// (sigma 1.5, K1 0.01, K2 0.03, unit data range).
template <class Img>
double reference_ssim_at(const Img& x, const Img& y, int r0, int c0) {
  double w[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      total += w[i][j];
    }
  double mx = 0, my = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      mx += w[i][j] / total * x(r0 - 5 + i, c0 - 5 + j);
      my += w[i][j] / total * y(r0 - 5 + i, c0 - 5 + j);
    }
  double vx = 0, vy = 0, cxy = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double dx = x(r0 - 5 + i, c0 - 5 + j) - mx, dy = y(r0 - 5 + i, c0 - 5 + j) - my;
      vx += w[i][j] / total * dx * dx;
      vy += w[i][j] / total * dy * dy;
      cxy += w[i][j] / total * dx * dy;
    }
  const double c1 = 1e-4, c2 = 9e-4;
  return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

} // namespace samrob::oracle
