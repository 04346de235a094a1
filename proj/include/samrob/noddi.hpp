#pragma once

// Three-compartment NODDI forward model: Watson-dispersed sticks,
// tortuosity-constrained extra-neurite tensor, isotropic free water.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"
#include "samrob/scheme.hpp"
#include "samrob/shbasis.hpp"

namespace samrob {

inline constexpr double kParallelDiffusivity = 1.7e-3; // mm^2/s
inline constexpr double kIsotropicDiffusivity = 3.0e-3; // mm^2/s
inline constexpr double kMinOd = 1e-3;

// ---------------------------------------------------------------------------
// Orientation dispersion index <-> Watson concentration.

inline double od_from_kappa(double kappa) {
  if (!(kappa >= 0.0))
    throw UsageError("kappa must be non-negative");
  return std::atan2(1.0, kappa) / (std::numbers::pi / 2.0);
}

inline double kappa_from_od(double od) {
  if (!(od > 0.0) || od > 1.0)
    throw UsageError("od must lie in (0, 1]; od = 0 means infinite kappa");
  if (od == 1.0)
    return 0.0;
  return 1.0 / std::tan(std::numbers::pi * od / 2.0);
}

// ---------------------------------------------------------------------------
// Watson distribution.

/// log of Kummer's M(1/2, 3/2, kappa) for kappa >= 0. Power series with
/// relative tolerance well below 1e-12 for moderate kappa; the large-argument
/// asymptotic expansion e^k/(2k) * sum_n (1/2)_n k^-n beyond that.
inline double log_kummer_half_three_halves(double kappa) {
  if (!(kappa >= 0.0))
    throw UsageError("kappa must be non-negative");
  if (kappa <= 50.0) {
    double term = 1.0, sum = 1.0;
    for (int n = 0; n < 10000; ++n) {
      term *= (0.5 + n) / (1.5 + n) * kappa / (n + 1.0);
      sum += term;
      if (term < 1e-16 * sum)
        break;
    }
    return std::log(sum);
  }
  double term = 1.0, sum = 1.0;
  for (int n = 0; n < 200; ++n) {
    const double next = term * (0.5 + n) / kappa;
    if (next >= term)
      break;
    term = next;
    sum += term;
    if (term < 1e-17 * sum)
      break;
  }
  return kappa - std::log(2.0 * kappa) + std::log(sum);
}

/// Watson density on S^2 (per steradian), antipodally symmetric about mu.
inline double watson_density(const Eigen::Vector3d& n, const Eigen::Vector3d& mu, double kappa) {
  const double c = mu.dot(n);
  return std::exp(kappa * c * c - log_kummer_half_three_halves(kappa)) / (4.0 * std::numbers::pi);
}

inline double watson_density(const GradientDirection& n, const GradientDirection& mu, double kappa) {
  return watson_density(n.vec(), mu.vec(), kappa);
}

// ---------------------------------------------------------------------------
// Quadrature.

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
inline QuadratureRule gauss_legendre(std::size_t n) {
  if (n == 0)
    throw UsageError("quadrature order must be positive");
  QuadratureRule q{std::vector<double>(n), std::vector<double>(n)};
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16)
        break;
    }
    q.nodes[i] = -x;
    q.nodes[n - 1 - i] = x;
    q.weights[i] = q.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return q;
}

struct NoddiModel {
  double d_par = kParallelDiffusivity;
  double d_iso = kIsotropicDiffusivity;
  std::size_t polar_order = 64;   // Gauss-Legendre points in cos(theta)
  std::size_t azimuth_order = 32; // trapezoid points in phi
};

/// Polar nodes t = cos(theta) in (0, 1] with normalized Watson weights. The
/// integrand is even in t, so only the upper half is sampled; for large
/// kappa the range is truncated where the density has decayed by e^-40.
struct WatsonPolarRule {
  std::vector<double> t;
  std::vector<double> w; // sums to 1

  static WatsonPolarRule make(double kappa, std::size_t order) {
    const QuadratureRule gl = gauss_legendre(order);
    const double u_max = kappa > 40.0 ? 40.0 / kappa : 1.0;
    WatsonPolarRule r;
    double total = 0.0;
    for (std::size_t k = 0; k < order; ++k) {
      const double u = 0.5 * u_max * (gl.nodes[k] + 1.0);
      const double t = 1.0 - u;
      const double w = 0.5 * u_max * gl.weights[k] * std::exp(kappa * (t * t - 1.0));
      r.t.push_back(t);
      r.w.push_back(w);
      total += w;
    }
    for (double& w : r.w)
      w /= total;
    return r;
  }

  /// E_W[(mu . n)^2]: the scatter-matrix eigenvalue along mu.
  double tau() const {
    double s = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k)
      s += w[k] * t[k] * t[k];
    return s;
  }
};

/// Integral over the Watson density of exp(-b d (g . n)^2).
inline double watson_stick_average(const WatsonPolarRule& rule, std::size_t azimuth_order, double g_par,
                                   double g_perp, double bd) {
  // Azimuth measured from the projection of g onto the plane normal to mu;
  // cos(phi) symmetry halves the evaluations.
  const std::size_t na = azimuth_order;
  double sum = 0.0;
  for (std::size_t k = 0; k < rule.t.size(); ++k) {
    const double t = rule.t[k];
    const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
    double az = 0.0;
    for (std::size_t p = 0; p <= na / 2; ++p) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(p) / static_cast<double>(na);
      const double dot = t * g_par + s * g_perp * std::cos(phi);
      const double mult = (p == 0 || 2 * p == na) ? 1.0 : 2.0;
      az += mult * std::exp(-bd * dot * dot);
    }
    sum += rule.w[k] * az / static_cast<double>(na);
  }
  return sum;
}

struct NoddiParams {
  double v_ic = 0.0;
  double v_iso = 0.0;
  double od = 0.0;
  GradientDirection mu_dir{};
  double kappa = 0.0;

  static NoddiParams from_od(double v_ic, double v_iso, double od, GradientDirection mu) {
    NoddiParams p{v_ic, v_iso, od, mu, kappa_from_od(od)};
    p.validate();
    return p;
  }

  static NoddiParams from_kappa(double v_ic, double v_iso, double kappa, GradientDirection mu) {
    NoddiParams p{v_ic, v_iso, od_from_kappa(kappa), mu, kappa};
    p.validate();
    return p;
  }

  void validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(v_ic) || !unit(v_iso) || !unit(od))
      throw UsageError("NODDI fractions and od must lie in [0, 1]");
    if (!(kappa >= 0.0))
      throw UsageError("kappa must be non-negative");
  }

  Eigen::Vector3d targets() const { return {v_ic, v_iso, od}; }
};

/// Normalized signal E(g, b) for every direction of the scheme.
inline DwiSignal noddi_signal(const NoddiParams& p, const MultiShellScheme& scheme, const NoddiModel& model = {}) {
  p.validate();
  const WatsonPolarRule rule = WatsonPolarRule::make(p.kappa, model.polar_order);
  const double tau = rule.tau();
  const double d_perp = model.d_par * (1.0 - p.v_ic);
  const Eigen::Vector3d& mu = p.mu_dir.vec();

  DwiSignal out;
  for (const auto& sh : scheme.shells()) {
    const double b = sh.b_value;
    const double a_iso = std::exp(-b * model.d_iso);
    Eigen::VectorXd e(static_cast<Eigen::Index>(sh.size()));
    for (std::size_t i = 0; i < sh.size(); ++i) {
      const Eigen::Vector3d& g = sh.directions[i].vec();
      const double g_par = std::clamp(g.dot(mu), -1.0, 1.0);
      const double g_perp = std::sqrt(std::max(0.0, 1.0 - g_par * g_par));
      const double a_ic = watson_stick_average(rule, model.azimuth_order, g_par, g_perp, b * model.d_par);
      const double mean_sq = tau * g_par * g_par + 0.5 * (1.0 - tau) * (1.0 - g_par * g_par);
      const double a_ec = std::exp(-b * (d_perp + (model.d_par - d_perp) * mean_sq));
      e[static_cast<Eigen::Index>(i)] =
          (1.0 - p.v_iso) * (p.v_ic * a_ic + (1.0 - p.v_ic) * a_ec) + p.v_iso * a_iso;
    }
    out.per_shell.push_back(std::move(e));
  }
  return out;
}

} // namespace samrob
