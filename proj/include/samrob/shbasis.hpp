#pragma once

// Even-order real spherical harmonics (modified real symmetric basis) and
// Laplace-Beltrami regularized least-squares fitting of normalized DWI
// signals, shell by shell.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"
#include "samrob/scheme.hpp"

namespace samrob {

inline constexpr int kDefaultShOrder = 6;
inline constexpr double kDefaultShLambda = 0.006;
inline constexpr std::size_t kSparseShellWarning = 15;

struct ShIndex {
  int l = 0;
  int m = 0;
};

inline void check_sh_order(int order) {
  if (order < 0 || order % 2 != 0)
    throw UsageError("SH order must be even and non-negative");
}

/// (order+1)(order+2)/2 coefficients; 28 at order 6.
inline std::size_t sh_coefficient_count(int order) {
  check_sh_order(order);
  return static_cast<std::size_t>((order + 1) * (order + 2) / 2);
}

/// Column order: l = 0, 2, 4, ...; within each l, m = -l..l.
inline std::vector<ShIndex> sh_indices(int order) {
  check_sh_order(order);
  std::vector<ShIndex> idx;
  for (int l = 0; l <= order; l += 2)
    for (int m = -l; m <= l; ++m)
      idx.push_back({l, m});
  return idx;
}

/// Inverse of sh_coefficient_count; throws if `count` is not a valid size.
inline int sh_order_for_count(std::size_t count) {
  for (int order = 0; order <= 64; order += 2)
    if (sh_coefficient_count(order) == count)
      return order;
  throw UsageError("coefficient count does not correspond to an even SH order");
}

/// Real basis function Y_j for (l, m) at unit vector v. m < 0 uses the
/// cosine part of |m|, m > 0 the sine part, both scaled by sqrt(2).
inline double real_sh(int l, int m, const Eigen::Vector3d& v) {
  const Eigen::Vector3d u = canonical_hemisphere(v);
  const double theta = std::acos(std::clamp(u.z(), -1.0, 1.0));
  const double phi = std::atan2(u.y(), u.x());
  const unsigned ul = static_cast<unsigned>(l);
  if (m == 0)
    return std::sph_legendre(ul, 0u, theta);
  const unsigned am = static_cast<unsigned>(std::abs(m));
  const double p = std::numbers::sqrt2 * std::sph_legendre(ul, am, theta);
  return m < 0 ? p * std::cos(am * phi) : p * std::sin(am * phi);
}

struct ShBasisMatrix {
  int order = 0;
  Eigen::MatrixXd values; // rows = directions, cols = basis functions
};

inline ShBasisMatrix build_sh_basis(const std::vector<Eigen::Vector3d>& directions, int order) {
  const auto idx = sh_indices(order);
  ShBasisMatrix b{order, Eigen::MatrixXd(static_cast<Eigen::Index>(directions.size()),
                                         static_cast<Eigen::Index>(idx.size()))};
  for (std::size_t i = 0; i < directions.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j)
      b.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = real_sh(idx[j].l, idx[j].m, directions[i]);
  return b;
}

inline ShBasisMatrix build_sh_basis(const std::vector<GradientDirection>& directions, int order) {
  return build_sh_basis(as_vectors(directions), order);
}

inline std::vector<ShBasisMatrix> build_sh_bases(const MultiShellScheme& scheme, int order) {
  std::vector<ShBasisMatrix> out;
  for (const auto& sh : scheme.shells())
    out.push_back(build_sh_basis(sh.directions, order));
  return out;
}

/// Diagonal of L: l(l+1) per column.
inline Eigen::VectorXd laplace_beltrami_penalty(int order) {
  const auto idx = sh_indices(order);
  Eigen::VectorXd d(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    d[static_cast<Eigen::Index>(j)] = static_cast<double>(idx[j].l * (idx[j].l + 1));
  return d;
}

/// Diagonal of L^T L, the term added to the normal matrix.
inline Eigen::VectorXd laplace_beltrami_normal_penalty(int order) {
  return laplace_beltrami_penalty(order).array().square().matrix();
}

struct DwiSignal {
  std::vector<Eigen::VectorXd> per_shell;

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& v : per_shell)
      n += static_cast<std::size_t>(v.size());
    return n;
  }
};

struct ShCoefficients {
  int order = kDefaultShOrder;
  std::vector<Eigen::VectorXd> per_shell; // ascending b-value

  Eigen::VectorXd concatenated() const {
    Eigen::Index n = 0;
    for (const auto& c : per_shell)
      n += c.size();
    Eigen::VectorXd out(n);
    Eigen::Index off = 0;
    for (const auto& c : per_shell) {
      out.segment(off, c.size()) = c;
      off += c.size();
    }
    return out;
  }
};

using WarningHandler = std::function<void(std::string_view)>;

inline WarningHandler& warning_handler() {
  static WarningHandler handler = [](std::string_view msg) { std::clog << "warning: " << msg << '\n'; };
  return handler;
}

namespace detail {

// Solves A X = rhs for the symmetric PSD normal matrix A. Cholesky first,
// rank-revealing fallback when the factorization fails or is ill-conditioned.
inline Eigen::MatrixXd solve_normal_equations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& rhs) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-13)
    return llt.solve(rhs);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  cod.setThreshold(1e-13);
  if (cod.rank() < a.cols())
    throw NumericalError("underdetermined fit; increase directions or lambda");
  return cod.solve(rhs);
}

} // namespace detail

/// Maps a signal vector on the basis directions to coefficients:
/// c = (B^T B + lambda L^T L)^{-1} B^T E. No warnings are emitted here.
inline Eigen::MatrixXd sh_fit_operator(const ShBasisMatrix& basis, double lambda) {
  if (!(lambda >= 0.0))
    throw UsageError("lambda must be non-negative");
  Eigen::MatrixXd a = basis.values.transpose() * basis.values;
  a.diagonal() += lambda * laplace_beltrami_normal_penalty(basis.order);
  return detail::solve_normal_equations(a, basis.values.transpose());
}

inline Eigen::VectorXd fit_sh_shell(const ShBasisMatrix& basis, const Eigen::VectorXd& signal, double lambda) {
  if (basis.values.rows() != signal.size())
    throw UsageError("basis rows do not match signal length");
  if (!(lambda >= 0.0))
    throw UsageError("lambda must be non-negative");
  Eigen::MatrixXd a = basis.values.transpose() * basis.values;
  a.diagonal() += lambda * laplace_beltrami_normal_penalty(basis.order);
  return detail::solve_normal_equations(a, basis.values.transpose() * signal);
}

inline void warn_if_sparse(const std::vector<ShBasisMatrix>& bases) {
  for (std::size_t s = 0; s < bases.size(); ++s)
    if (static_cast<std::size_t>(bases[s].values.rows()) < kSparseShellWarning)
      warning_handler()("shell " + std::to_string(s) + " has " + std::to_string(bases[s].values.rows()) +
                        " directions; fits below " + std::to_string(kSparseShellWarning) + " are unreliable");
}

inline ShCoefficients fit_sh(const DwiSignal& signal, const std::vector<ShBasisMatrix>& bases,
                             double lambda = kDefaultShLambda) {
  if (signal.per_shell.size() != bases.size())
    throw UsageError("signal and basis shell counts differ");
  if (bases.empty())
    throw UsageError("no shells to fit");
  warn_if_sparse(bases);
  ShCoefficients out;
  out.order = bases.front().order;
  for (std::size_t s = 0; s < bases.size(); ++s) {
    if (bases[s].order != out.order)
      throw UsageError("all shells must share one SH order");
    out.per_shell.push_back(fit_sh_shell(bases[s], signal.per_shell[s], lambda));
  }
  return out;
}

inline DwiSignal evaluate_sh(const ShCoefficients& coeffs, const std::vector<std::vector<Eigen::Vector3d>>& directions) {
  if (coeffs.per_shell.size() != directions.size())
    throw UsageError("coefficient and direction shell counts differ");
  DwiSignal out;
  for (std::size_t s = 0; s < directions.size(); ++s) {
    const ShBasisMatrix b = build_sh_basis(directions[s], coeffs.order);
    if (b.values.cols() != coeffs.per_shell[s].size())
      throw UsageError("coefficient length does not match SH order");
    out.per_shell.push_back(b.values * coeffs.per_shell[s]);
  }
  return out;
}

inline DwiSignal evaluate_sh(const ShCoefficients& coeffs, const MultiShellScheme& scheme) {
  std::vector<std::vector<Eigen::Vector3d>> dirs;
  for (const auto& sh : scheme.shells())
    dirs.push_back(as_vectors(sh.directions));
  return evaluate_sh(coeffs, dirs);
}

} // namespace samrob
