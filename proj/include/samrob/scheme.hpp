#pragma once

// Multi-shell q-space sampling schemes and the two subsampling modes used
// for sampling augmentation (uniform and random).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"

namespace samrob {

using Rng = std::mt19937_64;

/// Unit vector on S^2. Construction enforces unit norm within `tolerance`.
class GradientDirection {
public:
  static constexpr double kUnitTolerance = 1e-9;

  GradientDirection() : v_(0.0, 0.0, 1.0) {}

  explicit GradientDirection(const Eigen::Vector3d& v, double tolerance = kUnitTolerance) : v_(v) {
    const double n = v.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > tolerance)
      throw UsageError("non-unit direction");
  }

  GradientDirection(double x, double y, double z) : GradientDirection(Eigen::Vector3d(x, y, z)) {}

  static GradientDirection normalized(const Eigen::Vector3d& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw UsageError("cannot normalize a zero or non-finite vector");
    return GradientDirection(Eigen::Vector3d(v / n));
  }

  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  const Eigen::Vector3d& vec() const { return v_; }

  GradientDirection operator-() const { return GradientDirection(Eigen::Vector3d(-v_)); }

  friend bool operator==(const GradientDirection& a, const GradientDirection& b) { return a.v_ == b.v_; }

private:
  Eigen::Vector3d v_;
};

struct Shell {
  double b_value = 0.0;
  std::vector<GradientDirection> directions;

  std::size_t size() const { return directions.size(); }
  friend bool operator==(const Shell&, const Shell&) = default;
};

/// Ordered shells with strictly increasing b-values.
class MultiShellScheme {
public:
  static constexpr double kDuplicateTolerance = 1e-9;

  MultiShellScheme() = default;

  explicit MultiShellScheme(std::vector<Shell> shells) : shells_(std::move(shells)) {
    if (shells_.empty())
      throw UsageError("scheme must contain at least one shell");
    for (std::size_t s = 0; s < shells_.size(); ++s) {
      const Shell& sh = shells_[s];
      if (!(sh.b_value > 0.0))
        throw UsageError("b-value must be positive");
      if (s > 0 && !(sh.b_value > shells_[s - 1].b_value))
        throw UsageError("shell b-values must be strictly increasing");
      if (sh.directions.empty())
        throw UsageError("shell must contain at least one direction");
      for (std::size_t i = 0; i < sh.size(); ++i)
        for (std::size_t j = i + 1; j < sh.size(); ++j) {
          const auto& a = sh.directions[i].vec();
          const auto& b = sh.directions[j].vec();
          if ((a - b).norm() < kDuplicateTolerance || (a + b).norm() < kDuplicateTolerance)
            throw UsageError("shell contains duplicate or antipodal directions");
        }
    }
  }

  const std::vector<Shell>& shells() const { return shells_; }
  const Shell& shell(std::size_t s) const { return shells_.at(s); }
  std::size_t shell_count() const { return shells_.size(); }

  std::size_t total_directions() const {
    std::size_t n = 0;
    for (const auto& s : shells_)
      n += s.size();
    return n;
  }

  std::vector<double> b_values() const {
    std::vector<double> b;
    for (const auto& s : shells_)
      b.push_back(s.b_value);
    return b;
  }

  std::vector<std::size_t> shell_sizes() const {
    std::vector<std::size_t> n;
    for (const auto& s : shells_)
      n.push_back(s.size());
    return n;
  }

  friend bool operator==(const MultiShellScheme&, const MultiShellScheme&) = default;

private:
  std::vector<Shell> shells_;
};

/// Per-shell indices into a parent scheme.
struct SubsampleSelection {
  std::vector<std::vector<std::size_t>> indices;

  std::vector<std::size_t> counts() const {
    std::vector<std::size_t> c;
    for (const auto& v : indices)
      c.push_back(v.size());
    return c;
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& v : indices)
      n += v.size();
    return n;
  }

  static SubsampleSelection identity(const MultiShellScheme& scheme) {
    SubsampleSelection sel;
    for (const auto& sh : scheme.shells()) {
      std::vector<std::size_t> idx(sh.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      sel.indices.push_back(std::move(idx));
    }
    return sel;
  }

  friend bool operator==(const SubsampleSelection&, const SubsampleSelection&) = default;
};

inline void validate_selection(const MultiShellScheme& scheme, const SubsampleSelection& sel) {
  if (sel.indices.size() != scheme.shell_count())
    throw UsageError("selection shell count does not match scheme");
  for (std::size_t s = 0; s < sel.indices.size(); ++s) {
    const auto& idx = sel.indices[s];
    if (idx.empty())
      throw UsageError("selection must keep at least one direction per shell");
    std::vector<char> seen(scheme.shell(s).size(), 0);
    for (std::size_t i : idx) {
      if (i >= seen.size())
        throw UsageError("selection index out of range");
      if (seen[i])
        throw UsageError("selection contains duplicate indices");
      seen[i] = 1;
    }
  }
}

inline MultiShellScheme apply_selection(const MultiShellScheme& scheme, const SubsampleSelection& sel) {
  validate_selection(scheme, sel);
  std::vector<Shell> shells;
  for (std::size_t s = 0; s < scheme.shell_count(); ++s) {
    Shell out{scheme.shell(s).b_value, {}};
    for (std::size_t i : sel.indices[s])
      out.directions.push_back(scheme.shell(s).directions[i]);
    shells.push_back(std::move(out));
  }
  return MultiShellScheme(std::move(shells));
}

// ---------------------------------------------------------------------------
// Electrostatic energy with antipodal images:
//   E = sum_{i<j} 1/|d_i - d_j| + 1/|d_i + d_j|

inline double pair_energy(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return 1.0 / (a - b).norm() + 1.0 / (a + b).norm();
}

inline double electrostatic_energy(const std::vector<Eigen::Vector3d>& dirs) {
  double e = 0.0;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j)
      e += pair_energy(dirs[i], dirs[j]);
  return e;
}

inline std::vector<Eigen::Vector3d> as_vectors(const std::vector<GradientDirection>& dirs) {
  std::vector<Eigen::Vector3d> v;
  v.reserve(dirs.size());
  for (const auto& d : dirs)
    v.push_back(d.vec());
  return v;
}

inline double electrostatic_energy(const Shell& shell) { return electrostatic_energy(as_vectors(shell.directions)); }

inline double electrostatic_energy(const Shell& shell, const std::vector<std::size_t>& subset) {
  double e = 0.0;
  for (std::size_t i = 0; i < subset.size(); ++i)
    for (std::size_t j = i + 1; j < subset.size(); ++j)
      e += pair_energy(shell.directions[subset[i]].vec(), shell.directions[subset[j]].vec());
  return e;
}

inline Eigen::Vector3d random_unit_vector(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-8)
      return v / n;
  }
}

/// Projected gradient descent with backtracking on the symmetrized energy.
/// Stops at a local minimum (tangential gradient below `grad_tol`) or after
/// `max_iter` accepted steps. Works for any n >= 2.
inline std::vector<Eigen::Vector3d> relax_directions(std::vector<Eigen::Vector3d> pts, int max_iter = 20000,
                                                     double grad_tol = 1e-9) {
  const std::size_t n = pts.size();
  if (n < 2)
    return pts;

  auto tangent_gradient = [n](const std::vector<Eigen::Vector3d>& p) {
    std::vector<Eigen::Vector3d> g(n, Eigen::Vector3d::Zero());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const Eigen::Vector3d dm = p[i] - p[j];
        const Eigen::Vector3d dp = p[i] + p[j];
        const double rm = dm.norm(), rp = dp.norm();
        const Eigen::Vector3d fm = dm / (rm * rm * rm);
        const Eigen::Vector3d fp = dp / (rp * rp * rp);
        g[i] -= fm + fp;
        g[j] += fm - fp;
      }
    for (std::size_t i = 0; i < n; ++i)
      g[i] -= g[i].dot(p[i]) * p[i];
    return g;
  };

  double energy = electrostatic_energy(pts);
  double step = 0.1 / static_cast<double>(n);
  std::vector<Eigen::Vector3d> trial(n);
  for (int it = 0; it < max_iter; ++it) {
    const auto g = tangent_gradient(pts);
    double gmax = 0.0;
    for (const auto& gi : g)
      gmax = std::max(gmax, gi.norm());
    if (gmax < grad_tol)
      break;
    bool accepted = false;
    while (step > 1e-16) {
      for (std::size_t i = 0; i < n; ++i)
        trial[i] = (pts[i] - step * g[i]).normalized();
      const double e = electrostatic_energy(trial);
      if (e < energy) {
        pts.swap(trial);
        energy = e;
        step *= 1.5;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted)
      break;
  }
  return pts;
}

/// Antipodal representative with z >= 0 (ties resolved on y, then x).
inline Eigen::Vector3d canonical_hemisphere(const Eigen::Vector3d& v) {
  if (v.z() < 0.0 || (v.z() == 0.0 && (v.y() < 0.0 || (v.y() == 0.0 && v.x() < 0.0))))
    return -v;
  return v;
}

inline MultiShellScheme generate_uniform_scheme(const std::vector<std::size_t>& n_per_shell,
                                                const std::vector<double>& b_values, std::uint64_t seed) {
  if (n_per_shell.size() != b_values.size())
    throw UsageError("n_per_shell and b_values must have the same length");
  if (b_values.empty())
    throw UsageError("at least one shell is required");
  for (std::size_t n : n_per_shell)
    if (n < 6)
      throw UsageError("too few directions for stable optimization");
  for (std::size_t s = 1; s < b_values.size(); ++s)
    if (!(b_values[s] > b_values[s - 1]))
      throw UsageError("b-values must be strictly increasing");

  Rng rng(seed);
  std::vector<Shell> shells;
  for (std::size_t s = 0; s < b_values.size(); ++s) {
    std::vector<Eigen::Vector3d> pts(n_per_shell[s]);
    for (auto& p : pts)
      p = random_unit_vector(rng);
    pts = relax_directions(std::move(pts));
    Shell sh{b_values[s], {}};
    for (const auto& p : pts)
      sh.directions.push_back(GradientDirection::normalized(canonical_hemisphere(p)));
    shells.push_back(std::move(sh));
  }
  return MultiShellScheme(std::move(shells));
}

// ---------------------------------------------------------------------------
// Uniform subsampling: greedy seeding from the minimum-energy pair, then
// best-improvement pairwise exchange until no swap lowers the energy.

namespace detail {

struct SwapCandidate {
  std::size_t out_pos = 0; // position within the selected list
  std::size_t in_index = 0;
  double delta = 0.0;
};

inline Eigen::MatrixXd pair_energy_matrix(const Shell& shell) {
  const std::size_t n = shell.size();
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      e(i, j) = e(j, i) = pair_energy(shell.directions[i].vec(), shell.directions[j].vec());
  return e;
}

inline constexpr double kSwapTolerance = 1e-12;

// Best improving swap, ties broken by lowest (selected index, candidate index).
inline bool best_swap(const Eigen::MatrixXd& e, const std::vector<std::size_t>& selected,
                      const std::vector<char>& in_set, const Eigen::VectorXd& contrib, SwapCandidate& best) {
  bool found = false;
  best.delta = -kSwapTolerance;
  std::size_t best_out_index = std::numeric_limits<std::size_t>::max();
  for (std::size_t p = 0; p < selected.size(); ++p) {
    const std::size_t s = selected[p];
    for (std::size_t u = 0; u < in_set.size(); ++u) {
      if (in_set[u])
        continue;
      const double delta = (contrib[u] - e(u, s)) - contrib[s];
      const bool better = delta < best.delta;
      const bool tie = found && delta == best.delta &&
                       (s < best_out_index || (s == best_out_index && u < best.in_index));
      if (better || tie) {
        best = {p, u, delta};
        best_out_index = s;
        found = true;
      }
    }
  }
  return found;
}

inline std::vector<std::size_t> uniform_subset(const Shell& shell, std::size_t k) {
  const std::size_t n = shell.size();
  if (k == n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  const Eigen::MatrixXd e = pair_energy_matrix(shell);
  std::vector<std::size_t> selected;
  std::vector<char> in_set(n, 0);

  if (k == 1) {
    selected.push_back(0);
    in_set[0] = 1;
  } else {
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (e(i, j) < e(bi, bj)) {
          bi = i;
          bj = j;
        }
    selected = {bi, bj};
    in_set[bi] = in_set[bj] = 1;
  }

  Eigen::VectorXd contrib = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t s : selected)
    contrib += e.col(static_cast<Eigen::Index>(s));

  while (selected.size() < k) {
    std::size_t best = n;
    for (std::size_t u = 0; u < n; ++u)
      if (!in_set[u] && (best == n || contrib[u] < contrib[best]))
        best = u;
    selected.push_back(best);
    in_set[best] = 1;
    contrib += e.col(static_cast<Eigen::Index>(best));
  }

  SwapCandidate sw;
  while (best_swap(e, selected, in_set, contrib, sw)) {
    const std::size_t out = selected[sw.out_pos];
    selected[sw.out_pos] = sw.in_index;
    in_set[out] = 0;
    in_set[sw.in_index] = 1;
    contrib += e.col(static_cast<Eigen::Index>(sw.in_index)) - e.col(static_cast<Eigen::Index>(out));
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

} // namespace detail

/// The subset is a fixed point of the exchange step on return. The result
/// does not currently depend on `seed`; ties are broken by lowest index.
inline SubsampleSelection uniform_subsample(const MultiShellScheme& scheme, const std::vector<std::size_t>& n_keep,
                                            std::uint64_t seed = 0) {
  (void)seed;
  if (n_keep.size() != scheme.shell_count())
    throw UsageError("n_keep must have one entry per shell");
  SubsampleSelection sel;
  for (std::size_t s = 0; s < scheme.shell_count(); ++s) {
    if (n_keep[s] < 1 || n_keep[s] > scheme.shell(s).size())
      throw UsageError("n_keep out of range for shell " + std::to_string(s));
    sel.indices.push_back(detail::uniform_subset(scheme.shell(s), n_keep[s]));
  }
  return sel;
}

/// True if some single swap (selected <-> unselected) lowers the energy.
inline bool has_improving_swap(const MultiShellScheme& scheme, const SubsampleSelection& sel) {
  validate_selection(scheme, sel);
  for (std::size_t s = 0; s < scheme.shell_count(); ++s) {
    const Shell& shell = scheme.shell(s);
    const Eigen::MatrixXd e = detail::pair_energy_matrix(shell);
    std::vector<char> in_set(shell.size(), 0);
    Eigen::VectorXd contrib = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shell.size()));
    for (std::size_t i : sel.indices[s]) {
      in_set[i] = 1;
      contrib += e.col(static_cast<Eigen::Index>(i));
    }
    detail::SwapCandidate sw;
    if (detail::best_swap(e, sel.indices[s], in_set, contrib, sw))
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Random subsampling.

struct CountRange {
  std::size_t lo = 1;
  std::size_t hi = 1;
};

inline SubsampleSelection random_subsample(const MultiShellScheme& scheme, const std::vector<CountRange>& ranges,
                                           Rng& rng) {
  if (ranges.size() != scheme.shell_count())
    throw UsageError("one count range per shell is required");
  SubsampleSelection sel;
  for (std::size_t s = 0; s < scheme.shell_count(); ++s) {
    const std::size_t n = scheme.shell(s).size();
    const CountRange r = ranges[s];
    if (r.lo > r.hi)
      throw UsageError("empty count range");
    if (r.lo < 1 || r.hi > n)
      throw UsageError("count range outside [1, shell size]");
    std::uniform_int_distribution<std::size_t> count_dist(r.lo, r.hi);
    const std::size_t k = count_dist(rng);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    sel.indices.push_back(std::move(pool));
  }
  return sel;
}

inline SubsampleSelection random_subsample(const MultiShellScheme& scheme, const std::vector<CountRange>& ranges,
                                           std::uint64_t seed) {
  Rng rng(seed);
  return random_subsample(scheme, ranges, rng);
}

} // namespace samrob
