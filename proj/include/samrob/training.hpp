#pragma once

// Sampling-augmented training and scheme-agnostic prediction.
//
// Each iteration draws a fresh random subsample per voxel (count and
// directions both vary), reuses one fixed uniform subsample, fits SH on
// both, and updates the shared network with the configured loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"
#include "samrob/estimator.hpp"
#include "samrob/phantom.hpp"
#include "samrob/scheme.hpp"
#include "samrob/shbasis.hpp"

namespace samrob {

enum class FeatureKind : std::uint32_t { ShCoefficients = 0, RawSignal = 1 };

inline constexpr std::size_t kMinRandomCount = 10;
inline constexpr std::size_t kMinPredictDirections = 6;

struct TrainConfig {
  std::vector<std::size_t> uniform_counts{30, 30};
  std::vector<CountRange> random_ranges; // empty: [10, shell size] per shell
  double mu = 0.001;
  double learning_rate = 0.001;
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::Consistency;
  std::vector<std::size_t> hidden{256, 256, 128};
  int sh_order = kDefaultShOrder;
  double lambda = kDefaultShLambda;
  FeatureKind features = FeatureKind::ShCoefficients;

  std::vector<CountRange> effective_ranges(const MultiShellScheme& scheme) const {
    if (!random_ranges.empty())
      return random_ranges;
    std::vector<CountRange> r;
    for (const auto& sh : scheme.shells())
      r.push_back({std::min(kMinRandomCount, sh.size()), sh.size()});
    return r;
  }

  void validate(const MultiShellScheme& scheme) const {
    if (!(mu >= 0.0))
      throw UsageError("mu must be non-negative");
    if (!(learning_rate > 0.0))
      throw UsageError("learning rate must be positive");
    if (batch_size == 0 || epochs == 0)
      throw UsageError("batch size and epochs must be positive");
    if (!(lambda >= 0.0))
      throw UsageError("lambda must be non-negative");
    check_sh_order(sh_order);
    if (uniform_counts.size() != scheme.shell_count())
      throw UsageError("uniform counts must have one entry per shell");
    for (std::size_t s = 0; s < scheme.shell_count(); ++s)
      if (uniform_counts[s] < 1 || uniform_counts[s] > scheme.shell(s).size())
        throw UsageError("uniform count out of range for shell " + std::to_string(s));
    const auto ranges = effective_ranges(scheme);
    if (ranges.size() != scheme.shell_count())
      throw UsageError("random ranges must have one entry per shell");
    for (std::size_t s = 0; s < ranges.size(); ++s)
      if (ranges[s].lo > ranges[s].hi || ranges[s].lo < 1 || ranges[s].hi > scheme.shell(s).size())
        throw UsageError("random count range invalid for shell " + std::to_string(s));
    for (std::size_t h : hidden)
      if (h == 0)
        throw UsageError("hidden widths must be positive");
  }
};

/// A trained network plus everything needed to build its input features
/// from a signal on an arbitrary scheme.
struct Estimator {
  Mlp network;
  std::vector<double> b_values;
  int sh_order = kDefaultShOrder;
  double lambda = kDefaultShLambda;
  FeatureKind features = FeatureKind::ShCoefficients;
  std::vector<std::size_t> raw_widths;     // per shell, raw features only
  std::vector<std::size_t> uniform_counts; // training q_u, reused by same-sampling tests
  Eigen::VectorXd input_shift;             // standardization applied before the network
  Eigen::VectorXd input_scale;

  std::size_t feature_width() const {
    if (features == FeatureKind::RawSignal)
      return std::accumulate(raw_widths.begin(), raw_widths.end(), std::size_t{0});
    return b_values.size() * sh_coefficient_count(sh_order);
  }

  Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) const {
    return ((x.colwise() - input_shift).array().colwise() / input_scale.array()).matrix();
  }

  Eigen::MatrixXd forward_features(const Eigen::MatrixXd& x) const { return network.forward_batch(standardize(x)); }

  friend bool operator==(const Estimator& a, const Estimator& b) {
    auto same = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) { return x.size() == y.size() && x == y; };
    return a.network == b.network && a.b_values == b.b_values && a.sh_order == b.sh_order && a.lambda == b.lambda &&
           a.features == b.features && a.raw_widths == b.raw_widths && a.uniform_counts == b.uniform_counts &&
           same(a.input_shift, b.input_shift) && same(a.input_scale, b.input_scale);
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  LossTerms terms;
};

struct TrainResult {
  Estimator estimator;
  std::vector<EpochRecord> log;
};

// ---------------------------------------------------------------------------
// Features.

namespace detail {

inline std::vector<Eigen::Index> shell_offsets(const MultiShellScheme& scheme) {
  std::vector<Eigen::Index> off{0};
  for (const auto& sh : scheme.shells())
    off.push_back(off.back() + static_cast<Eigen::Index>(sh.size()));
  return off;
}

} // namespace detail

/// Feature builder for one fixed set of directions (a selection of a parent
/// scheme); the SH fit operators are factorized once and reused per voxel.
class FixedSchemeFeatures {
public:
  FixedSchemeFeatures(const Estimator& est, const MultiShellScheme& parent, const SubsampleSelection& sel)
      : est_(&est) {
    validate_selection(parent, sel);
    const auto offsets = detail::shell_offsets(parent);
    for (double b : est.b_values) {
      std::size_t s = 0;
      while (s < parent.shell_count() && std::abs(parent.shell(s).b_value - b) > 1e-6 * b)
        ++s;
      if (s == parent.shell_count())
        throw UsageError("scheme must contain all trained b-values");
      if (sel.indices[s].size() < kMinPredictDirections)
        throw UsageError("prediction needs at least 6 directions per shell");
      std::vector<Eigen::Index> cols;
      std::vector<Eigen::Vector3d> dirs;
      for (std::size_t i : sel.indices[s]) {
        cols.push_back(offsets[s] + static_cast<Eigen::Index>(i));
        dirs.push_back(parent.shell(s).directions[i].vec());
      }
      columns_.push_back(std::move(cols));
      if (est.features == FeatureKind::ShCoefficients)
        operators_.push_back(sh_fit_operator(build_sh_basis(dirs, est.sh_order), est.lambda));
    }
  }

  /// Features for a row of concatenated signal values on the parent scheme.
  Eigen::VectorXd operator()(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(est_->feature_width()));
    Eigen::Index off = 0;
    for (std::size_t s = 0; s < columns_.size(); ++s) {
      const auto& cols = columns_[s];
      if (est_->features == FeatureKind::ShCoefficients) {
        Eigen::VectorXd e(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k)
          e[static_cast<Eigen::Index>(k)] = row[cols[k]];
        const Eigen::VectorXd c = operators_[s] * e;
        f.segment(off, c.size()) = c;
        off += c.size();
      } else {
        const auto width = static_cast<Eigen::Index>(est_->raw_widths[s]);
        const Eigen::Index n = std::min<Eigen::Index>(width, static_cast<Eigen::Index>(cols.size()));
        for (Eigen::Index k = 0; k < n; ++k)
          f[off + k] = row[cols[static_cast<std::size_t>(k)]];
        off += width;
      }
    }
    return f;
  }

private:
  const Estimator* est_;
  std::vector<std::vector<Eigen::Index>> columns_;
  std::vector<Eigen::MatrixXd> operators_;
};

/// Features of every foreground voxel (one column each) on a selection.
inline Eigen::MatrixXd dataset_features(const Estimator& est, const PhantomDataset& ds, const SubsampleSelection& sel,
                                        const std::vector<std::size_t>& voxels) {
  const FixedSchemeFeatures feat(est, ds.scheme, sel);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(est.feature_width()), static_cast<Eigen::Index>(voxels.size()));
  for (std::size_t j = 0; j < voxels.size(); ++j)
    x.col(static_cast<Eigen::Index>(j)) = feat(ds.signals.row(static_cast<Eigen::Index>(voxels[j])));
  return x;
}

namespace detail {

// Per-sample features on a freshly drawn selection of the full scheme.
struct RandomBranchFeatures {
  const Estimator& est;
  const PhantomDataset& ds;
  std::vector<ShBasisMatrix> full_bases;
  Eigen::VectorXd penalty;
  std::vector<Eigen::Index> offsets;

  RandomBranchFeatures(const Estimator& e, const PhantomDataset& d)
      : est(e), ds(d), full_bases(build_sh_bases(d.scheme, e.sh_order)),
        penalty(e.lambda * laplace_beltrami_normal_penalty(e.sh_order)), offsets(shell_offsets(d.scheme)) {}

  Eigen::VectorXd operator()(std::size_t voxel, const SubsampleSelection& sel) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(est.feature_width()));
    const auto row = ds.signals.row(static_cast<Eigen::Index>(voxel));
    Eigen::Index off = 0;
    for (std::size_t s = 0; s < sel.indices.size(); ++s) {
      const auto& idx = sel.indices[s];
      const auto k = static_cast<Eigen::Index>(idx.size());
      if (est.features == FeatureKind::ShCoefficients) {
        const Eigen::MatrixXd& full = full_bases[s].values;
        Eigen::MatrixXd b(k, full.cols());
        Eigen::VectorXd e(k);
        for (Eigen::Index r = 0; r < k; ++r) {
          b.row(r) = full.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]));
          e[r] = row[offsets[s] + static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)])];
        }
        Eigen::MatrixXd a = b.transpose() * b;
        a.diagonal() += penalty;
        const Eigen::VectorXd c = solve_normal_equations(a, b.transpose() * e);
        f.segment(off, c.size()) = c;
        off += c.size();
      } else {
        const auto width = static_cast<Eigen::Index>(est.raw_widths[s]);
        const Eigen::Index n = std::min(width, k);
        for (Eigen::Index r = 0; r < n; ++r)
          f[off + r] = row[offsets[s] + static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)])];
        off += width;
      }
    }
    return f;
  }
};

inline void fit_standardization(Estimator& est, const Eigen::MatrixXd& x) {
  const double n = static_cast<double>(x.cols());
  est.input_shift = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - est.input_shift;
  est.input_scale = (centered.rowwise().squaredNorm() / n).cwiseSqrt();
  for (Eigen::Index i = 0; i < est.input_scale.size(); ++i)
    if (!(est.input_scale[i] > 1e-8))
      est.input_scale[i] = 1.0;
}

} // namespace detail

inline Eigen::MatrixXd target_matrix(const PhantomDataset& ds, const std::vector<std::size_t>& voxels) {
  Eigen::MatrixXd y(3, static_cast<Eigen::Index>(voxels.size()));
  for (std::size_t j = 0; j < voxels.size(); ++j)
    y.col(static_cast<Eigen::Index>(j)) = ds.params[voxels[j]].targets();
  return y;
}

// ---------------------------------------------------------------------------
// Training.

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const PhantomDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate(ds.scheme);
  const std::vector<std::size_t> voxels = ds.foreground();
  if (voxels.empty())
    throw UsageError("dataset has no foreground voxels");

  Rng rng(cfg.seed);
  TrainResult result;
  Estimator& est = result.estimator;
  est.b_values = ds.scheme.b_values();
  est.sh_order = cfg.sh_order;
  est.lambda = cfg.lambda;
  est.features = cfg.features;
  est.uniform_counts = cfg.uniform_counts;
  if (cfg.features == FeatureKind::RawSignal)
    est.raw_widths = cfg.uniform_counts;

  const SubsampleSelection uniform_sel = uniform_subsample(ds.scheme, cfg.uniform_counts, cfg.seed);
  const Eigen::MatrixXd x_uniform_all = dataset_features(est, ds, uniform_sel, voxels);
  const Eigen::MatrixXd y_all = target_matrix(ds, voxels);
  detail::fit_standardization(est, x_uniform_all);
  const Eigen::MatrixXd xs_uniform_all = est.standardize(x_uniform_all);

  std::vector<std::size_t> widths{est.feature_width()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(3);
  est.network = Mlp::make(widths, rng);

  const detail::RandomBranchFeatures random_features(est, ds);
  // Separate stream so batch order does not depend on the random-branch draws.
  Rng draw_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<CountRange> ranges = cfg.effective_ranges(ds.scheme);
  const LossWeights weights = LossWeights::for_mode(cfg.loss_mode, cfg.mu);
  Eigen::VectorXd theta = est.network.parameters();
  AdamState adam = AdamState::for_size(theta.size());

  std::vector<std::size_t> order(voxels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto feature_rows = static_cast<Eigen::Index>(est.feature_width());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec{epoch + 1, 0.0, {}};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Eigen::MatrixXd xr(feature_rows, static_cast<Eigen::Index>(n));
      Eigen::MatrixXd xu(feature_rows, static_cast<Eigen::Index>(n));
      Eigen::MatrixXd y(3, static_cast<Eigen::Index>(n));
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t k = order[start + j];
        const SubsampleSelection sel = random_subsample(ds.scheme, ranges, draw_rng);
        xr.col(static_cast<Eigen::Index>(j)) = random_features(voxels[k], sel);
        xu.col(static_cast<Eigen::Index>(j)) = xs_uniform_all.col(static_cast<Eigen::Index>(k));
        y.col(static_cast<Eigen::Index>(j)) = y_all.col(static_cast<Eigen::Index>(k));
      }
      const BackwardResult br = backward(est.network, est.standardize(xr), xu, y, weights);
      adam_step(theta, br.gradient, adam, cfg.learning_rate);
      est.network.set_parameters(theta);
      const double frac = static_cast<double>(n) / static_cast<double>(order.size());
      rec.loss += frac * br.loss;
      rec.terms.random += frac * br.terms.random;
      rec.terms.uniform += frac * br.terms.uniform;
      rec.terms.consistency += frac * br.terms.consistency;
    }
    if (!std::isfinite(rec.loss) || !est.network.all_finite())
      throw NumericalError("training diverged at epoch " + std::to_string(epoch + 1));
    result.log.push_back(rec);
    if (on_epoch)
      on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prediction on any scheme carrying the trained b-values.

/// (v_ic, v_iso, od) for one voxel.
inline Eigen::Vector3d predict(const Estimator& est, const DwiSignal& signal, const MultiShellScheme& scheme) {
  if (signal.per_shell.size() != scheme.shell_count())
    throw UsageError("signal and scheme shell counts differ");
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(scheme.total_directions()));
  Eigen::Index off = 0;
  for (std::size_t s = 0; s < scheme.shell_count(); ++s) {
    if (static_cast<std::size_t>(signal.per_shell[s].size()) != scheme.shell(s).size())
      throw UsageError("signal length does not match scheme shell");
    row.segment(off, signal.per_shell[s].size()) = signal.per_shell[s].transpose();
    off += signal.per_shell[s].size();
  }
  const FixedSchemeFeatures feat(est, scheme, SubsampleSelection::identity(scheme));
  return est.forward_features(feat(row)).col(0);
}

/// Predictions for every voxel (3 x voxels, zero outside the mask) using only
/// the selected directions of the dataset's scheme.
inline Eigen::MatrixXd predict_dataset(const Estimator& est, const PhantomDataset& ds, const SubsampleSelection& sel) {
  const auto voxels = ds.foreground();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(ds.voxel_count()));
  if (voxels.empty())
    return out;
  const Eigen::MatrixXd y = est.forward_features(dataset_features(est, ds, sel, voxels));
  for (std::size_t j = 0; j < voxels.size(); ++j)
    out.col(static_cast<Eigen::Index>(voxels[j])) = y.col(static_cast<Eigen::Index>(j));
  return out;
}

} // namespace samrob
