#pragma once

// Test protocols: same-sampling, random-sampling, sampling-rate sweep,
// flexible shell splits, and loss-mode ablation. Results are tables of
// per-parameter and pooled PSNR/SSIM rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"
#include "samrob/metrics.hpp"
#include "samrob/phantom.hpp"
#include "samrob/scheme.hpp"
#include "samrob/training.hpp"

namespace samrob {

enum class Protocol { SameSampling, RandomSampling, Sweep, Flexible, Ablation };

inline std::string to_string(Protocol p) {
  switch (p) {
  case Protocol::SameSampling: return "ss";
  case Protocol::RandomSampling: return "rs";
  case Protocol::Sweep: return "sweep";
  case Protocol::Flexible: return "flexible";
  case Protocol::Ablation: return "ablation";
  }
  return "?";
}

inline Protocol parse_protocol(const std::string& s) {
  for (Protocol p : {Protocol::SameSampling, Protocol::RandomSampling, Protocol::Sweep, Protocol::Flexible,
                     Protocol::Ablation})
    if (to_string(p) == s)
      return p;
  throw UsageError("unknown protocol '" + s + "' (expected ss, rs, sweep, flexible or ablation)");
}

struct SchemeSplit {
  std::vector<std::size_t> per_shell;

  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t k : per_shell)
      n += k;
    return n;
  }
};

inline std::vector<std::size_t> default_sweep_totals() { return {20, 30, 40, 50, 60, 70, 80}; }

inline std::vector<SchemeSplit> default_flexible_splits() {
  return {{{12, 17}}, {{16, 22}}, {{18, 27}}, {{21, 28}}, {{26, 23}},
          {{36, 13}}, {{23, 31}}, {{10, 51}}, {{51, 10}}, {{65, 11}}};
}

struct ExperimentSpec {
  Protocol protocol = Protocol::SameSampling;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::size_t> rs_counts{30, 30};
  std::vector<std::size_t> sweep_totals = default_sweep_totals();
  std::vector<SchemeSplit> flexible = default_flexible_splits();
};

inline const char* const kParamNames[3] = {"v_ic", "v_iso", "od"};

struct MetricRow {
  std::string protocol;
  std::uint64_t seed = 0;
  std::vector<std::size_t> split;
  std::string param; // v_ic, v_iso, od or All
  double psnr_db = 0.0;
  double ssim = 0.0;

  std::size_t total() const { return SchemeSplit{split}.total(); }
};

struct MetricSummary {
  std::string protocol;
  std::vector<std::size_t> split;
  std::string param;
  double psnr_mean = 0.0, psnr_sd = 0.0;
  double ssim_mean = 0.0, ssim_sd = 0.0;
  std::size_t n = 0;
};

inline std::string format_metric(double v) {
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct MetricReport {
  std::vector<MetricRow> rows;

  void append(const MetricReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

  std::vector<MetricRow> select(const std::string& protocol, const std::string& param) const {
    std::vector<MetricRow> out;
    for (const auto& r : rows)
      if (r.protocol == protocol && r.param == param)
        out.push_back(r);
    return out;
  }

  std::string to_csv() const {
    std::string s = "protocol,seed,total_dirs,split_b1000,split_b2000,param,psnr_db,ssim\n";
    for (const auto& r : rows) {
      s += r.protocol + ',' + std::to_string(r.seed) + ',' + std::to_string(r.total()) + ',';
      s += (r.split.size() > 0 ? std::to_string(r.split[0]) : "") + ',';
      s += (r.split.size() > 1 ? std::to_string(r.split[1]) : "") + ',';
      s += r.param + ',' + format_metric(r.psnr_db) + ',' + format_metric(r.ssim) + '\n';
    }
    return s;
  }

  /// Mean and sample standard deviation across seeds, grouped by
  /// (protocol, split, param) in first-appearance order.
  std::vector<MetricSummary> summarize() const {
    std::vector<MetricSummary> out;
    std::map<std::tuple<std::string, std::vector<std::size_t>, std::string>, std::size_t> slot;
    std::vector<std::vector<const MetricRow*>> members;
    for (const auto& r : rows) {
      const auto key = std::make_tuple(r.protocol, r.split, r.param);
      auto [it, fresh] = slot.emplace(key, out.size());
      if (fresh) {
        out.push_back({r.protocol, r.split, r.param});
        members.emplace_back();
      }
      members[it->second].push_back(&r);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
      const auto& m = members[k];
      auto stats = [&](auto get, double& mean, double& sd) {
        mean = 0.0;
        for (const auto* r : m)
          mean += get(*r);
        mean /= static_cast<double>(m.size());
        sd = 0.0;
        if (m.size() > 1) {
          for (const auto* r : m)
            sd += (get(*r) - mean) * (get(*r) - mean);
          sd = std::sqrt(sd / static_cast<double>(m.size() - 1));
        }
      };
      out[k].n = m.size();
      stats([](const MetricRow& r) { return r.psnr_db; }, out[k].psnr_mean, out[k].psnr_sd);
      stats([](const MetricRow& r) { return r.ssim; }, out[k].ssim_mean, out[k].ssim_sd);
    }
    return out;
  }
};

inline std::string summary_text(const MetricReport& report) {
  std::string s;
  for (const auto& m : report.summarize()) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-18s %3zu dirs %-6s PSNR %s +- %.3f dB  SSIM %.4f +- %.4f  (n=%zu)\n",
                  m.protocol.c_str(), SchemeSplit{m.split}.total(), m.param.c_str(),
                  format_metric(m.psnr_mean).c_str(), m.psnr_sd, m.ssim_mean, m.ssim_sd, m.n);
    s += buf;
  }
  return s;
}

// ---------------------------------------------------------------------------

inline Image parameter_image(const PhantomDataset& ds, std::size_t k) {
  Image img(static_cast<Eigen::Index>(ds.height), static_cast<Eigen::Index>(ds.width));
  for (std::size_t r = 0; r < ds.height; ++r)
    for (std::size_t c = 0; c < ds.width; ++c)
      img(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          ds.params[r * ds.width + c].targets()[static_cast<Eigen::Index>(k)];
  return img;
}

inline Image prediction_image(const PhantomDataset& ds, const Eigen::MatrixXd& pred, std::size_t k) {
  Image img(static_cast<Eigen::Index>(ds.height), static_cast<Eigen::Index>(ds.width));
  for (std::size_t r = 0; r < ds.height; ++r)
    for (std::size_t c = 0; c < ds.width; ++c)
      img(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          pred(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r * ds.width + c));
  return img;
}

inline MaskImage mask_image(const PhantomDataset& ds) {
  MaskImage m(static_cast<Eigen::Index>(ds.height), static_cast<Eigen::Index>(ds.width));
  for (std::size_t r = 0; r < ds.height; ++r)
    for (std::size_t c = 0; c < ds.width; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = ds.mask[r * ds.width + c] != 0;
  return m;
}

/// Rows for v_ic, v_iso, od and the pooled "All" entry. Pooled PSNR uses the
/// MSE over all three stacked maps; pooled SSIM averages every local window
/// of all three maps.
inline std::vector<MetricRow> score_prediction(const PhantomDataset& ds, const Eigen::MatrixXd& pred,
                                               const std::string& protocol, std::uint64_t seed,
                                               const std::vector<std::size_t>& split) {
  const MaskImage mask = mask_image(ds);
  std::vector<MetricRow> rows;
  SquaredError pooled;
  double ssim_sum = 0.0;
  std::size_t ssim_count = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const Image ref = parameter_image(ds, k), test = prediction_image(ds, pred, k);
    SquaredError e;
    e.add(ref, test, mask);
    pooled.add(ref, test, mask);
    const auto local = ssim_map(ref, test, mask);
    if (local.empty())
      throw UsageError("no masked window centers for SSIM");
    double s = 0.0;
    for (double v : local)
      s += v;
    ssim_sum += s;
    ssim_count += local.size();
    rows.push_back({protocol, seed, split, kParamNames[k], e.psnr(1.0), s / static_cast<double>(local.size())});
  }
  rows.push_back({protocol, seed, split, "All", pooled.psnr(1.0), ssim_sum / static_cast<double>(ssim_count)});
  return rows;
}

namespace detail {

inline void check_protocol_shells(const Estimator& est, const PhantomDataset& ds) {
  const auto b = ds.scheme.b_values();
  if (b.size() != est.b_values.size())
    throw UsageError("incompatible shells: dataset and model b-values differ");
  for (std::size_t s = 0; s < b.size(); ++s)
    if (std::abs(b[s] - est.b_values[s]) > 1e-6 * est.b_values[s])
      throw UsageError("incompatible shells: dataset and model b-values differ");
}

inline std::vector<std::size_t> split_counts(const SchemeSplit& split, const MultiShellScheme& scheme) {
  if (split.per_shell.size() != scheme.shell_count())
    throw UsageError("scheme split needs one count per shell");
  return split.per_shell;
}

} // namespace detail

inline MetricReport evaluate_selection(const Estimator& est, const PhantomDataset& ds, const SubsampleSelection& sel,
                                       const std::string& protocol, std::uint64_t seed) {
  MetricReport rep;
  rep.rows = score_prediction(ds, predict_dataset(est, ds, sel), protocol, seed, sel.counts());
  return rep;
}

/// SS, RS, sweep and flexible protocols on a trained model. The ablation
/// protocol retrains and lives in run_ablation.
inline MetricReport run_protocol(const ExperimentSpec& spec, const Estimator& est, const PhantomDataset& ds) {
  detail::check_protocol_shells(est, ds);
  if (spec.seeds.empty())
    throw UsageError("at least one seed is required");
  MetricReport rep;
  const MultiShellScheme& full = ds.scheme;
  switch (spec.protocol) {
  case Protocol::SameSampling: {
    if (est.uniform_counts.size() != full.shell_count())
      throw UsageError("model does not record its uniform subsample counts");
    const SubsampleSelection sel = uniform_subsample(full, est.uniform_counts);
    for (std::uint64_t seed : spec.seeds)
      rep.append(evaluate_selection(est, ds, sel, "ss", seed));
    break;
  }
  case Protocol::RandomSampling: {
    const auto counts = detail::split_counts({spec.rs_counts}, full);
    std::vector<CountRange> ranges;
    for (std::size_t k : counts)
      ranges.push_back({k, k});
    for (std::uint64_t seed : spec.seeds)
      rep.append(evaluate_selection(est, ds, random_subsample(full, ranges, seed), "rs", seed));
    break;
  }
  case Protocol::Sweep: {
    if (full.shell_count() != 2)
      throw UsageError("sweep protocol needs a two-shell scheme");
    for (std::size_t total : spec.sweep_totals) {
      if (total % 2 != 0)
        throw UsageError("sweep totals must split 1:1 across shells");
      const SubsampleSelection sel = uniform_subsample(full, {total / 2, total / 2});
      for (std::uint64_t seed : spec.seeds)
        rep.append(evaluate_selection(est, ds, sel, "sweep", seed));
    }
    break;
  }
  case Protocol::Flexible: {
    for (const auto& split : spec.flexible) {
      const SubsampleSelection sel = uniform_subsample(full, detail::split_counts(split, full));
      for (std::uint64_t seed : spec.seeds)
        rep.append(evaluate_selection(est, ds, sel, "flexible", seed));
    }
    break;
  }
  case Protocol::Ablation:
    throw UsageError("ablation retrains models; use run_ablation");
  }
  return rep;
}

/// Retrains under each loss mode once per seed (the seed drives training)
/// and reports SS and RS on the test dataset. RS uses the same seed for its
/// random selection.
inline MetricReport run_ablation(const ExperimentSpec& spec, const TrainConfig& base, const PhantomDataset& train_ds,
                                 const PhantomDataset& test_ds) {
  if (spec.seeds.empty())
    throw UsageError("at least one seed is required");
  MetricReport rep;
  for (LossMode mode : {LossMode::Random, LossMode::Uniform, LossMode::RandomPlusUniform, LossMode::Consistency}) {
    for (std::uint64_t seed : spec.seeds) {
      TrainConfig cfg = base;
      cfg.loss_mode = mode;
      cfg.seed = seed;
      const Estimator est = train(train_ds, cfg).estimator;
      for (Protocol p : {Protocol::SameSampling, Protocol::RandomSampling}) {
        ExperimentSpec one = spec;
        one.protocol = p;
        one.seeds = {seed};
        MetricReport r = run_protocol(one, est, test_ds);
        for (auto& row : r.rows)
          row.protocol = "ablation-" + to_string(mode) + "-" + to_string(p);
        rep.append(r);
      }
    }
  }
  return rep;
}

} // namespace samrob
