#pragma once

// Binary containers: phantom datasets, trained models and SH coefficient
// maps. All integers and floats are little-endian; every file ends in a
// CRC-32 of the preceding bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "samrob/atomic_file.hpp"
#include "samrob/error.hpp"
#include "samrob/phantom.hpp"
#include "samrob/scheme.hpp"
#include "samrob/shbasis.hpp"
#include "samrob/training.hpp"

namespace samrob {

inline constexpr std::string_view kDatasetMagic{"SRNDSET\0", 8};
inline constexpr std::string_view kModelMagic{"SRNMODL\0", 8};
inline constexpr std::string_view kCoefMagic{"SRNCOEF\0", 8};
inline constexpr std::uint32_t kContainerVersion = 1;

class ByteWriter {
public:
  void raw(std::string_view s) { buf_.append(s); }

  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k)
      buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
  }

  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k)
      buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  /// Appends the CRC-32 of everything written so far and returns the bytes.
  std::string finish() {
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(buf_.size()));
    u32(static_cast<std::uint32_t>(crc));
    return std::move(buf_);
  }

private:
  std::string buf_;
};

class ByteReader {
public:
  /// Verifies magic, version and checksum before any field is read.
  ByteReader(std::string bytes, std::string_view magic, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {
    if (buf_.size() < magic.size() + 8 || std::string_view(buf_).substr(0, magic.size()) != magic)
      throw FormatError(what_ + ": bad magic");
    const std::size_t body = buf_.size() - 4;
    end_ = buf_.size();
    pos_ = body;
    const std::uint32_t stored = u32();
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(body));
    if (stored != static_cast<std::uint32_t>(crc))
      throw FormatError(what_ + ": checksum mismatch");
    end_ = body;
    pos_ = magic.size();
    if (const std::uint32_t v = u32(); v != kContainerVersion)
      throw FormatError(what_ + ": unsupported version " + std::to_string(v));
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + k])) << (8 * k);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + k])) << (8 * k);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }

  /// A count that must fit in what remains, each element taking `unit` bytes.
  std::size_t count(std::size_t unit, std::uint64_t limit = UINT64_MAX) {
    const std::uint64_t n = u64();
    if (n > limit || (unit > 0 && n > (end_ - pos_) / unit))
      throw FormatError(what_ + ": implausible count");
    return static_cast<std::size_t>(n);
  }

  void expect_end() const {
    if (pos_ != end_)
      throw FormatError(what_ + ": trailing bytes");
  }

  const std::string& what() const { return what_; }

private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n)
      throw FormatError(what_ + ": truncated");
  }

  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

// ---------------------------------------------------------------------------
// Shared pieces.

namespace detail {

inline void write_scheme_table(ByteWriter& w, const MultiShellScheme& scheme) {
  w.u32(static_cast<std::uint32_t>(scheme.shell_count()));
  for (const auto& sh : scheme.shells()) {
    w.f64(sh.b_value);
    w.u64(sh.size());
    for (const auto& d : sh.directions) {
      w.f64(d.vec().x());
      w.f64(d.vec().y());
      w.f64(d.vec().z());
    }
  }
}

inline MultiShellScheme read_scheme_table(ByteReader& r) {
  const std::uint32_t n_shells = r.u32();
  if (n_shells == 0 || n_shells > 64)
    throw FormatError(r.what() + ": implausible shell count");
  try {
    std::vector<Shell> shells;
    for (std::uint32_t s = 0; s < n_shells; ++s) {
      Shell sh;
      sh.b_value = r.f64();
      const std::size_t n = r.count(24);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = r.f64(), y = r.f64(), z = r.f64();
        sh.directions.emplace_back(Eigen::Vector3d(x, y, z));
      }
      shells.push_back(std::move(sh));
    }
    return MultiShellScheme(std::move(shells));
  } catch (const UsageError& e) {
    throw FormatError(r.what() + ": invalid scheme table: " + e.what());
  }
}

inline void write_mask(ByteWriter& w, const std::vector<std::uint8_t>& mask) {
  std::string bits((mask.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i])
      bits[i / 8] = static_cast<char>(static_cast<unsigned char>(bits[i / 8]) | (1u << (i % 8)));
  w.raw(bits);
}

inline std::vector<std::uint8_t> read_mask(ByteReader& r, std::size_t n) {
  std::vector<std::uint8_t> mask(n);
  std::uint8_t byte = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 8 == 0)
      byte = r.u8();
    mask[i] = (byte >> (i % 8)) & 1u;
  }
  return mask;
}

inline void check_dims(const ByteReader& r, std::uint64_t h, std::uint64_t w) {
  if (h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16))
    throw FormatError(r.what() + ": implausible grid dimensions");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dataset: magic, version, dims, shell table, mask bitmap, parameter planes
// (v_ic, v_iso, od), latent planes (mu x, y, z, kappa), one signal plane per
// direction, noise sigma, seed, CRC-32.

inline std::string encode_dataset(const PhantomDataset& ds) {
  ByteWriter w;
  w.raw(kDatasetMagic);
  w.u32(kContainerVersion);
  w.u64(ds.height);
  w.u64(ds.width);
  detail::write_scheme_table(w, ds.scheme);
  detail::write_mask(w, ds.mask);
  const std::size_t n = ds.voxel_count();
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < n; ++i)
      w.f64(ds.params[i].targets()[k]);
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < n; ++i)
      w.f64(ds.params[i].mu_dir.vec()[k]);
  for (std::size_t i = 0; i < n; ++i)
    w.f64(ds.params[i].kappa);
  for (Eigen::Index d = 0; d < ds.signals.cols(); ++d)
    for (std::size_t i = 0; i < n; ++i)
      w.f64(ds.signals(static_cast<Eigen::Index>(i), d));
  w.f64(ds.noise_sigma);
  w.u64(ds.seed);
  return w.finish();
}

inline PhantomDataset decode_dataset(std::string bytes) {
  ByteReader r(std::move(bytes), kDatasetMagic, "dataset");
  PhantomDataset ds;
  const std::uint64_t h = r.u64(), w = r.u64();
  detail::check_dims(r, h, w);
  ds.height = h;
  ds.width = w;
  ds.scheme = detail::read_scheme_table(r);
  const std::size_t n = ds.voxel_count();
  ds.mask = detail::read_mask(r, n);
  std::vector<double> planes[7];
  for (auto& p : planes) {
    p.resize(n);
    for (double& v : p)
      v = r.f64();
  }
  ds.params.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    NoddiParams p;
    p.v_ic = planes[0][i];
    p.v_iso = planes[1][i];
    p.od = planes[2][i];
    try {
      if (ds.mask[i])
        p.mu_dir = GradientDirection(Eigen::Vector3d(planes[3][i], planes[4][i], planes[5][i]));
      else
        p.mu_dir = GradientDirection{};
      p.kappa = planes[6][i];
      p.validate();
    } catch (const UsageError& e) {
      throw FormatError("dataset: invalid parameters at voxel " + std::to_string(i) + ": " + e.what());
    }
    ds.params[i] = p;
  }
  const auto dirs = static_cast<Eigen::Index>(ds.scheme.total_directions());
  ds.signals.resize(static_cast<Eigen::Index>(n), dirs);
  for (Eigen::Index d = 0; d < dirs; ++d)
    for (std::size_t i = 0; i < n; ++i)
      ds.signals(static_cast<Eigen::Index>(i), d) = r.f64();
  ds.noise_sigma = r.f64();
  ds.seed = r.u64();
  r.expect_end();
  return ds;
}

inline void write_dataset(const std::string& path, const PhantomDataset& ds) {
  write_file_atomically(path, encode_dataset(ds));
}

inline PhantomDataset read_dataset(const std::string& path) { return decode_dataset(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Model: magic, version, layer count, per-layer (out, in), then per layer the
// column-major weights followed by the biases; the trained b-values and SH
// order; then lambda, feature kind, raw widths, uniform counts and the input
// standardization vectors; CRC-32.

inline std::string encode_model(const Estimator& est) {
  ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kContainerVersion);
  const auto& layers = est.network.layers();
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    w.u64(static_cast<std::uint64_t>(l.weight.rows()));
    w.u64(static_cast<std::uint64_t>(l.weight.cols()));
  }
  for (const auto& l : layers) {
    for (Eigen::Index k = 0; k < l.weight.size(); ++k)
      w.f64(l.weight.data()[k]);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k)
      w.f64(l.bias[k]);
  }
  w.u32(static_cast<std::uint32_t>(est.b_values.size()));
  for (double b : est.b_values)
    w.f64(b);
  w.u32(static_cast<std::uint32_t>(est.sh_order));
  w.f64(est.lambda);
  w.u32(static_cast<std::uint32_t>(est.features));
  w.u64(est.raw_widths.size());
  for (std::size_t v : est.raw_widths)
    w.u64(v);
  w.u64(est.uniform_counts.size());
  for (std::size_t v : est.uniform_counts)
    w.u64(v);
  w.u64(static_cast<std::uint64_t>(est.input_shift.size()));
  for (Eigen::Index k = 0; k < est.input_shift.size(); ++k)
    w.f64(est.input_shift[k]);
  for (Eigen::Index k = 0; k < est.input_scale.size(); ++k)
    w.f64(est.input_scale[k]);
  return w.finish();
}

inline Estimator decode_model(std::string bytes) {
  ByteReader r(std::move(bytes), kModelMagic, "model");
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64)
    throw FormatError("model: implausible layer count");
  std::vector<std::size_t> widths;
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    const std::uint64_t out = r.u64(), in = r.u64();
    if (out == 0 || in == 0 || out > (1u << 20) || in > (1u << 20))
      throw FormatError("model: implausible layer dimensions");
    if (k == 0)
      widths.push_back(in);
    else if (in != widths.back())
      throw FormatError("model: layer dimensions do not chain");
    widths.push_back(out);
  }
  Estimator est;
  est.network = Mlp::zeros(widths);
  Eigen::VectorXd theta(static_cast<Eigen::Index>(est.network.parameter_count()));
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    theta[k] = r.f64();
  est.network.set_parameters(theta);
  if (!est.network.all_finite())
    throw FormatError("model: non-finite parameters");
  const std::uint32_t n_shells = r.u32();
  if (n_shells == 0 || n_shells > 64)
    throw FormatError("model: implausible shell count");
  for (std::uint32_t s = 0; s < n_shells; ++s)
    est.b_values.push_back(r.f64());
  est.sh_order = static_cast<int>(r.u32());
  est.lambda = r.f64();
  const std::uint32_t kind = r.u32();
  if (kind > 1)
    throw FormatError("model: unknown feature kind");
  est.features = static_cast<FeatureKind>(kind);
  const std::size_t n_raw = r.count(8, 64);
  for (std::size_t k = 0; k < n_raw; ++k)
    est.raw_widths.push_back(r.u64());
  const std::size_t n_uni = r.count(8, 64);
  for (std::size_t k = 0; k < n_uni; ++k)
    est.uniform_counts.push_back(r.u64());
  const std::size_t n_in = r.count(16);
  est.input_shift.resize(static_cast<Eigen::Index>(n_in));
  est.input_scale.resize(static_cast<Eigen::Index>(n_in));
  for (Eigen::Index k = 0; k < est.input_shift.size(); ++k)
    est.input_shift[k] = r.f64();
  for (Eigen::Index k = 0; k < est.input_scale.size(); ++k)
    est.input_scale[k] = r.f64();
  r.expect_end();
  try {
    check_sh_order(est.sh_order);
  } catch (const UsageError&) {
    throw FormatError("model: invalid SH order");
  }
  if (est.features == FeatureKind::RawSignal && est.raw_widths.size() != est.b_values.size())
    throw FormatError("model: raw widths do not match shells");
  if (n_in != est.feature_width() || n_in != est.network.input_width())
    throw FormatError("model: feature width does not match the network input");
  return est;
}

inline void write_model(const std::string& path, const Estimator& est) { write_file_atomically(path, encode_model(est)); }

inline Estimator read_model(const std::string& path) { return decode_model(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// SH coefficient maps: magic, version, dims, SH order, lambda, shell
// b-values, mask bitmap, then shells x coefficients planes (ascending b,
// coefficient index fastest across planes), CRC-32.

struct CoefficientMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  int order = kDefaultShOrder;
  double lambda = kDefaultShLambda;
  std::vector<double> b_values;
  std::vector<std::uint8_t> mask;
  Eigen::MatrixXd values; // voxels x (shells * coefficients)

  std::size_t plane_count() const { return static_cast<std::size_t>(values.cols()); }
};

/// Fits every voxel of the dataset on the selected directions.
inline CoefficientMaps fit_dataset(const PhantomDataset& ds, const SubsampleSelection& sel, int order, double lambda) {
  validate_selection(ds.scheme, sel);
  CoefficientMaps out{ds.height, ds.width, order, lambda, ds.scheme.b_values(), ds.mask, {}};
  const auto offsets = detail::shell_offsets(ds.scheme);
  const auto nc = static_cast<Eigen::Index>(sh_coefficient_count(order));
  out.values.resize(static_cast<Eigen::Index>(ds.voxel_count()), nc * static_cast<Eigen::Index>(sel.indices.size()));
  std::vector<ShBasisMatrix> bases;
  for (std::size_t s = 0; s < sel.indices.size(); ++s) {
    std::vector<Eigen::Vector3d> dirs;
    for (std::size_t i : sel.indices[s])
      dirs.push_back(ds.scheme.shell(s).directions[i].vec());
    bases.push_back(build_sh_basis(dirs, order));
  }
  warn_if_sparse(bases);
  for (std::size_t s = 0; s < sel.indices.size(); ++s) {
    const Eigen::MatrixXd op = sh_fit_operator(bases[s], lambda);
    Eigen::MatrixXd e(static_cast<Eigen::Index>(sel.indices[s].size()), static_cast<Eigen::Index>(ds.voxel_count()));
    for (std::size_t k = 0; k < sel.indices[s].size(); ++k)
      e.row(static_cast<Eigen::Index>(k)) =
          ds.signals.col(offsets[s] + static_cast<Eigen::Index>(sel.indices[s][k])).transpose();
    out.values.middleCols(static_cast<Eigen::Index>(s) * nc, nc) = (op * e).transpose();
  }
  return out;
}

inline std::string encode_coefficients(const CoefficientMaps& c) {
  ByteWriter w;
  w.raw(kCoefMagic);
  w.u32(kContainerVersion);
  w.u64(c.height);
  w.u64(c.width);
  w.u32(static_cast<std::uint32_t>(c.order));
  w.f64(c.lambda);
  w.u32(static_cast<std::uint32_t>(c.b_values.size()));
  for (double b : c.b_values)
    w.f64(b);
  detail::write_mask(w, c.mask);
  for (Eigen::Index p = 0; p < c.values.cols(); ++p)
    for (Eigen::Index i = 0; i < c.values.rows(); ++i)
      w.f64(c.values(i, p));
  return w.finish();
}

inline CoefficientMaps decode_coefficients(std::string bytes) {
  ByteReader r(std::move(bytes), kCoefMagic, "coefficients");
  CoefficientMaps c;
  const std::uint64_t h = r.u64(), w = r.u64();
  detail::check_dims(r, h, w);
  c.height = h;
  c.width = w;
  c.order = static_cast<int>(r.u32());
  try {
    check_sh_order(c.order);
  } catch (const UsageError&) {
    throw FormatError("coefficients: invalid SH order");
  }
  c.lambda = r.f64();
  const std::uint32_t n_shells = r.u32();
  if (n_shells == 0 || n_shells > 64)
    throw FormatError("coefficients: implausible shell count");
  for (std::uint32_t s = 0; s < n_shells; ++s)
    c.b_values.push_back(r.f64());
  const std::size_t n = c.height * c.width;
  c.mask = detail::read_mask(r, n);
  const auto planes = static_cast<Eigen::Index>(n_shells * sh_coefficient_count(c.order));
  c.values.resize(static_cast<Eigen::Index>(n), planes);
  for (Eigen::Index p = 0; p < planes; ++p)
    for (Eigen::Index i = 0; i < c.values.rows(); ++i)
      c.values(i, p) = r.f64();
  r.expect_end();
  return c;
}

inline void write_coefficients(const std::string& path, const CoefficientMaps& c) {
  write_file_atomically(path, encode_coefficients(c));
}

inline CoefficientMaps read_coefficients(const std::string& path) { return decode_coefficients(read_file_bytes(path)); }

} // namespace samrob
