#pragma once

// Regression backbone (fully connected, ReLU hidden, logistic output), the
// sampling-consistency loss and its exact gradients, and Adam.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "samrob/error.hpp"
#include "samrob/scheme.hpp"

namespace samrob {

struct DenseLayer {
  Eigen::MatrixXd weight; // out x in
  Eigen::VectorXd bias;   // out

  std::size_t in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Activations are column-major batches: one column per sample.
class Mlp {
public:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs; // input to each layer
    std::vector<Eigen::MatrixXd> pre;    // pre-activation of each layer
    Eigen::MatrixXd output;
  };

  Mlp() = default;

  explicit Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  /// He-normal weights for the ReLU layers, zero biases.
  static Mlp make(const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2)
      throw UsageError("network needs at least an input and an output width");
    std::vector<DenseLayer> layers;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      const auto in = static_cast<Eigen::Index>(widths[k]);
      const auto out = static_cast<Eigen::Index>(widths[k + 1]);
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(in)));
      DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      for (Eigen::Index c = 0; c < in; ++c)
        for (Eigen::Index r = 0; r < out; ++r)
          l.weight(r, c) = g(rng);
      layers.push_back(std::move(l));
    }
    return Mlp(std::move(layers));
  }

  static Mlp zeros(const std::vector<std::size_t>& widths) {
    std::vector<DenseLayer> layers;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k)
      layers.push_back({Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(widths[k + 1]),
                                              static_cast<Eigen::Index>(widths[k])),
                        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(widths[k + 1]))});
    return Mlp(std::move(layers));
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t input_width() const { return layers_.empty() ? 0 : layers_.front().in(); }
  std::size_t output_width() const { return layers_.empty() ? 0 : layers_.back().out(); }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    if (layers_.empty())
      return w;
    w.push_back(layers_.front().in());
    for (const auto& l : layers_)
      w.push_back(l.out());
    return w;
  }

  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const { return forward_cached(x).output; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const { return forward_batch(x).col(0); }

  Cache forward_cached(const Eigen::MatrixXd& x) const {
    if (layers_.empty())
      throw UsageError("empty network");
    if (static_cast<std::size_t>(x.rows()) != input_width())
      throw UsageError("feature width " + std::to_string(x.rows()) + " does not match model input width " +
                       std::to_string(input_width()));
    Cache c;
    Eigen::MatrixXd a = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const DenseLayer& l = layers_[k];
      Eigen::MatrixXd z = l.weight * a;
      z.colwise() += l.bias;
      c.inputs.push_back(std::move(a));
      if (k + 1 < layers_.size())
        a = z.cwiseMax(0.0);
      else
        a = logistic(z);
      c.pre.push_back(std::move(z));
    }
    c.output = std::move(a);
    return c;
  }

  /// Parameter gradient given dL/d(output), packed like parameters().
  Eigen::VectorXd backward(const Cache& c, const Eigen::MatrixXd& d_output) const {
    Eigen::VectorXd grad(static_cast<Eigen::Index>(parameter_count()));
    Eigen::MatrixXd delta = d_output.cwiseProduct(c.output.cwiseProduct((1.0 - c.output.array()).matrix()));
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const DenseLayer& l = layers_[k];
      const Eigen::Index off = offset(k);
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + off, l.weight.rows(), l.weight.cols());
      gw.noalias() = delta * c.inputs[k].transpose();
      grad.segment(off + l.weight.size(), l.bias.size()) = delta.rowwise().sum();
      if (k > 0) {
        Eigen::MatrixXd back = l.weight.transpose() * delta;
        delta = back.cwiseProduct((c.pre[k - 1].array() > 0.0).cast<double>().matrix());
      }
    }
    return grad;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Packed per layer: weights (column-major), then bias.
  Eigen::VectorXd parameters() const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count()));
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Eigen::Index off = offset(k);
      const DenseLayer& l = layers_[k];
      p.segment(off, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
      p.segment(off + l.weight.size(), l.bias.size()) = l.bias;
    }
    return p;
  }

  void set_parameters(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count())
      throw UsageError("parameter vector has the wrong length");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Eigen::Index off = offset(k);
      DenseLayer& l = layers_[k];
      Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = p.segment(off, l.weight.size());
      l.bias = p.segment(off + l.weight.size(), l.bias.size());
    }
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite())
        return false;
    return true;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size())
      return false;
    for (std::size_t k = 0; k < a.layers_.size(); ++k) {
      const auto &x = a.layers_[k], &y = b.layers_[k];
      if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() || x.weight != y.weight ||
          x.bias != y.bias)
        return false;
    }
    return true;
  }

private:
  static Eigen::MatrixXd logistic(const Eigen::MatrixXd& z) {
    return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }

  Eigen::Index offset(std::size_t k) const {
    Eigen::Index off = 0;
    for (std::size_t j = 0; j < k; ++j)
      off += layers_[j].weight.size() + layers_[j].bias.size();
    return off;
  }

  void validate() const {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (layers_[k].bias.size() != layers_[k].weight.rows())
        throw UsageError("bias length must equal layer output width");
      if (k > 0 && layers_[k].in() != layers_[k - 1].out())
        throw UsageError("layer dimensions do not chain");
    }
  }

  std::vector<DenseLayer> layers_;
};

/// Any network usable by the trainer: batched forward with a cache, exact
/// parameter gradients, and packed parameter access for the optimizer.
template <class B>
concept RegressionBackbone = requires(const B& cb, B& b, const Eigen::MatrixXd& x, const Eigen::VectorXd& theta,
                                      const typename B::Cache& cache) {
  { cb.input_width() } -> std::convertible_to<std::size_t>;
  { cb.output_width() } -> std::convertible_to<std::size_t>;
  { cb.forward_batch(x) } -> std::convertible_to<Eigen::MatrixXd>;
  { cb.forward_cached(x) } -> std::same_as<typename B::Cache>;
  { cache.output } -> std::convertible_to<Eigen::MatrixXd>;
  { cb.backward(cache, x) } -> std::convertible_to<Eigen::VectorXd>;
  { cb.parameters() } -> std::convertible_to<Eigen::VectorXd>;
  b.set_parameters(theta);
};

static_assert(RegressionBackbone<Mlp>);

// ---------------------------------------------------------------------------
// Losses. Targets and predictions are 3 x N (one column per sample).

struct LossTerms {
  double random = 0.0;      // L_r
  double uniform = 0.0;     // L_u
  double consistency = 0.0; // L_{r,u}
};

inline LossTerms loss_terms(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_random, const Eigen::MatrixXd& y_uniform) {
  if (y.rows() != y_random.rows() || y.cols() != y_random.cols() || y.rows() != y_uniform.rows() ||
      y.cols() != y_uniform.cols())
    throw UsageError("loss inputs must share one shape");
  if (y.cols() < 1)
    throw UsageError("loss needs at least one sample");
  const double n = static_cast<double>(y.cols());
  return {(y - y_random).squaredNorm() / n, (y - y_uniform).squaredNorm() / n,
          (y_random - y_uniform).squaredNorm() / n};
}

inline double consistency_loss(const LossTerms& t, double mu) {
  if (!(mu >= 0.0))
    throw UsageError("mu must be non-negative");
  return t.random + t.uniform + mu * t.consistency;
}

enum class LossMode { Random, Uniform, RandomPlusUniform, Consistency };

inline std::string to_string(LossMode m) {
  switch (m) {
  case LossMode::Random:
    return "lr";
  case LossMode::Uniform:
    return "lu";
  case LossMode::RandomPlusUniform:
    return "lr+lu";
  case LossMode::Consistency:
    return "consis";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "lr")
    return LossMode::Random;
  if (s == "lu")
    return LossMode::Uniform;
  if (s == "lr+lu")
    return LossMode::RandomPlusUniform;
  if (s == "consis")
    return LossMode::Consistency;
  throw UsageError("loss mode must be one of lr, lu, lr+lu, consis (got '" + s + "')");
}

/// Coefficients on (L_r, L_u, L_{r,u}) for each training loss setting.
struct LossWeights {
  double random = 1.0;
  double uniform = 1.0;
  double consistency = 0.0;

  static LossWeights for_mode(LossMode mode, double mu) {
    if (!(mu >= 0.0))
      throw UsageError("mu must be non-negative");
    switch (mode) {
    case LossMode::Random:
      return {1.0, 0.0, 0.0};
    case LossMode::Uniform:
      return {0.0, 1.0, 0.0};
    case LossMode::RandomPlusUniform:
      return {1.0, 1.0, 0.0};
    case LossMode::Consistency:
      return {1.0, 1.0, mu};
    }
    return {};
  }

  double combine(const LossTerms& t) const {
    return random * t.random + uniform * t.uniform + consistency * t.consistency;
  }
};

struct BackwardResult {
  LossTerms terms;
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

/// Gradient of the weighted loss through both branches. The branches share
/// one set of weights, so their parameter gradients add.
template <RegressionBackbone B>
BackwardResult backward(const B& model, const Eigen::MatrixXd& x_random, const Eigen::MatrixXd& x_uniform,
                        const Eigen::MatrixXd& y, const LossWeights& w) {
  const auto cr = model.forward_cached(x_random);
  const auto cu = model.forward_cached(x_uniform);
  BackwardResult r;
  r.terms = loss_terms(y, cr.output, cu.output);
  r.loss = w.combine(r.terms);
  const double scale = 2.0 / static_cast<double>(y.cols());
  const Eigen::MatrixXd diff_ru = cr.output - cu.output;
  const Eigen::MatrixXd d_random = scale * (w.random * (cr.output - y) + w.consistency * diff_ru);
  const Eigen::MatrixXd d_uniform = scale * (w.uniform * (cu.output - y) - w.consistency * diff_ru);
  r.gradient = model.backward(cr, d_random) + model.backward(cu, d_uniform);
  if (!std::isfinite(r.loss) || !r.gradient.allFinite())
    throw NumericalError("non-finite loss or gradient");
  return r;
}

template <RegressionBackbone B>
BackwardResult backward(const B& model, const Eigen::MatrixXd& x_random, const Eigen::MatrixXd& x_uniform,
                        const Eigen::MatrixXd& y, double mu) {
  return backward(model, x_random, x_uniform, y, LossWeights::for_mode(LossMode::Consistency, mu));
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(Eigen::Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)}; }
};

inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& s, double lr) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw UsageError("Adam shapes are inconsistent");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

} // namespace samrob
