#pragma once

#include "boltzflow/core.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace boltzflow {

enum class SourceKind { StandardGaussian, Laplace };

/// Source distribution p0 of the flow. Laplace has unit variance per coordinate
/// (scale 1/sqrt(2)); it exists to exercise non-Gaussian sources.
template <typename Scalar>
class SourceDistribution {
 public:
  static SourceDistribution standard_gaussian(int dim) { return SourceDistribution(SourceKind::StandardGaussian, dim); }
  static SourceDistribution laplace(int dim) { return SourceDistribution(SourceKind::Laplace, dim); }

  int dim() const { return dim_; }
  SourceKind kind() const { return kind_; }
  bool is_standard_gaussian() const { return kind_ == SourceKind::StandardGaussian; }

  Matrix<Scalar> sample(Rng& rng, Eigen::Index n) const {
    if (kind_ == SourceKind::StandardGaussian) return standard_normal<Scalar>(rng, dim_, n);
    std::uniform_real_distribution<Scalar> uniform(Scalar(-0.5), Scalar(0.5));
    Matrix<Scalar> out(dim_, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (int i = 0; i < dim_; ++i) {
        const Scalar u = uniform(rng);
        out(i, j) = -laplace_scale() * std::copysign(Scalar(1), u) * std::log1p(-Scalar(2) * std::abs(u));
      }
    return out;
  }

  Vector<Scalar> log_density(const Matrix<Scalar>& x) const {
    if (kind_ == SourceKind::StandardGaussian)
      return (-Scalar(0.5) * x.colwise().squaredNorm().array() - Scalar(0.5) * dim_ * std::log(Scalar(2) * std::numbers::pi_v<Scalar>))
          .matrix()
          .transpose();
    const Scalar b = laplace_scale();
    return (-x.cwiseAbs().colwise().sum().array() / b - dim_ * std::log(Scalar(2) * b)).matrix().transpose();
  }

  /// Gradient of log p0. The Laplace score is taken as 0 at the kink.
  Matrix<Scalar> score(const Matrix<Scalar>& x) const {
    if (kind_ == SourceKind::StandardGaussian) return -x;
    return -x.array().sign().matrix() / laplace_scale();
  }

 private:
  SourceDistribution(SourceKind kind, int dim) : kind_(kind), dim_(dim) {
    require(dim >= 1, "source: dimension must be >= 1");
  }
  static Scalar laplace_scale() { return Scalar(1) / std::numbers::sqrt2_v<Scalar>; }

  SourceKind kind_;
  int dim_;
};

template <typename Scalar>
Matrix<Scalar> sample_source(const SourceDistribution<Scalar>& source, Rng& rng, Eigen::Index n) {
  require(n >= 1, "sample_source: n must be >= 1");
  return source.sample(rng, n);
}

/// Target density known up to an additive constant in log space, evaluated on batches
/// (one column per point). Either output pointer may be null.
template <typename Scalar>
class UnnormalizedTarget {
 public:
  using Evaluator = std::function<void(const Matrix<Scalar>& points, Vector<Scalar>* log_density, Matrix<Scalar>* grad)>;

  UnnormalizedTarget(int dim, Evaluator evaluator) : dim_(dim), evaluator_(std::move(evaluator)) {
    require(dim >= 1, "target: dimension must be >= 1");
  }

  int dim() const { return dim_; }

  void evaluate(const Matrix<Scalar>& points, Vector<Scalar>* log_density, Matrix<Scalar>* grad) const {
    if (points.rows() != dim_)
      throw ConfigError("target: expected points of dimension " + std::to_string(dim_) + ", got " +
                        std::to_string(points.rows()));
    evaluator_(points, log_density, grad);
  }

  Vector<Scalar> log_density(const Matrix<Scalar>& points) const {
    Vector<Scalar> out;
    evaluate(points, &out, nullptr);
    return out;
  }

  Matrix<Scalar> grad(const Matrix<Scalar>& points) const {
    Matrix<Scalar> out;
    evaluate(points, nullptr, &out);
    return out;
  }

 private:
  int dim_;
  Evaluator evaluator_;
};

/// Batched critic or energy: values Q(x) (one per column) and their gradients.
template <typename Scalar>
using QFunction = std::function<void(const Matrix<Scalar>& points, Vector<Scalar>* q, Matrix<Scalar>* grad_q)>;

/// Boltzmann density p1(x) ∝ exp(Q(x) / lambda).
template <typename Scalar>
UnnormalizedTarget<Scalar> boltzmann_from_q(QFunction<Scalar> q, Scalar lambda, int dim) {
  require(lambda > 0 && std::isfinite(lambda), "boltzmann_from_q: temperature lambda must be positive");
  return UnnormalizedTarget<Scalar>(dim, [q = std::move(q), lambda](const Matrix<Scalar>& x, Vector<Scalar>* logd,
                                                                    Matrix<Scalar>* grad) {
    q(x, logd, grad);
    if (logd) *logd /= lambda;
    if (grad) *grad /= lambda;
  });
}

/// Isotropic Gaussian mixture; the analytic fixture used by tests and the CLI.
template <typename Scalar>
struct GaussianMixture {
  Vector<Scalar> weights;   // K
  Matrix<Scalar> means;     // d x K
  Vector<Scalar> stddevs;   // K

  GaussianMixture(Vector<Scalar> w, Matrix<Scalar> mu, Vector<Scalar> sd)
      : weights(std::move(w)), means(std::move(mu)), stddevs(std::move(sd)) {
    require(weights.size() >= 1, "mixture: at least one component required");
    require(means.cols() == weights.size() && stddevs.size() == weights.size(),
            "mixture: weights, means and stddevs must have the same number of components");
    require((weights.array() > 0).all(), "mixture: weights must be positive");
    require(std::abs(weights.sum() - Scalar(1)) <= Scalar(1e-12), "mixture: weights must sum to 1");
    require((stddevs.array() > 0).all(), "mixture: stddevs must be positive");
  }

  static GaussianMixture isotropic_gaussian(const Vector<Scalar>& mean, Scalar stddev) {
    return GaussianMixture(Vector<Scalar>::Ones(1), mean, Vector<Scalar>::Constant(1, stddev));
  }

  int dim() const { return static_cast<int>(means.rows()); }
  Eigen::Index components() const { return weights.size(); }

  /// Exact normalized log density and gradient.
  void evaluate(const Matrix<Scalar>& x, Vector<Scalar>* logd, Matrix<Scalar>* grad) const {
    const Eigen::Index n = x.cols();
    const Eigen::Index k = components();
    const Scalar d = Scalar(dim());
    const Scalar log2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
    Matrix<Scalar> comp(k, n);  // per-component log densities
    for (Eigen::Index c = 0; c < k; ++c) {
      const Scalar var = stddevs(c) * stddevs(c);
      comp.row(c) = (-(x.colwise() - means.col(c)).colwise().squaredNorm().array() / (Scalar(2) * var) +
                     std::log(weights(c)) - d * std::log(stddevs(c)) - Scalar(0.5) * d * log2pi)
                        .matrix();
    }
    const Vector<Scalar> peak = comp.colwise().maxCoeff().transpose();
    Matrix<Scalar> resp = (comp.rowwise() - peak.transpose()).array().exp().matrix();
    const Vector<Scalar> total = resp.colwise().sum().transpose();
    if (logd) *logd = peak.array() + total.array().log();
    if (grad) {
      resp.array().rowwise() /= total.transpose().array();
      grad->resize(x.rows(), n);
      grad->setZero();
      for (Eigen::Index c = 0; c < k; ++c) {
        const Scalar inv_var = Scalar(1) / (stddevs(c) * stddevs(c));
        grad->noalias() += (((-x).colwise() + means.col(c)) * inv_var) * resp.row(c).asDiagonal();
      }
    }
  }

  UnnormalizedTarget<Scalar> as_target() const {
    return UnnormalizedTarget<Scalar>(dim(), [self = *this](const Matrix<Scalar>& x, Vector<Scalar>* logd, Matrix<Scalar>* grad) {
      self.evaluate(x, logd, grad);
    });
  }

  Matrix<Scalar> sample(Rng& rng, Eigen::Index n) const {
    std::discrete_distribution<int> pick(weights.data(), weights.data() + weights.size());
    Matrix<Scalar> out = standard_normal<Scalar>(rng, dim(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const int c = pick(rng);
      out.col(j) = means.col(c) + stddevs(c) * out.col(j);
    }
    return out;
  }

  /// Index of the component with the highest responsibility, per column.
  std::vector<int> assign(const Matrix<Scalar>& x) const {
    std::vector<int> out(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Scalar best = -std::numeric_limits<Scalar>::infinity();
      for (Eigen::Index c = 0; c < components(); ++c) {
        const Scalar s = std::log(weights(c)) - dim() * std::log(stddevs(c)) -
                         (x.col(j) - means.col(c)).squaredNorm() / (Scalar(2) * stddevs(c) * stddevs(c));
        if (s > best) {
          best = s;
          out[static_cast<std::size_t>(j)] = static_cast<int>(c);
        }
      }
    }
    return out;
  }
};

/// E[X0 | x_t] and E[X1 | x_t] for a mixture target and standard Gaussian source, one column per
/// x_t. Per component x_t ~ N(alpha m_k, v_k I) with v_k = alpha^2 s_k^2 + beta^2.
template <typename Scalar>
struct MixturePosteriorMeans {
  Matrix<Scalar> noise, data;
};

template <typename Scalar>
MixturePosteriorMeans<Scalar> mixture_posterior_means(const GaussianMixture<Scalar>& mix, Scalar alpha, Scalar beta,
                                                      const Matrix<Scalar>& x) {
  const Eigen::Index k = mix.components(), n = x.cols();
  const Scalar d = Scalar(mix.dim());
  Matrix<Scalar> logr(k, n);
  Vector<Scalar> var(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    var(c) = alpha * alpha * mix.stddevs(c) * mix.stddevs(c) + beta * beta;
    logr.row(c) = (std::log(mix.weights(c)) - Scalar(0.5) * d * std::log(var(c)) -
                   (x.colwise() - alpha * mix.means.col(c)).colwise().squaredNorm().array() / (Scalar(2) * var(c)))
                      .matrix();
  }
  Matrix<Scalar> r = (logr.rowwise() - logr.colwise().maxCoeff()).array().exp().matrix();
  r.array().rowwise() /= r.colwise().sum().array();
  MixturePosteriorMeans<Scalar> out{Matrix<Scalar>::Zero(x.rows(), n), Matrix<Scalar>::Zero(x.rows(), n)};
  for (Eigen::Index c = 0; c < k; ++c) {
    const Matrix<Scalar> centered = x.colwise() - alpha * mix.means.col(c);
    const Scalar s2 = mix.stddevs(c) * mix.stddevs(c);
    out.noise.noalias() += (beta / var(c)) * centered * r.row(c).asDiagonal();
    out.data.noalias() += (((alpha * s2 / var(c)) * centered).colwise() + mix.means.col(c)) * r.row(c).asDiagonal();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force tensor-product trapezoid quadrature (d <= 3). Test oracle only.

template <typename Scalar>
struct Box {
  Vector<Scalar> lower;
  Vector<Scalar> upper;

  static Box cube(int dim, Scalar lo, Scalar hi) { return {Vector<Scalar>::Constant(dim, lo), Vector<Scalar>::Constant(dim, hi)}; }
};

template <typename Scalar>
struct QuadratureMoments {
  Scalar log_normalizer;
  Scalar normalizer;
  Vector<Scalar> mean;
  Matrix<Scalar> cov;
};

/// Normalized expectation E[f(X)] under exp(log_density), plus log of the normalizer.
/// `log_density` maps a d x n batch to n values; `f` maps it to an m x n batch.
template <typename Scalar, typename LogDensity, typename Fn>
std::pair<Vector<Scalar>, Scalar> quadrature_expectation(LogDensity&& log_density, Fn&& f, const Box<Scalar>& box, int n_grid) {
  const int d = static_cast<int>(box.lower.size());
  if (d < 1 || d > 3) throw ConfigError("quadrature: only dimensions 1..3 are supported, got " + std::to_string(d));
  require(box.upper.size() == d && (box.upper.array() > box.lower.array()).all(), "quadrature: invalid box");
  require(n_grid >= 3, "quadrature: n_grid must be >= 3");

  const Vector<Scalar> h = (box.upper - box.lower) / Scalar(n_grid - 1);
  Eigen::Index total = 1;
  for (int i = 0; i < d; ++i) total *= n_grid;

  constexpr Eigen::Index kChunk = 1 << 15;
  Matrix<Scalar> points(d, kChunk);
  Vector<Scalar> log_trap(kChunk);

  // Two passes: the first finds the peak log density, the second accumulates.
  Scalar peak = -std::numeric_limits<Scalar>::infinity();
  Vector<Scalar> acc;
  Scalar mass = 0;
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index start = 0; start < total; start += kChunk) {
      const Eigen::Index len = std::min(kChunk, total - start);
      for (Eigen::Index k = 0; k < len; ++k) {
        Eigen::Index idx = start + k;
        Scalar lw = 0;
        for (int i = 0; i < d; ++i) {
          const Eigen::Index g = idx % n_grid;
          idx /= n_grid;
          points(i, k) = box.lower(i) + Scalar(g) * h(i);
          if (g == 0 || g == n_grid - 1) lw += std::log(Scalar(0.5));
        }
        log_trap(k) = lw;
      }
      const Matrix<Scalar> block = points.leftCols(len);
      const Vector<Scalar> ld = log_density(block);
      if (pass == 0) {
        for (Eigen::Index k = 0; k < len; ++k)
          if (ld(k) > peak) peak = ld(k);
        continue;
      }
      const Vector<Scalar> w = (ld.array() + log_trap.head(len).array() - peak).exp().matrix();
      const Matrix<Scalar> fv = f(block);
      if (acc.size() == 0) acc = Vector<Scalar>::Zero(fv.rows());
      acc.noalias() += fv * w;
      mass += w.sum();
    }
    if (pass == 0 && !std::isfinite(peak)) throw EstimationError("quadrature: density vanishes on the whole grid");
  }
  const Scalar log_cell = h.array().log().sum();
  return {acc / mass, peak + std::log(mass) + log_cell};
}

template <typename Scalar>
QuadratureMoments<Scalar> quadrature_moments(const UnnormalizedTarget<Scalar>& target, const Box<Scalar>& box, int n_grid) {
  const int d = target.dim();
  require(box.lower.size() == d, "quadrature_moments: box dimension does not match target");
  auto [raw, log_z] = quadrature_expectation<Scalar>(
      [&](const Matrix<Scalar>& x) { return target.log_density(x); },
      [d](const Matrix<Scalar>& x) {
        Matrix<Scalar> out(d + d * d, x.cols());
        out.topRows(d) = x;
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) out.row(d + i * d + j) = x.row(i).cwiseProduct(x.row(j));
        return out;
      },
      box, n_grid);
  QuadratureMoments<Scalar> m;
  m.log_normalizer = log_z;
  m.normalizer = std::exp(log_z);
  m.mean = raw.head(d);
  m.cov.resize(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m.cov(i, j) = raw(d + i * d + j) - m.mean(i) * m.mean(j);
  return m;
}

}  // namespace boltzflow
