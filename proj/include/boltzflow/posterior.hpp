#pragma once

// Posterior-mean estimation for reverse flow matching.
//
// Given an observed interpolant x_t = alpha x1 + beta x0, the latent endpoints have
//   noise posterior  q0(x0 | x_t) ∝ p0(x0) p1(x_t / alpha - (beta / alpha) x0)
//   data posterior   q1(x1 | x_t) ∝ p1(x1) p0(x_t / beta - (alpha / beta) x1)
// Both means are estimated by self-normalized importance sampling (SNIS). Variance is
// reduced with Langevin-Stein control variates built from a constant diagonal test
// function diag(Lambda): the control variate diag(Lambda) * grad log q has zero mean
// under q, so adding it leaves the estimator consistent for every Lambda.
//
// Every estimator here is a mix of two representations A and B of the same posterior
// expectation (E_q[A] = E_q[B]):
//   mean = (1 - Lambda) * SNIS[A] + Lambda * SNIS[B],   per coordinate.
// For the noise side A = x0 and B = x0 + grad_x0 log q0; with a standard Gaussian source
// B collapses to the gradient-expectation term -(beta / alpha) grad log p1(x1). Lambda = 0
// is the noise-expectation (plain SNIS) estimator and Lambda = 1 the gradient-expectation
// one, reproduced exactly on the same sample batch.

#include "boltzflow/core.hpp"
#include "boltzflow/schedule.hpp"
#include "boltzflow/targets.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace boltzflow {

enum class PosteriorSide { Noise, Data };

/// Minimum alpha (noise side) or beta (data side) accepted by a posterior context.
inline constexpr double kPosteriorEpsilon = 1e-6;

/// Lower ESS bound below which an estimate is flagged.
inline constexpr double kLowEss = 5.0;

/// Denominator threshold for optimal control-variate coefficients.
inline constexpr double kDegenerateDenominator = 1e-30;

template <typename Scalar>
class PosteriorContext {
 public:
  PosteriorContext(Scalar t, Vector<Scalar> x_t, const Schedule<Scalar>& schedule, const SourceDistribution<Scalar>& source,
                   const UnnormalizedTarget<Scalar>& target, PosteriorSide side)
      : t_(t), x_t_(std::move(x_t)), schedule_(schedule), coeffs_(schedule(t)), source_(&source), target_(&target), side_(side) {
    require(x_t_.size() == source.dim() && source.dim() == target.dim(),
            "posterior: x_t, source and target dimensions must agree");
    if (side == PosteriorSide::Noise && !(coeffs_.alpha > Scalar(kPosteriorEpsilon)))
      throw DomainError("posterior: noise side needs alpha_t > 1e-6 (t = " + std::to_string(t) + ")");
    if (side == PosteriorSide::Data && !(coeffs_.beta > Scalar(kPosteriorEpsilon)))
      throw DomainError("posterior: data side needs beta_t > 1e-6 (t = " + std::to_string(t) + ")");
  }

  Scalar t() const { return t_; }
  const Vector<Scalar>& x_t() const { return x_t_; }
  const Schedule<Scalar>& schedule() const { return schedule_; }
  const ScheduleCoefficients<Scalar>& coefficients() const { return coeffs_; }
  const SourceDistribution<Scalar>& source() const { return *source_; }
  const UnnormalizedTarget<Scalar>& target() const { return *target_; }
  PosteriorSide side() const { return side_; }
  int dim() const { return static_cast<int>(x_t_.size()); }

 private:
  Scalar t_;
  Vector<Scalar> x_t_;
  Schedule<Scalar> schedule_;
  ScheduleCoefficients<Scalar> coeffs_;
  const SourceDistribution<Scalar>* source_;
  const UnnormalizedTarget<Scalar>* target_;
  PosteriorSide side_;
};

// ---------------------------------------------------------------------------
// Control-variate modes

enum class CvKind { None, Iso, Diag, AutoIso, AutoDiag };

template <typename Scalar>
struct CvMode {
  CvKind kind = CvKind::None;
  Scalar eta = 0;            // Iso
  Vector<Scalar> lambda;     // Diag

  static CvMode none() { return {}; }
  static CvMode iso(Scalar eta) { return {CvKind::Iso, eta, {}}; }
  static CvMode diag(Vector<Scalar> lambda) { return {CvKind::Diag, 0, std::move(lambda)}; }
  static CvMode auto_iso() { return {CvKind::AutoIso, 0, {}}; }
  static CvMode auto_diag() { return {CvKind::AutoDiag, 0, {}}; }

  bool is_auto() const { return kind == CvKind::AutoIso || kind == CvKind::AutoDiag; }
};

/// Parses "none", "iso:<eta>", "diag:<l1>,<l2>,...", "iso-auto", "diag-auto".
template <typename Scalar>
CvMode<Scalar> parse_cv_mode(const std::string& text) {
  if (text == "none") return CvMode<Scalar>::none();
  if (text == "iso-auto") return CvMode<Scalar>::auto_iso();
  if (text == "diag-auto") return CvMode<Scalar>::auto_diag();
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    Scalar v{};
    try {
      v = static_cast<Scalar>(std::stod(s, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError("cv mode: cannot parse number '" + s + "' in '" + text + "'");
    return v;
  };
  if (text.rfind("iso:", 0) == 0) return CvMode<Scalar>::iso(number(text.substr(4)));
  if (text.rfind("diag:", 0) == 0) {
    std::vector<Scalar> values;
    std::stringstream ss(text.substr(5));
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(number(item));
    if (values.empty()) throw ConfigError("cv mode: diag needs at least one coefficient");
    return CvMode<Scalar>::diag(Eigen::Map<Vector<Scalar>>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  throw ConfigError("cv mode: unknown mode '" + text + "' (expected none, iso:<eta>, diag:<list>, iso-auto, diag-auto)");
}

template <typename Scalar>
std::string to_string(const CvMode<Scalar>& mode) {
  std::ostringstream os;
  os.precision(17);
  switch (mode.kind) {
    case CvKind::None: return "none";
    case CvKind::AutoIso: return "iso-auto";
    case CvKind::AutoDiag: return "diag-auto";
    case CvKind::Iso: os << "iso:" << mode.eta; return os.str();
    case CvKind::Diag:
      os << "diag:";
      for (Eigen::Index i = 0; i < mode.lambda.size(); ++i) os << (i ? "," : "") << mode.lambda(i);
      return os.str();
  }
  return "?";
}

template <typename Scalar>
struct PosteriorEstimate {
  Vector<Scalar> mean;
  Scalar ess = 0;              // (sum w)^2 / sum w^2
  Scalar log_weight_max = 0;
  CvKind cv_kind = CvKind::None;
  Vector<Scalar> coefficients; // resolved diagonal Lambda
  Scalar trace_cov = 0;        // plug-in tr(Sigma) of the asymptotic SNIS covariance
  Eigen::Index n_samples = 0;
  bool low_ess = false;
  std::vector<int> degenerate_coordinates;  // coefficient fell back to 0

  /// Half-width of the 3-sigma Monte-Carlo band on the Euclidean error.
  Scalar band(Scalar sigmas = 3) const { return sigmas * std::sqrt(trace_cov / Scalar(n_samples)); }
};

// ---------------------------------------------------------------------------
// SNIS primitives

template <typename Scalar>
struct SnisWeights {
  Vector<Scalar> w;  // exp(log_w - max log_w), so the largest weight is exactly 1
  Scalar sum = 0;
  Scalar log_max = 0;

  Eigen::Index size() const { return w.size(); }
  Scalar ess() const { return sum * sum / w.squaredNorm(); }
};

/// Max-subtracted weights. Throws EstimationError when no weight is usable.
template <typename Scalar>
SnisWeights<Scalar> snis_weights(const Vector<Scalar>& log_w) {
  if (log_w.size() == 0) throw EstimationError("snis: empty sample batch");
  if (log_w.hasNaN() || (log_w.array() == std::numeric_limits<Scalar>::infinity()).any())
    throw EstimationError("snis: log-weights contain NaN or +inf");
  SnisWeights<Scalar> out;
  out.log_max = log_w.maxCoeff();
  if (!std::isfinite(out.log_max))
    throw EstimationError("snis: every importance weight underflows (max log-weight = " + std::to_string(out.log_max) + ")");
  out.w = (log_w.array() - out.log_max).exp().matrix();
  out.sum = out.w.sum();
  return out;
}

/// sum_i w_i f_i / sum_i w_i over columns of `values`.
template <typename Scalar>
Vector<Scalar> weighted_mean(const SnisWeights<Scalar>& weights, const Matrix<Scalar>& values) {
  return (values * weights.w) / weights.sum;
}

template <typename Scalar>
Vector<Scalar> snis_estimate(const Vector<Scalar>& log_weights, const Matrix<Scalar>& f_values) {
  require(f_values.cols() == log_weights.size(), "snis_estimate: one f value per sample required");
  return weighted_mean(snis_weights(log_weights), f_values);
}

template <typename Scalar, typename Fn>
Vector<Scalar> snis_estimate(const Matrix<Scalar>& samples, const Vector<Scalar>& log_weights, Fn&& f) {
  return snis_estimate<Scalar>(log_weights, Matrix<Scalar>(f(samples)));
}

/// Plug-in trace of the asymptotic SNIS covariance,
///   tr Sigma = E[w^2 ||f - mu||^2] / E[w]^2   (sample averages, scale free in w).
template <typename Scalar>
Scalar asymptotic_cov_trace(const SnisWeights<Scalar>& weights, const Matrix<Scalar>& f_values, const Vector<Scalar>& mu) {
  const Scalar n = Scalar(weights.size());
  const Vector<Scalar> sq = (f_values.colwise() - mu).colwise().squaredNorm().transpose();
  return n * weights.w.cwiseAbs2().dot(sq) / (weights.sum * weights.sum);
}

template <typename Scalar>
Scalar asymptotic_cov_trace(const Vector<Scalar>& log_weights, const Matrix<Scalar>& f_values, const Vector<Scalar>& mu) {
  require(log_weights.size() >= 2, "asymptotic_cov_trace: at least two samples required");
  return asymptotic_cov_trace(snis_weights(log_weights), f_values, mu);
}

// ---------------------------------------------------------------------------
// Optimal control-variate coefficients.
//
// For f_Lambda = x + diag(Lambda) s with E_q[s] = 0, the asymptotic SNIS variance is a
// convex quadratic in each Lambda_j, minimized by
//   Lambda*_j = -sum_i w_i^2 (x_ij - mu_j) s_ij / sum_i w_i^2 s_ij^2
// and, under Lambda_j = eta for all j, by
//   eta* = -sum_i w_i^2 (x_i - mu)^T s_i / sum_i w_i^2 ||s_i||^2.

template <typename Scalar>
struct CoefficientTerms {
  Vector<Scalar> numerator;    // per coordinate: -sum w^2 (x - mu) s
  Vector<Scalar> denominator;  // per coordinate: sum w^2 s^2
};

template <typename Scalar>
CoefficientTerms<Scalar> coefficient_terms(const SnisWeights<Scalar>& weights, const Matrix<Scalar>& samples,
                                           const Matrix<Scalar>& scores, const Vector<Scalar>& mu_plugin) {
  require(samples.rows() == scores.rows() && samples.cols() == scores.cols() && mu_plugin.size() == samples.rows(),
          "optimal coefficients: samples, scores and mu must agree in shape");
  const Vector<Scalar> w2 = weights.w.cwiseAbs2();
  CoefficientTerms<Scalar> terms;
  terms.numerator = -((samples.colwise() - mu_plugin).cwiseProduct(scores)) * w2;
  terms.denominator = scores.cwiseAbs2() * w2;
  return terms;
}

template <typename Scalar>
struct OptimalLambda {
  Vector<Scalar> lambda;
  std::vector<int> degenerate;  // coordinates that fell back to Lambda_j = 0
};

template <typename Scalar>
OptimalLambda<Scalar> optimal_lambda(const CoefficientTerms<Scalar>& terms) {
  OptimalLambda<Scalar> out;
  out.lambda = Vector<Scalar>::Zero(terms.numerator.size());
  for (Eigen::Index j = 0; j < out.lambda.size(); ++j) {
    if (terms.denominator(j) < Scalar(kDegenerateDenominator) || !std::isfinite(terms.denominator(j)))
      out.degenerate.push_back(static_cast<int>(j));
    else
      out.lambda(j) = terms.numerator(j) / terms.denominator(j);
  }
  return out;
}

template <typename Scalar>
struct OptimalEta {
  Scalar eta = 0;
  bool degenerate = false;
};

template <typename Scalar>
OptimalEta<Scalar> optimal_eta(const CoefficientTerms<Scalar>& terms) {
  const Scalar den = terms.denominator.sum();
  if (den < Scalar(kDegenerateDenominator) || !std::isfinite(den)) return {Scalar(0), true};
  return {terms.numerator.sum() / den, false};
}

template <typename Scalar>
OptimalLambda<Scalar> optimal_lambda(const Matrix<Scalar>& samples, const Vector<Scalar>& log_weights,
                                     const Matrix<Scalar>& scores, const Vector<Scalar>& mu_plugin) {
  require(samples.cols() >= 2, "optimal_lambda: at least two samples required");
  return optimal_lambda(coefficient_terms(snis_weights(log_weights), samples, scores, mu_plugin));
}

template <typename Scalar>
OptimalEta<Scalar> optimal_eta(const Matrix<Scalar>& samples, const Vector<Scalar>& log_weights, const Matrix<Scalar>& scores,
                               const Vector<Scalar>& mu_plugin) {
  require(samples.cols() >= 2, "optimal_eta: at least two samples required");
  return optimal_eta(coefficient_terms(snis_weights(log_weights), samples, scores, mu_plugin));
}

// ---------------------------------------------------------------------------
// Mixing two representations under a control-variate mode.

/// Whether `mode` needs the alternative representation B at all.
template <typename Scalar>
bool needs_alternative(const CvMode<Scalar>& mode) {
  switch (mode.kind) {
    case CvKind::None: return false;
    case CvKind::Iso: return mode.eta != Scalar(0);
    case CvKind::Diag: return (mode.lambda.array() != Scalar(0)).any();
    default: return true;
  }
}

/// Resolved coefficients for `mode`; `terms` is consulted only for auto modes.
template <typename Scalar>
Vector<Scalar> resolve_coefficients(const CvMode<Scalar>& mode, int dim, const CoefficientTerms<Scalar>* terms,
                                    std::vector<int>* degenerate) {
  switch (mode.kind) {
    case CvKind::None: return Vector<Scalar>::Zero(dim);
    case CvKind::Iso: return Vector<Scalar>::Constant(dim, mode.eta);
    case CvKind::Diag:
      require(mode.lambda.size() == dim, "cv mode: diag coefficients must match the dimension");
      return mode.lambda;
    case CvKind::AutoIso: {
      const auto eta = optimal_eta(*terms);
      if (eta.degenerate && degenerate)
        for (int j = 0; j < dim; ++j) degenerate->push_back(j);
      return Vector<Scalar>::Constant(dim, eta.eta);
    }
    case CvKind::AutoDiag: {
      auto lam = optimal_lambda(*terms);
      if (degenerate) *degenerate = lam.degenerate;
      return lam.lambda;
    }
  }
  throw ConfigError("cv mode: unknown kind");
}

/// mean = (1 - Lambda) SNIS[A] + Lambda SNIS[B], with Lambda from `mode`.
/// `alternative_mean`, when given, replaces the generic SNIS[B] by an algebraically equal
/// closed form. Auto coefficients use plain SNIS[A] as the plug-in posterior mean and the
/// same sample batch (two-pass scheme).
template <typename Scalar>
PosteriorEstimate<Scalar> mix_representations(const SnisWeights<Scalar>& weights, const Matrix<Scalar>& primary,
                                              const Matrix<Scalar>* alternative, const Vector<Scalar>* alternative_mean,
                                              const CvMode<Scalar>& mode) {
  const int dim = static_cast<int>(primary.rows());
  PosteriorEstimate<Scalar> est;
  est.n_samples = weights.size();
  est.ess = weights.ess();
  est.low_ess = est.ess < Scalar(kLowEss);
  est.log_weight_max = weights.log_max;
  est.cv_kind = mode.kind;

  const Vector<Scalar> mean_a = weighted_mean(weights, primary);
  if (!needs_alternative(mode)) {
    est.coefficients = Vector<Scalar>::Zero(dim);
    est.mean = mean_a;
    est.trace_cov = asymptotic_cov_trace(weights, primary, est.mean);
    return est;
  }
  if (!alternative) throw std::logic_error("mix_representations: mode needs the alternative representation");

  const Matrix<Scalar> control = *alternative - primary;
  std::optional<CoefficientTerms<Scalar>> terms;
  if (mode.is_auto()) terms = coefficient_terms(weights, primary, control, mean_a);
  est.coefficients = resolve_coefficients(mode, dim, terms ? &*terms : nullptr, &est.degenerate_coordinates);

  const Vector<Scalar> mean_b = alternative_mean ? *alternative_mean : weighted_mean(weights, *alternative);
  const Vector<Scalar> keep = Vector<Scalar>::Ones(dim) - est.coefficients;
  est.mean = keep.cwiseProduct(mean_a) + est.coefficients.cwiseProduct(mean_b);
  // Taken about the plain SNIS mean, the same plug-in for every Lambda; the auto coefficients
  // are then its exact minimisers on this batch.
  const Matrix<Scalar> f = primary + est.coefficients.asDiagonal() * control;
  est.trace_cov = asymptotic_cov_trace(weights, f, mean_a);
  return est;
}

// ---------------------------------------------------------------------------
// Noise posterior

/// Implied target endpoint x1 = x_t / alpha - (beta / alpha) x0, per column.
template <typename Scalar>
Matrix<Scalar> implied_data(const ScheduleCoefficients<Scalar>& c, const Vector<Scalar>& x_t, const Matrix<Scalar>& x0) {
  return ((-c.beta / c.alpha) * x0).colwise() + x_t / c.alpha;
}

/// Implied source endpoint x0 = x_t / beta - (alpha / beta) x1, per column.
template <typename Scalar>
Matrix<Scalar> implied_noise(const ScheduleCoefficients<Scalar>& c, const Vector<Scalar>& x_t, const Matrix<Scalar>& x1) {
  return ((-c.alpha / c.beta) * x1).colwise() + x_t / c.beta;
}

/// Noise-side sample batch with target evaluations at the implied endpoints. Proposal is p0,
/// so log w = log p1(x1(x0)) up to a constant.
template <typename Scalar>
struct NoiseBatch {
  Matrix<Scalar> x0;
  Vector<Scalar> log_weight;       // log p1 at x1(x0)
  Matrix<Scalar> target_grad;      // grad log p1 at x1(x0); empty if not evaluated
};

template <typename Scalar>
NoiseBatch<Scalar> evaluate_noise_batch(const PosteriorContext<Scalar>& ctx, Matrix<Scalar> x0, bool with_grad) {
  if (ctx.side() != PosteriorSide::Noise) throw ConfigError("posterior: noise batch requested on a data-side context");
  NoiseBatch<Scalar> batch;
  batch.x0 = std::move(x0);
  const Matrix<Scalar> x1 = implied_data(ctx.coefficients(), ctx.x_t(), batch.x0);
  ctx.target().evaluate(x1, &batch.log_weight, with_grad ? &batch.target_grad : nullptr);
  return batch;
}

template <typename Scalar>
Scalar noise_log_weight(const PosteriorContext<Scalar>& ctx, const Vector<Scalar>& x0) {
  return evaluate_noise_batch(ctx, Matrix<Scalar>(x0), false).log_weight(0);
}

/// Posterior score grad_x0 log q0 = grad log p0(x0) - (beta / alpha) grad log p1(x1(x0)).
template <typename Scalar>
Matrix<Scalar> posterior_score_noise(const PosteriorContext<Scalar>& ctx, const Matrix<Scalar>& x0) {
  const auto batch = evaluate_noise_batch(ctx, x0, true);
  const auto& c = ctx.coefficients();
  return ctx.source().score(x0) - (c.beta / c.alpha) * batch.target_grad;
}

/// Control variate diag(Lambda) * grad_x0 log q0, per column.
template <typename Scalar>
Matrix<Scalar> stein_cv(const PosteriorContext<Scalar>& ctx, const Matrix<Scalar>& x0, const Vector<Scalar>& lambda) {
  require(lambda.size() == ctx.dim(), "stein_cv: coefficient dimension mismatch");
  return lambda.asDiagonal() * posterior_score_noise(ctx, x0);
}

/// Noise posterior mean from an evaluated batch. `c` are the schedule coefficients at t.
template <typename Scalar>
PosteriorEstimate<Scalar> estimate_noise_mean(const NoiseBatch<Scalar>& batch, const ScheduleCoefficients<Scalar>& c,
                                              const SourceDistribution<Scalar>& source, const CvMode<Scalar>& mode) {
  const auto weights = snis_weights(batch.log_weight);
  if (!needs_alternative(mode)) return mix_representations<Scalar>(weights, batch.x0, nullptr, nullptr, mode);
  if (batch.target_grad.size() == 0) throw std::logic_error("estimate_noise_mean: control variate needs target gradients");
  // Gradient-expectation term -(beta / alpha) grad log p1(x1).
  Matrix<Scalar> alternative = (-c.beta / c.alpha) * batch.target_grad;
  if (!source.is_standard_gaussian()) alternative += batch.x0 + source.score(batch.x0);
  return mix_representations<Scalar>(weights, batch.x0, &alternative, nullptr, mode);
}

template <typename Scalar>
PosteriorEstimate<Scalar> estimate_noise_mean(const PosteriorContext<Scalar>& ctx, Matrix<Scalar> x0, const CvMode<Scalar>& mode) {
  const auto batch = evaluate_noise_batch(ctx, std::move(x0), needs_alternative(mode));
  return estimate_noise_mean(batch, ctx.coefficients(), ctx.source(), mode);
}

template <typename Scalar>
PosteriorEstimate<Scalar> estimate_noise_mean(const PosteriorContext<Scalar>& ctx, Eigen::Index n, const CvMode<Scalar>& mode, Rng& rng) {
  require(n >= 1, "estimate_noise_mean: N must be >= 1");
  return estimate_noise_mean(ctx, ctx.source().sample(rng, n), mode);
}

// ---------------------------------------------------------------------------
// Data posterior. Proposal for x1 is N(x_t / alpha, (beta / alpha)^2 I), which is exactly the
// p0 factor of q1 when the source is standard Gaussian.

template <typename Scalar>
struct DataBatch {
  Matrix<Scalar> x1;
  Vector<Scalar> log_weight;
  Matrix<Scalar> target_grad;   // grad log p1 at x1; empty if not evaluated
  Matrix<Scalar> x0;            // implied source endpoints
};

/// Builds a data batch from standard-normal draws `xi`: x1 = x_t / alpha + (beta / alpha) xi.
template <typename Scalar>
DataBatch<Scalar> evaluate_data_batch(const PosteriorContext<Scalar>& ctx, const Matrix<Scalar>& xi, bool with_grad) {
  if (ctx.side() != PosteriorSide::Data) throw ConfigError("posterior: data batch requested on a noise-side context");
  if (!(ctx.coefficients().alpha > Scalar(kPosteriorEpsilon)))
    throw DomainError("posterior: data-side proposal needs alpha_t > 1e-6 (t = " + std::to_string(ctx.t()) + ")");
  const auto& c = ctx.coefficients();
  DataBatch<Scalar> batch;
  batch.x1 = ((c.beta / c.alpha) * xi).colwise() + ctx.x_t() / c.alpha;
  ctx.target().evaluate(batch.x1, &batch.log_weight, with_grad ? &batch.target_grad : nullptr);
  batch.x0 = implied_noise(c, ctx.x_t(), batch.x1);
  if (!ctx.source().is_standard_gaussian()) {
    const auto gaussian = SourceDistribution<Scalar>::standard_gaussian(ctx.dim());
    batch.log_weight += ctx.source().log_density(batch.x0) - gaussian.log_density(batch.x0);
  }
  return batch;
}

/// Data posterior score grad_x1 log q1 = grad log p1(x1) - (alpha / beta) grad log p0(x0(x1)).
template <typename Scalar>
Matrix<Scalar> posterior_score_data(const PosteriorContext<Scalar>& ctx, const DataBatch<Scalar>& batch) {
  const auto& c = ctx.coefficients();
  return batch.target_grad - (c.alpha / c.beta) * ctx.source().score(batch.x0);
}

/// Data posterior mean. The control variate is scaled by (beta / alpha)^2 so that Lambda = 1
/// gives x_t / alpha + (beta / alpha)^2 SNIS[grad log p1] for a Gaussian source.
template <typename Scalar>
PosteriorEstimate<Scalar> estimate_data_mean(const PosteriorContext<Scalar>& ctx, const DataBatch<Scalar>& batch,
                                             const CvMode<Scalar>& mode) {
  const auto weights = snis_weights(batch.log_weight);
  if (!needs_alternative(mode)) return mix_representations<Scalar>(weights, batch.x1, nullptr, nullptr, mode);
  if (batch.target_grad.size() == 0) throw std::logic_error("estimate_data_mean: control variate needs target gradients");
  const auto& c = ctx.coefficients();
  const Scalar scale = (c.beta / c.alpha) * (c.beta / c.alpha);
  const Matrix<Scalar> alternative = batch.x1 + scale * posterior_score_data(ctx, batch);
  if (ctx.source().is_standard_gaussian()) {
    const Vector<Scalar> closed = ctx.x_t() / c.alpha + scale * weighted_mean(weights, batch.target_grad);
    return mix_representations<Scalar>(weights, batch.x1, &alternative, &closed, mode);
  }
  return mix_representations<Scalar>(weights, batch.x1, &alternative, nullptr, mode);
}

template <typename Scalar>
PosteriorEstimate<Scalar> estimate_data_mean(const PosteriorContext<Scalar>& ctx, Eigen::Index n, const CvMode<Scalar>& mode, Rng& rng) {
  require(n >= 1, "estimate_data_mean: N must be >= 1");
  const Matrix<Scalar> xi = standard_normal<Scalar>(rng, ctx.dim(), n);
  return estimate_data_mean(ctx, evaluate_data_batch(ctx, xi, needs_alternative(mode)), mode);
}

/// Side-dispatching convenience wrapper.
template <typename Scalar>
PosteriorEstimate<Scalar> estimate_posterior_mean(const PosteriorContext<Scalar>& ctx, Eigen::Index n, const CvMode<Scalar>& mode, Rng& rng) {
  return ctx.side() == PosteriorSide::Noise ? estimate_noise_mean(ctx, n, mode, rng) : estimate_data_mean(ctx, n, mode, rng);
}

}  // namespace boltzflow
