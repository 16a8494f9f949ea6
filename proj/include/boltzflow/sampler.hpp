#pragma once

// Training-free generation: velocity and score fields estimated from posterior means,
// integrated with Euler (ODE) or Euler-Maruyama (SDE) from t_min to t_max.

#include "boltzflow/posterior.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace boltzflow {

/// Diffusion coefficient sigma_t of the sampling SDE: scale * beta_t, or a constant scale.
template <typename Scalar>
struct SdeNoise {
  Scalar scale = 0;
  bool proportional_to_beta = true;

  Scalar operator()(const ScheduleCoefficients<Scalar>& c) const { return proportional_to_beta ? scale * c.beta : scale; }
  bool active() const { return scale != Scalar(0); }
};

enum class SamplerStart { Source, Interpolant };

template <typename Scalar>
struct SamplerConfig {
  int n_steps = 64;
  Scalar t_min = Scalar(0.15);
  // End of the grid; the data-mean prediction there drops Var[X1 | x_t_max], so it sits close
  // to 1. Negative means 1 - t_min.
  Scalar t_max = Scalar(0.99);
  Scalar t_switch = Scalar(0.5);   // data posterior below, noise posterior at and above
  Eigen::Index n_inner = 512;      // SNIS batch per field evaluation
  CvMode<Scalar> cv_mode = CvMode<Scalar>::auto_diag();
  SdeNoise<Scalar> sde_sigma{};    // scale 0 gives the ODE
  int workers = 1;
  // Initial state at t_min. Source: x ~ p0 as-is, which is exact only as t_min -> 0.
  // Interpolant: x = alpha x1 + beta x0 with x0 ~ p0 and x1 drawn by importance resampling
  // of n_inner source draws weighted by p1 / p0, so the state follows the t_min marginal.
  SamplerStart start = SamplerStart::Interpolant;

  void validate() const {
    require(n_steps >= 2, "sampler: n_steps must be >= 2");
    require(t_min > 0 && t_min < Scalar(0.5), "sampler: t_min must lie in (0, 0.5)");
    require(t_switch > t_min && t_switch < 1, "sampler: need t_min < t_switch < 1");
    require(end_time() > t_min && end_time() < 1, "sampler: need t_min < t_max < 1");
    require(n_inner >= 1, "sampler: n_inner must be >= 1");
    require(sde_sigma.scale >= 0, "sampler: sde sigma must be non-negative");
    require(workers >= 1, "sampler: workers must be >= 1");
  }

  Scalar end_time() const { return t_max < 0 ? Scalar(1) - t_min : t_max; }

  PosteriorSide side_at(Scalar t) const { return t < t_switch ? PosteriorSide::Data : PosteriorSide::Noise; }
};

/// A field value with its Monte-Carlo diagnostics. `band` is the 3-sigma half-width on the
/// Euclidean error derived from the plug-in asymptotic covariance.
template <typename Scalar>
struct FieldEstimate {
  Vector<Scalar> value;
  Scalar band = 0;
  Scalar ess = 0;
  PosteriorSide side = PosteriorSide::Noise;
};

template <typename Scalar>
struct PosteriorFields {
  FieldEstimate<Scalar> velocity;
  std::optional<FieldEstimate<Scalar>> score;
};

namespace detail {

/// Marginal velocity from a posterior mean on the context's side.
///   noise: v = (alpha_dot / alpha) x + ((alpha beta_dot - alpha_dot beta) / alpha) mu0
///   data:  v = (beta_dot / beta) x + ((beta alpha_dot - beta_dot alpha) / beta) mu1
template <typename Scalar>
FieldEstimate<Scalar> velocity_from_mean(const PosteriorContext<Scalar>& ctx, const PosteriorEstimate<Scalar>& est) {
  const auto& c = ctx.coefficients();
  Scalar gain, coupling;
  if (ctx.side() == PosteriorSide::Noise) {
    gain = c.alpha_dot / c.alpha;
    coupling = (c.alpha * c.beta_dot - c.alpha_dot * c.beta) / c.alpha;
  } else {
    gain = c.beta_dot / c.beta;
    coupling = (c.beta * c.alpha_dot - c.beta_dot * c.alpha) / c.beta;
  }
  return {gain * ctx.x_t() + coupling * est.mean, std::abs(coupling) * est.band(), est.ess, ctx.side()};
}

/// Reverse score-matching targets: the marginal score equals both
/// E[grad log p0(X0) / beta | x_t] and E[grad log p1(X1) / alpha | x_t].
/// The side's own form is the base estimator, the other one enters through the control variate.
template <typename Scalar>
FieldEstimate<Scalar> score_from_batch(const PosteriorContext<Scalar>& ctx, const SnisWeights<Scalar>& weights,
                                       const Matrix<Scalar>& x0, const Matrix<Scalar>& target_grad, const CvMode<Scalar>& mode) {
  const auto& c = ctx.coefficients();
  const Matrix<Scalar> noise_form = ctx.source().score(x0) / c.beta;
  const Matrix<Scalar> data_form = target_grad / c.alpha;
  const bool noise_side = ctx.side() == PosteriorSide::Noise;
  const Matrix<Scalar>& primary = noise_side ? noise_form : data_form;
  const Matrix<Scalar>& alternative = noise_side ? data_form : noise_form;
  const auto est = mix_representations<Scalar>(weights, primary, &alternative, nullptr, mode);
  return {est.mean, est.band(), est.ess, ctx.side()};
}

}  // namespace detail

/// Velocity (and optionally score) at the context's (t, x_t) from one SNIS batch of size n.
template <typename Scalar>
PosteriorFields<Scalar> posterior_fields(const PosteriorContext<Scalar>& ctx, Eigen::Index n, const CvMode<Scalar>& mode, Rng& rng,
                                         bool with_score) {
  require(n >= 1, "posterior_fields: batch size must be >= 1");
  const bool need_grad = with_score || needs_alternative(mode);
  PosteriorFields<Scalar> out;
  if (ctx.side() == PosteriorSide::Noise) {
    const auto batch = evaluate_noise_batch(ctx, ctx.source().sample(rng, n), need_grad);
    const auto est = estimate_noise_mean(batch, ctx.coefficients(), ctx.source(), mode);
    out.velocity = detail::velocity_from_mean(ctx, est);
    if (with_score) out.score = detail::score_from_batch(ctx, snis_weights(batch.log_weight), batch.x0, batch.target_grad, mode);
  } else {
    const auto batch = evaluate_data_batch(ctx, standard_normal<Scalar>(rng, ctx.dim(), n), need_grad);
    const auto est = estimate_data_mean(ctx, batch, mode);
    out.velocity = detail::velocity_from_mean(ctx, est);
    if (with_score) out.score = detail::score_from_batch(ctx, snis_weights(batch.log_weight), batch.x0, batch.target_grad, mode);
  }
  return out;
}

template <typename Scalar>
FieldEstimate<Scalar> velocity_from_posterior(const PosteriorContext<Scalar>& ctx, Eigen::Index n, const CvMode<Scalar>& mode, Rng& rng) {
  return posterior_fields(ctx, n, mode, rng, false).velocity;
}

template <typename Scalar>
FieldEstimate<Scalar> score_from_posterior(const PosteriorContext<Scalar>& ctx, Eigen::Index n, const CvMode<Scalar>& mode, Rng& rng) {
  return *posterior_fields(ctx, n, mode, rng, true).score;
}

/// Velocity at (t, x) with the side chosen by cfg.t_switch.
template <typename Scalar>
FieldEstimate<Scalar> velocity_from_posterior(Scalar t, const Vector<Scalar>& x, const Schedule<Scalar>& schedule,
                                              const SourceDistribution<Scalar>& source, const UnnormalizedTarget<Scalar>& target,
                                              const SamplerConfig<Scalar>& cfg, Rng& rng) {
  const PosteriorContext<Scalar> ctx(t, x, schedule, source, target, cfg.side_at(t));
  return velocity_from_posterior(ctx, cfg.n_inner, cfg.cv_mode, rng);
}

template <typename Scalar>
FieldEstimate<Scalar> score_from_posterior(Scalar t, const Vector<Scalar>& x, const Schedule<Scalar>& schedule,
                                           const SourceDistribution<Scalar>& source, const UnnormalizedTarget<Scalar>& target,
                                           const SamplerConfig<Scalar>& cfg, Rng& rng) {
  const PosteriorContext<Scalar> ctx(t, x, schedule, source, target, cfg.side_at(t));
  return score_from_posterior(ctx, cfg.n_inner, cfg.cv_mode, rng);
}

template <typename Scalar>
struct SampleRun {
  Matrix<Scalar> samples;              // completed trajectories, in trajectory order
  std::vector<Eigen::Index> aborted;   // indices of trajectories that went non-finite
  std::vector<std::string> abort_reasons;
  Scalar mean_ess = 0;                 // over all field evaluations
  Scalar min_ess = 0;
};

namespace detail {

template <typename Scalar>
struct TrajectoryResult {
  Vector<Scalar> x;
  bool ok = true;
  std::string reason;
  Scalar ess_sum = 0;
  Scalar ess_min = std::numeric_limits<Scalar>::infinity();
  Eigen::Index evaluations = 0;
};

template <typename Scalar>
TrajectoryResult<Scalar> run_trajectory(const UnnormalizedTarget<Scalar>& target, const SourceDistribution<Scalar>& source,
                                        const Schedule<Scalar>& schedule, const SamplerConfig<Scalar>& cfg, Rng& rng) {
  TrajectoryResult<Scalar> r;
  const Scalar t_end = cfg.end_time();
  const Scalar h = (t_end - cfg.t_min) / Scalar(cfg.n_steps);
  r.x = source.sample(rng, 1).col(0);
  auto record = [&](Scalar ess) {
    r.ess_sum += ess;
    r.ess_min = std::min(r.ess_min, ess);
    ++r.evaluations;
  };
  try {
    if (cfg.start == SamplerStart::Interpolant) {
      const auto c = schedule(cfg.t_min);
      const Matrix<Scalar> x1 = source.sample(rng, cfg.n_inner);
      const auto weights = snis_weights(Vector<Scalar>(target.log_density(x1) - source.log_density(x1)));
      std::discrete_distribution<Eigen::Index> pick(weights.w.data(), weights.w.data() + weights.w.size());
      r.x = c.alpha * x1.col(pick(rng)) + c.beta * r.x;
    }
    for (int k = 0; k < cfg.n_steps; ++k) {
      const Scalar t = cfg.t_min + Scalar(k) * h;
      const PosteriorContext<Scalar> ctx(t, r.x, schedule, source, target, cfg.side_at(t));
      const Scalar sigma = cfg.sde_sigma(ctx.coefficients());
      const bool diffuse = sigma != Scalar(0);
      const auto fields = posterior_fields(ctx, cfg.n_inner, cfg.cv_mode, rng, diffuse);
      record(fields.velocity.ess);
      if (diffuse) {
        r.x += h * (fields.velocity.value + Scalar(0.5) * sigma * sigma * fields.score->value);
        r.x += std::sqrt(h) * sigma * standard_normal<Scalar>(rng, r.x.size(), 1).col(0);
      } else {
        r.x += h * fields.velocity.value;
      }
      if (!r.x.allFinite()) {
        r.ok = false;
        r.reason = "non-finite state at t = " + std::to_string(t) + " (ess " + std::to_string(fields.velocity.ess) + ")";
        return r;
      }
    }
    // Land on the data-mean prediction at the last grid point instead of stepping into t = 1.
    const PosteriorContext<Scalar> ctx(t_end, r.x, schedule, source, target, cfg.side_at(t_end));
    const auto v = velocity_from_posterior(ctx, cfg.n_inner, cfg.cv_mode, rng);
    record(v.ess);
    r.x = convert_prediction(Prediction::Velocity, Prediction::DataMean, v.value, r.x, t_end, schedule);
    if (!r.x.allFinite()) {
      r.ok = false;
      r.reason = "non-finite final data-mean prediction";
    }
  } catch (const EstimationError& e) {
    r.ok = false;
    r.reason = e.what();
  }
  return r;
}

/// Runs fn(i) for i in [0, n) on `workers` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(Eigen::Index n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Eigen::Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int count = static_cast<int>(std::min<Eigen::Index>(workers, n));
  for (int w = 0; w < count; ++w)
    pool.emplace_back([&] {
      for (Eigen::Index i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Euler-Maruyama integration of dx = (v + sigma^2 s / 2) dt + sigma dW over [t_min, t_max].
/// Trajectory i draws from its own stream make_stream(seed, i), so output does not depend on
/// the worker count. With sigma = 0 no score is estimated and no noise is drawn, which makes
/// the result identical to ode_sample.
template <typename Scalar>
SampleRun<Scalar> sde_sample(const UnnormalizedTarget<Scalar>& target, const SourceDistribution<Scalar>& source,
                             const Schedule<Scalar>& schedule, const SamplerConfig<Scalar>& cfg, std::uint64_t seed, Eigen::Index n_out) {
  cfg.validate();
  require(n_out >= 1, "sampler: n_out must be >= 1");
  require(source.dim() == target.dim(), "sampler: source and target dimensions must agree");
  std::vector<detail::TrajectoryResult<Scalar>> results(static_cast<std::size_t>(n_out));
  detail::parallel_for(n_out, cfg.workers, [&](Eigen::Index i) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
    results[static_cast<std::size_t>(i)] = detail::run_trajectory(target, source, schedule, cfg, rng);
  });

  SampleRun<Scalar> run;
  Scalar ess_sum = 0;
  Eigen::Index evaluations = 0;
  run.min_ess = std::numeric_limits<Scalar>::infinity();
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < n_out; ++i) {
    const auto& r = results[static_cast<std::size_t>(i)];
    ess_sum += r.ess_sum;
    evaluations += r.evaluations;
    if (r.evaluations > 0) run.min_ess = std::min(run.min_ess, r.ess_min);
    if (r.ok) {
      kept.push_back(i);
    } else {
      run.aborted.push_back(i);
      run.abort_reasons.push_back(r.reason);
    }
  }
  run.mean_ess = evaluations > 0 ? ess_sum / Scalar(evaluations) : Scalar(0);
  if (Scalar(run.aborted.size()) > Scalar(0.01) * Scalar(n_out))
    throw EstimationError("sampler: " + std::to_string(run.aborted.size()) + " of " + std::to_string(n_out) +
                          " trajectories aborted (first: " + run.abort_reasons.front() + ")");
  run.samples.resize(target.dim(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j)
    run.samples.col(static_cast<Eigen::Index>(j)) = results[static_cast<std::size_t>(kept[j])].x;
  return run;
}

template <typename Scalar>
SampleRun<Scalar> ode_sample(const UnnormalizedTarget<Scalar>& target, const SourceDistribution<Scalar>& source,
                             const Schedule<Scalar>& schedule, SamplerConfig<Scalar> cfg, std::uint64_t seed, Eigen::Index n_out) {
  cfg.sde_sigma.scale = 0;
  return sde_sample(target, source, schedule, cfg, seed, n_out);
}

}  // namespace boltzflow
