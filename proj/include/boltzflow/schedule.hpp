#pragma once

#include "boltzflow/core.hpp"

#include <cmath>
#include <string>
#include <string_view>

namespace boltzflow {

enum class ScheduleKind { Linear, VE, VP };

/// Interpolation coefficients of x_t = alpha * x1 + beta * x0 and their time derivatives.
template <typename Scalar>
struct ScheduleCoefficients {
  Scalar alpha;
  Scalar beta;
  Scalar alpha_dot;
  Scalar beta_dot;
};

/// Interpolation schedule between the source (t = 0) and the target (t = 1).
///
/// Linear:  alpha = t, beta = 1 - t.
/// VE:      alpha = 1, beta = sigma_min * (sigma_max / sigma_min)^(1 - t).
///          beta(1) = sigma_min, so the target boundary is only approximate.
/// VP:      alpha = exp(-(1-t)^2 (beta_max - beta_min) / 4 - (1-t) beta_min / 2),
///          beta = sqrt(1 - alpha^2). beta_dot diverges at t = 1.
///
/// VE and VP use forward time: t = 1 is the clean end.
template <typename Scalar>
class Schedule {
 public:
  static Schedule linear() { return Schedule(ScheduleKind::Linear, Scalar(0), Scalar(0)); }

  static Schedule variance_exploding(Scalar sigma_min = Scalar(0.01), Scalar sigma_max = Scalar(10)) {
    require(sigma_min > 0 && std::isfinite(sigma_min), "schedule: sigma_min must be positive");
    require(sigma_max > 0 && std::isfinite(sigma_max), "schedule: sigma_max must be positive");
    return Schedule(ScheduleKind::VE, sigma_min, sigma_max);
  }

  static Schedule variance_preserving(Scalar beta_min = Scalar(0.1), Scalar beta_max = Scalar(20)) {
    require(beta_min > 0 && std::isfinite(beta_min), "schedule: beta_min must be positive");
    require(beta_max > 0 && std::isfinite(beta_max), "schedule: beta_max must be positive");
    return Schedule(ScheduleKind::VP, beta_min, beta_max);
  }

  ScheduleKind kind() const { return kind_; }
  Scalar first_param() const { return p1_; }
  Scalar second_param() const { return p2_; }

  ScheduleCoefficients<Scalar> operator()(Scalar t) const {
    if (!(t >= 0 && t <= 1)) throw DomainError("schedule: t must lie in [0, 1], got " + std::to_string(t));
    switch (kind_) {
      case ScheduleKind::Linear:
        return {t, Scalar(1) - t, Scalar(1), Scalar(-1)};
      case ScheduleKind::VE: {
        const Scalar log_ratio = std::log(p2_ / p1_);
        const Scalar beta = p1_ * std::exp((Scalar(1) - t) * log_ratio);
        return {Scalar(1), beta, Scalar(0), -log_ratio * beta};
      }
      case ScheduleKind::VP: {
        const Scalar u = Scalar(1) - t;
        const Scalar span = p2_ - p1_;
        const Scalar alpha = std::exp(-Scalar(0.25) * u * u * span - Scalar(0.5) * u * p1_);
        const Scalar alpha_dot = alpha * (Scalar(0.5) * u * span + Scalar(0.5) * p1_);
        const Scalar beta = std::sqrt(Scalar(1) - alpha * alpha);
        return {alpha, beta, alpha_dot, -alpha * alpha_dot / beta};
      }
    }
    throw ConfigError("schedule: unknown kind");
  }

 private:
  Schedule(ScheduleKind kind, Scalar p1, Scalar p2) : kind_(kind), p1_(p1), p2_(p2) {}

  ScheduleKind kind_;
  Scalar p1_;
  Scalar p2_;
};

template <typename Scalar>
ScheduleCoefficients<Scalar> eval_schedule(const Schedule<Scalar>& schedule, Scalar t) {
  return schedule(t);
}

inline std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::VE: return "ve";
    case ScheduleKind::VP: return "vp";
  }
  return "?";
}

namespace detail {
template <typename A, typename B>
void check_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(what) + ": dimension mismatch (" + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()) + ")");
}
}  // namespace detail

/// x_t = alpha_t x1 + beta_t x0, columnwise for batches.
template <typename Derived0, typename Derived1>
Matrix<typename Derived0::Scalar> interpolate(const Eigen::MatrixBase<Derived0>& x0, const Eigen::MatrixBase<Derived1>& x1,
                                              typename Derived0::Scalar t,
                                              const Schedule<typename Derived0::Scalar>& schedule) {
  detail::check_same_size(x0, x1, "interpolate");
  const auto c = schedule(t);
  return c.alpha * x1 + c.beta * x0;
}

template <typename Derived0, typename Derived1>
Matrix<typename Derived0::Scalar> conditional_velocity(const Eigen::MatrixBase<Derived0>& x0,
                                                       const Eigen::MatrixBase<Derived1>& x1,
                                                       typename Derived0::Scalar t,
                                                       const Schedule<typename Derived0::Scalar>& schedule) {
  detail::check_same_size(x0, x1, "conditional_velocity");
  const auto c = schedule(t);
  return c.alpha_dot * x1 + c.beta_dot * x0;
}

enum class Prediction { Velocity, DataMean, NoiseMean, Score };

inline std::string_view to_string(Prediction p) {
  switch (p) {
    case Prediction::Velocity: return "velocity";
    case Prediction::DataMean: return "data_mean";
    case Prediction::NoiseMean: return "noise_mean";
    case Prediction::Score: return "score";
  }
  return "?";
}

/// Smallest admissible magnitude of a conversion denominator.
inline constexpr double kConversionEpsilon = 1e-6;

/// Converts between the velocity, data-mean E[X1|x_t], noise-mean E[X0|x_t] and score
/// parameterizations at (t, x_t), using
///   v = alpha_dot E1 + beta_dot E0,   x_t = alpha E1 + beta E0,   score = -E0 / beta.
/// The score relation assumes a standard Gaussian source; callers are responsible for that.
/// Only the denominators the requested conversion needs are checked.
template <typename DerivedV, typename DerivedX>
Matrix<typename DerivedV::Scalar> convert_prediction(Prediction from, Prediction to, const Eigen::MatrixBase<DerivedV>& value,
                                                     const Eigen::MatrixBase<DerivedX>& x_t,
                                                     typename DerivedV::Scalar t,
                                                     const Schedule<typename DerivedV::Scalar>& schedule) {
  using Scalar = typename DerivedV::Scalar;
  detail::check_same_size(value, x_t, "convert_prediction");
  if (from == to) return value;
  const auto c = schedule(t);
  const Scalar det = c.alpha * c.beta_dot - c.alpha_dot * c.beta;

  auto guard = [&](Scalar denom, const char* name) {
    if (!(std::abs(denom) >= Scalar(kConversionEpsilon)))
      throw DomainError(std::string("convert_prediction ") + std::string(to_string(from)) + "->" +
                        std::string(to_string(to)) + ": denominator " + name + " = " + std::to_string(denom) +
                        " is singular at t = " + std::to_string(t));
  };

  const bool need_noise = to == Prediction::Velocity || to == Prediction::NoiseMean || to == Prediction::Score;
  const bool need_data = to == Prediction::Velocity || to == Prediction::DataMean;

  Matrix<Scalar> e0, e1;
  switch (from) {
    case Prediction::Velocity:
      guard(det, "alpha*beta_dot - alpha_dot*beta");
      if (need_noise) e0 = (c.alpha * value - c.alpha_dot * x_t) / det;
      if (need_data) e1 = (c.beta_dot * x_t - c.beta * value) / det;
      break;
    case Prediction::DataMean:
      e1 = value;
      if (need_noise) {
        guard(c.beta, "beta");
        e0 = (x_t - c.alpha * e1) / c.beta;
      }
      break;
    case Prediction::NoiseMean:
    case Prediction::Score:
      if (from == Prediction::Score) {
        e0 = -c.beta * value;
      } else {
        e0 = value;
      }
      if (need_data) {
        guard(c.alpha, "alpha");
        e1 = (x_t - c.beta * e0) / c.alpha;
      }
      break;
  }

  switch (to) {
    case Prediction::Velocity: return c.alpha_dot * e1 + c.beta_dot * e0;
    case Prediction::DataMean: return e1;
    case Prediction::NoiseMean: return e0;
    case Prediction::Score:
      guard(c.beta, "beta");
      return -e0 / c.beta;
  }
  throw ConfigError("convert_prediction: unknown kind");
}

}  // namespace boltzflow
