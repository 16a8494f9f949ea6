#pragma once

// Velocity network v(context, x_t, t) and the reverse-flow-matching regression step that
// trains it on velocities implied by estimated noise-posterior means.

#include "boltzflow/adam.hpp"
#include "boltzflow/mlp.hpp"
#include "boltzflow/schedule.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace boltzflow {

/// Raw t followed by k pairs (sin 2 pi j t, cos 2 pi j t), j = 1..k. Dimension 2k + 1.
template <typename Scalar>
Matrix<Scalar> time_features(const Vector<Scalar>& t, int k = 4) {
  require(k >= 0, "time features: k must be non-negative");
  Matrix<Scalar> f(2 * k + 1, t.size());
  f.row(0) = t.transpose();
  for (int j = 1; j <= k; ++j) {
    const auto arg = (Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(j)) * t.array();
    f.row(2 * j - 1) = arg.sin().matrix().transpose();
    f.row(2 * j) = arg.cos().matrix().transpose();
  }
  return f;
}

template <typename Scalar>
Vector<Scalar> time_features(Scalar t, int k = 4) {
  return time_features<Scalar>(Vector<Scalar>::Constant(1, t), k).col(0);
}

/// Input layout: concat(context, x, time features).
template <typename Scalar>
struct VelocityNet {
  Mlp<Scalar> net;
  int context_dim = 0;
  int x_dim = 1;
  int time_k = 4;

  int input_dim() const { return context_dim + x_dim + 2 * time_k + 1; }
};

template <typename Scalar>
VelocityNet<Scalar> make_velocity_net(int context_dim, int x_dim, const std::vector<int>& hidden, Rng& rng,
                                      Activation act = Activation::Tanh, int time_k = 4, Scalar output_gain = Scalar(1)) {
  require(context_dim >= 0 && x_dim >= 1, "velocity net: need context_dim >= 0 and x_dim >= 1");
  VelocityNet<Scalar> v{{}, context_dim, x_dim, time_k};
  std::vector<int> widths{v.input_dim()};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(x_dim);
  v.net = init_mlp<Scalar>(widths, rng, act, output_gain);
  return v;
}

template <typename Scalar>
Matrix<Scalar> velocity_input(const VelocityNet<Scalar>& v, const Matrix<Scalar>& context, const Vector<Scalar>& t,
                              const Matrix<Scalar>& x) {
  const Eigen::Index n = x.cols();
  if (x.rows() != v.x_dim || t.size() != n || (v.context_dim > 0 && (context.rows() != v.context_dim || context.cols() != n)))
    throw ConfigError("velocity net: context/t/x shapes do not match the network layout");
  Matrix<Scalar> in(v.input_dim(), n);
  if (v.context_dim > 0) in.topRows(v.context_dim) = context;
  in.middleRows(v.context_dim, v.x_dim) = x;
  in.bottomRows(2 * v.time_k + 1) = time_features(t, v.time_k);
  return in;
}

template <typename Scalar>
Matrix<Scalar> velocity(const VelocityNet<Scalar>& v, const Matrix<Scalar>& context, const Vector<Scalar>& t,
                        const Matrix<Scalar>& x) {
  return mlp_forward(v.net, velocity_input(v, context, t, x));
}

/// One Adam step on mean_b ||net(input_b) - target_b||^2. Returns the loss before the step.
template <typename Scalar>
Scalar regression_step(Mlp<Scalar>& net, AdamState<Scalar>& opt, const Matrix<Scalar>& input, const Matrix<Scalar>& target) {
  MlpCache<Scalar> cache;
  const Matrix<Scalar> out = mlp_forward(net, input, &cache);
  if (target.rows() != out.rows() || target.cols() != out.cols())
    throw ConfigError("regression: target shape does not match network output");
  const Matrix<Scalar> r = out - target;
  const Scalar loss = r.squaredNorm() / Scalar(r.cols());
  const auto g = mlp_backward(net, cache, Matrix<Scalar>((Scalar(2) / Scalar(r.cols())) * r));
  const Vector<Scalar> before = net.params;
  if (adam_step(net.params, g.params, opt)) {
    net.touch();
    if (!net.params.allFinite()) {
      net.params = before;
      throw EstimationError("regression: optimizer produced non-finite parameters");
    }
  }
  return loss;
}

/// Per-element (context, t, x_t, estimated E[X0 | x_t]).
template <typename Scalar>
struct RfmBatch {
  Matrix<Scalar> context;  // context_dim x B (0 rows if unused)
  Vector<Scalar> t;
  Matrix<Scalar> x_t;
  Matrix<Scalar> noise_mean;
};

/// u = (alpha_dot / alpha) x_t + ((alpha beta_dot - alpha_dot beta) / alpha) mu0.
template <typename Scalar>
Matrix<Scalar> rfm_target(const Vector<Scalar>& t, const Matrix<Scalar>& x_t, const Matrix<Scalar>& noise_mean,
                          const Schedule<Scalar>& sched) {
  if (x_t.rows() != noise_mean.rows() || x_t.cols() != noise_mean.cols() || t.size() != x_t.cols())
    throw ConfigError("rfm: t, x_t and noise_mean shapes differ");
  Matrix<Scalar> u(x_t.rows(), x_t.cols());
  for (Eigen::Index b = 0; b < x_t.cols(); ++b) {
    const auto c = sched(t(b));
    if (std::abs(c.alpha) < Scalar(kConversionEpsilon)) throw DomainError("rfm: denominator alpha below epsilon");
    u.col(b) = (c.alpha_dot / c.alpha) * x_t.col(b) + ((c.alpha * c.beta_dot - c.alpha_dot * c.beta) / c.alpha) * noise_mean.col(b);
  }
  return u;
}

template <typename Scalar>
Scalar rfm_train_step(VelocityNet<Scalar>& v, AdamState<Scalar>& opt, const RfmBatch<Scalar>& batch, const Schedule<Scalar>& sched) {
  const Matrix<Scalar> u = rfm_target(batch.t, batch.x_t, batch.noise_mean, sched);
  return regression_step(v.net, opt, velocity_input(v, batch.context, batch.t, batch.x_t), u);
}

/// Exact marginal velocity for p0 = N(0, I), p1 = N(m, s^2 I).
template <typename Scalar>
Vector<Scalar> gaussian_velocity_oracle(const Vector<Scalar>& m, Scalar s, Scalar t, const Vector<Scalar>& x,
                                        const Schedule<Scalar>& sched) {
  const auto c = sched(t);
  const Scalar var = c.alpha * c.alpha * s * s + c.beta * c.beta;
  return c.alpha_dot * m + ((c.alpha_dot * c.alpha * s * s + c.beta_dot * c.beta) / var) * (x - c.alpha * m);
}

}  // namespace boltzflow
