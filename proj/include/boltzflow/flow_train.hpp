#pragma once

// Training-loop driver for a context-free velocity network: draw (t, x_t), ask a provider for
// E[X0 | x_t], take one reverse-flow-matching step. Plus Euler sampling from the trained net.

#include "boltzflow/rfm.hpp"
#include "boltzflow/targets.hpp"

#include <functional>
#include <random>
#include <vector>

namespace boltzflow {

template <typename Scalar>
struct FlowTrainConfig {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::Tanh;
  int time_k = 4;
  Scalar lr = Scalar(1e-3);
  Scalar lr_final = Scalar(1e-4);  // geometric decay from lr over the run
  int steps = 2000;
  Eigen::Index batch = 256;
  Scalar t_min = Scalar(0.05);
  Scalar t_max = Scalar(1);
  // x_t = alpha u + beta eps with u ~ N(0, proposal_scale^2 I), eps ~ p0.
  Scalar proposal_scale = Scalar(2);

  void validate() const {
    require(steps >= 0, "train-flow: steps must be >= 0");
    require(batch >= 1, "train-flow: batch must be >= 1");
    require(lr > 0 && lr_final > 0, "train-flow: learning rates must be positive");
    require(t_min > 0 && t_min < t_max && t_max <= 1, "train-flow: need 0 < t_min < t_max <= 1");
    require(proposal_scale > 0, "train-flow: proposal_scale must be positive");
    for (int h : hidden) require(h >= 1, "train-flow: hidden widths must be positive");
  }
};

/// (t, x_t) -> estimated E[X0 | x_t], one column per element.
template <typename Scalar>
using NoiseMeanProvider = std::function<Matrix<Scalar>(const Vector<Scalar>& t, const Matrix<Scalar>& x_t, Rng& rng)>;

template <typename Scalar>
struct FlowTrainResult {
  VelocityNet<Scalar> net;
  AdamState<Scalar> opt;
  std::vector<Scalar> losses;
};

template <typename Scalar>
RfmBatch<Scalar> draw_flow_batch(const FlowTrainConfig<Scalar>& cfg, const Schedule<Scalar>& sched,
                                 const SourceDistribution<Scalar>& source, Rng& rng) {
  std::uniform_real_distribution<Scalar> uni(cfg.t_min, cfg.t_max);
  RfmBatch<Scalar> b;
  b.t.resize(cfg.batch);
  for (Eigen::Index i = 0; i < cfg.batch; ++i) b.t(i) = uni(rng);
  const Matrix<Scalar> u = cfg.proposal_scale * standard_normal<Scalar>(rng, source.dim(), cfg.batch);
  const Matrix<Scalar> eps = source.sample(rng, cfg.batch);
  b.x_t.resize(source.dim(), cfg.batch);
  for (Eigen::Index i = 0; i < cfg.batch; ++i) {
    const auto c = sched(b.t(i));
    b.x_t.col(i) = c.alpha * u.col(i) + c.beta * eps.col(i);
  }
  return b;
}

/// `on_step(step, loss)` is called after every step when set.
template <typename Scalar>
FlowTrainResult<Scalar> train_flow(const FlowTrainConfig<Scalar>& cfg, const Schedule<Scalar>& sched,
                                   const SourceDistribution<Scalar>& source, const NoiseMeanProvider<Scalar>& noise_mean,
                                   std::uint64_t seed, const std::function<void(int, Scalar)>& on_step = {}) {
  cfg.validate();
  Rng init_rng = make_stream(seed, 0);
  FlowTrainResult<Scalar> r{make_velocity_net<Scalar>(0, int(source.dim()), cfg.hidden, init_rng, cfg.activation, cfg.time_k), {}, {}};
  r.opt = AdamState<Scalar>(r.net.net.params.size(), cfg.lr);
  Rng rng = make_stream(seed, 1);
  const Scalar decay = cfg.steps > 1 ? std::pow(cfg.lr_final / cfg.lr, Scalar(1) / Scalar(cfg.steps - 1)) : Scalar(1);
  for (int step = 0; step < cfg.steps; ++step) {
    RfmBatch<Scalar> b = draw_flow_batch(cfg, sched, source, rng);
    b.noise_mean = noise_mean(b.t, b.x_t, rng);
    const Scalar loss = rfm_train_step(r.net, r.opt, b, sched);
    r.opt.lr *= decay;
    r.losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return r;
}

/// Euler transport of `x0` (one column per sample) from t0 to t1 with the learned velocity.
template <typename Scalar>
Matrix<Scalar> integrate_flow(const VelocityNet<Scalar>& v, Matrix<Scalar> x, Scalar t0, Scalar t1, int n_steps,
                              const Matrix<Scalar>& context = {}) {
  require(n_steps >= 1, "integrate_flow: n_steps must be >= 1");
  const Scalar h = (t1 - t0) / Scalar(n_steps);
  for (int k = 0; k < n_steps; ++k) {
    const Vector<Scalar> t = Vector<Scalar>::Constant(x.cols(), t0 + Scalar(k) * h);
    x += h * velocity(v, context, t, x);
  }
  return x;
}

}  // namespace boltzflow
