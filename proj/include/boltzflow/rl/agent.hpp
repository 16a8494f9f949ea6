#pragma once

// Flow-policy actor with double critics. The actor is trained by reverse flow matching on
// noise-posterior means of the Boltzmann policy exp(Q(s, .) / lambda).

#include "boltzflow/posterior.hpp"
#include "boltzflow/rfm.hpp"
#include "boltzflow/rl/replay.hpp"

#include <functional>
#include <string>
#include <vector>

namespace boltzflow::rl {

struct RLConfig {
  double lambda = 0.1;   // temperature of the Boltzmann policy target
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 1e-3;
  Eigen::Index n_inner = 128;  // SNIS batch per actor element
  double t_min = 0.05;
  CvMode<double> cv_mode = CvMode<double>::auto_diag();
  std::string schedule = "linear";
  int ode_steps = 8;
  Eigen::Index batch = 256;
  int env_steps_per_iter = 2;
  int grad_steps_per_iter = 1;
  int actor_update_interval = 8;  // actor update on every k-th gradient step; critics on all
  int warmup_steps = 1000;
  int total_steps = 30000;
  Eigen::Index buffer_capacity = 100000;
  double explore_noise = 0.1;
  int draws_per_element = 1;  // (t, eps) draws per buffer element in the actor update
  // Curvature of the quadratic fall-off of Q outside the action box in the actor target; 0 lets
  // the critic extrapolate freely.
  double box_penalty = 10.0;
  // Critic networks predict Q / q_scale. Returns of order 100 are out of reach of an Adam-trained
  // unit-scale output layer within a few thousand steps.
  double q_scale = 100.0;
  // Output-layer init scale of the critics; small so initial Q is near zero instead of +-q_scale.
  double critic_output_gain = 0.01;
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  int eval_interval = 2500;
  int eval_episodes = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

Schedule<double> make_schedule(const std::string& name);

/// Batched state-action critic: Q(s_i, a_i) per column and, when requested, dQ/da.
using CriticFn = std::function<void(const Mat& s, const Mat& a, Vec* q, Mat* grad_a)>;

struct Agent {
  VelocityNet<double> actor;
  Mlp<double> critic[2];
  Mlp<double> target[2];
  AdamState<double> actor_opt, critic_opt[2];
  int state_dim = 0, action_dim = 0;
  double q_scale = 1.0;
  std::int64_t skipped_critic_batches = 0;
};

Agent make_agent(int state_dim, int action_dim, const RLConfig& cfg, Rng& rng);

/// Q(s, a) = q_scale * net(concat(s, a)).
void critic_values(const Mlp<double>& net, const Mat& s, const Mat& a, Vec* q, Mat* grad_a, double q_scale = 1.0);

/// Pointwise min of the two online critics; the gradient is that of the active minimum.
CriticFn min_critic(const Agent& agent);

/// Q(s, clip(a)) - penalty / 2 ||a - clip(a)||^2: the critic restricted to [-1, 1]^d with a
/// smooth quadratic fall-off, so the Boltzmann target keeps its mass near the action box.
CriticFn bounded_critic(CriticFn critic, double penalty);

/// a0 ~ N(0, I), K Euler steps of the actor over [0, 1], add N(0, noise^2) and clip.
Mat sample_action(const Agent& agent, const Mat& s, int k_steps, Rng& rng, double explore_noise);

struct CriticLosses {
  double loss[2] = {0, 0};
  bool skipped = false;
};

/// Q_hat = r + gamma (1 - done) min_i Qbar_i(s', a'), a' from the current actor without noise.
Vec critic_targets(const Agent& agent, const TransitionBatch& batch, const RLConfig& cfg, Rng& rng);
CriticLosses critic_update(Agent& agent, const TransitionBatch& batch, const RLConfig& cfg, Rng& rng);

/// Per-element noise-posterior estimates behind an actor update.
struct ActorTargets {
  RfmBatch<double> batch;                  // kept elements only
  std::vector<PosteriorEstimate<double>> estimates;
  std::vector<NoiseBatch<double>> samples;
  std::vector<Eigen::Index> kept;          // index into the (repeated) buffer batch
  Eigen::Index dropped = 0;
  double mean_ess = 0;
};

ActorTargets actor_targets(const Agent& agent, const TransitionBatch& batch, const RLConfig& cfg, Rng& rng,
                           const CriticFn& critic);

struct ActorResult {
  double loss = 0;
  double mean_ess = 0;
  Eigen::Index dropped = 0;
};

/// Fails with EstimationError when more than 25% of the elements are dropped.
ActorResult actor_update(Agent& agent, const TransitionBatch& batch, const RLConfig& cfg, Rng& rng, const CriticFn& critic);
ActorResult actor_update(Agent& agent, const TransitionBatch& batch, const RLConfig& cfg, Rng& rng);

/// target <- tau * online + (1 - tau) * target, for both critics.
void polyak_update(Agent& agent, double tau);

}  // namespace boltzflow::rl
