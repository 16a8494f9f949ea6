#pragma once

#include "boltzflow/rl/agent.hpp"

#include <functional>
#include <vector>

namespace boltzflow::rl {

/// One gradient step's diagnostics.
struct UpdateLog {
  int step = 0;  // environment step at which the update ran
  double actor_loss = 0;
  double critic_loss[2] = {0, 0};
  double mean_ess = 0;
};

/// Averages of the updates since the previous evaluation, plus the evaluation itself.
struct EvalRow {
  int step = 0;
  double actor_loss = 0;
  double critic_loss[2] = {0, 0};
  double mean_ess = 0;
  double eval_return = 0;
};

struct RunLog {
  Agent agent;
  std::vector<UpdateLog> updates;
  std::vector<EvalRow> evals;
  std::int64_t failed_batches = 0;
  Eigen::Index buffer_size = 0;
};

using Policy = std::function<Vec(const Vec& state, Rng& rng)>;

/// Mean undiscounted return of `episodes` rollouts, each at most env.horizon() steps.
double evaluate_policy(const Env& env, const Policy& policy, int episodes, Rng& rng);

/// Actor rollouts without exploration noise.
double evaluate(const Agent& agent, const Env& env, int episodes, Rng& rng, int ode_steps = 8);

Policy random_policy(int action_dim);

/// a = clip(kp (goal - p) - kd v) on PointMass2D.
Policy pd_controller(double kp, double kd);

/// Best gains of a grid search over kp in {0.5, 1, 2, 4, 8, 16}, kd in {0, 0.5, 1, 2, 3, 4, 6, 8}
/// (return about -30.1 per episode against about -577 for uniform random actions).
inline constexpr double kPdGain = 8.0;
inline constexpr double kPdDamping = 4.0;

/// Warmup with uniform actions, then per iteration `env_steps_per_iter` exploratory steps and
/// `grad_steps_per_iter` rounds of (critic update, actor update, Polyak). Evaluates every
/// `eval_interval` env steps. Aborts after 3 consecutive failed gradient steps.
/// `on_eval`, when set, sees each evaluation row as it is produced.
/// Fraction of policy samples within one mode width of each bandit mode centre.
struct ModeMass {
  double negative = 0, positive = 0;  // |a + c| < w and |a - c| < w
};

/// Trains only the actor, for `steps` actor updates on batches of uniform actions, against the
/// bandit reward as a fixed critic; then draws `samples` noise-free actions.
ModeMass bandit_mode_mass(const Bandit& env, const RLConfig& cfg, int steps, Eigen::Index samples);

RunLog train(const Env& env, const RLConfig& cfg, const std::function<void(const EvalRow&)>& on_eval = {});

}  // namespace boltzflow::rl
