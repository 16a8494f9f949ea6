#include "boltzflow/rl/train.hpp"

#include <random>

namespace boltzflow::rl {

double evaluate_policy(const Env& env, const Policy& policy, int episodes, Rng& rng) {
  require(episodes >= 1, "evaluate: episodes must be >= 1");
  double total = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    Vec s = env.reset(rng);
    for (int k = 0; k < env.horizon(); ++k) {
      const StepResult r = env.step(s, policy(s, rng));
      total += r.reward;
      if (r.done) break;
      s = r.next_state;
    }
  }
  return total / episodes;
}

double evaluate(const Agent& agent, const Env& env, int episodes, Rng& rng, int ode_steps) {
  return evaluate_policy(
      env, [&](const Vec& s, Rng& r) { return Vec(sample_action(agent, Mat(s), ode_steps, r, 0.0).col(0)); }, episodes, rng);
}

Policy random_policy(int action_dim) {
  return [action_dim](const Vec&, Rng& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Vec a(action_dim);
    for (int i = 0; i < action_dim; ++i) a(i) = uni(rng);
    return a;
  };
}

Policy pd_controller(double kp, double kd) {
  return [kp, kd](const Vec& s, Rng&) { return clip_action(kp * (PointMass2D::goal() - s.head(2)) - kd * s.tail(2)); };
}

ModeMass bandit_mode_mass(const Bandit& env, const RLConfig& cfg, int steps, Eigen::Index samples) {
  cfg.validate();
  require(steps >= 0 && samples >= 1, "bandit: steps must be >= 0 and samples >= 1");
  Rng init_rng = make_stream(cfg.seed, 0), update_rng = make_stream(cfg.seed, 3), eval_rng = make_stream(cfg.seed, 1000);
  Agent agent = make_agent(1, 1, cfg, init_rng);
  const CriticFn reward = [&env](const Mat&, const Mat& a, Vec* q, Mat* grad) { env.reward(a, q, grad); };
  const CriticFn critic = bounded_critic(reward, cfg.box_penalty);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  TransitionBatch batch;
  batch.s = Mat::Zero(1, cfg.batch);
  batch.s2 = batch.s;
  batch.a.resize(1, cfg.batch);
  batch.r = Vec::Zero(cfg.batch);
  batch.done = Vec::Ones(cfg.batch);
  for (int k = 0; k < steps; ++k) {
    for (Eigen::Index i = 0; i < cfg.batch; ++i) batch.a(0, i) = uni(update_rng);
    actor_update(agent, batch, cfg, update_rng, critic);
  }
  const Mat a = sample_action(agent, Mat::Zero(1, samples), cfg.ode_steps, eval_rng, 0.0);
  ModeMass m;
  m.negative = double(((a.array() + env.center()).abs() < env.width()).count()) / double(samples);
  m.positive = double(((a.array() - env.center()).abs() < env.width()).count()) / double(samples);
  return m;
}

RunLog train(const Env& env, const RLConfig& cfg, const std::function<void(const EvalRow&)>& on_eval) {
  cfg.validate();
  Rng init_rng = make_stream(cfg.seed, 0), env_rng = make_stream(cfg.seed, 1), act_rng = make_stream(cfg.seed, 2),
      update_rng = make_stream(cfg.seed, 3);
  RunLog log;
  log.agent = make_agent(env.state_dim(), env.action_dim(), cfg, init_rng);
  Agent& agent = log.agent;
  ReplayBuffer buffer(env.state_dim(), env.action_dim(), cfg.buffer_capacity);
  const Policy uniform = random_policy(env.action_dim());

  Vec s = env.reset(env_rng);
  int episode_step = 0, consecutive_failures = 0, eval_index = 0;
  std::size_t last_eval_update = 0;
  std::int64_t grad_step = 0;
  ActorResult last_actor;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    const Vec a = step <= cfg.warmup_steps ? uniform(s, act_rng)
                                           : Vec(sample_action(agent, Mat(s), cfg.ode_steps, act_rng, cfg.explore_noise).col(0));
    const StepResult r = env.step(s, a);
    buffer.add(s, a, r.reward, r.next_state, r.done);
    ++episode_step;
    if (r.done || episode_step >= env.horizon()) {
      s = env.reset(env_rng);
      episode_step = 0;
    } else {
      s = r.next_state;
    }

    if (step > cfg.warmup_steps && step % cfg.env_steps_per_iter == 0 && buffer.size() >= cfg.batch) {
      for (int g = 0; g < cfg.grad_steps_per_iter; ++g) {
        try {
          const TransitionBatch batch = buffer.sample(cfg.batch, update_rng);
          const CriticLosses cl = critic_update(agent, batch, cfg, update_rng);
          if (cl.skipped) throw EstimationError("critic target is not finite");
          UpdateLog u{step, last_actor.loss, {cl.loss[0], cl.loss[1]}, last_actor.mean_ess};
          if (grad_step++ % cfg.actor_update_interval == 0) {
            last_actor = actor_update(agent, batch, cfg, update_rng);
            u.actor_loss = last_actor.loss;
            u.mean_ess = last_actor.mean_ess;
          }
          polyak_update(agent, cfg.tau);
          log.updates.push_back(u);
          consecutive_failures = 0;
        } catch (const EstimationError& e) {
          ++log.failed_batches;
          if (++consecutive_failures >= 3)
            throw EstimationError("train: 3 consecutive failed batches, last at env step " + std::to_string(step) + ": " + e.what());
        }
      }
    }

    if (step % cfg.eval_interval == 0) {
      EvalRow row;
      row.step = step;
      const std::size_t n_new = log.updates.size() - last_eval_update;
      for (std::size_t i = last_eval_update; i < log.updates.size(); ++i) {
        row.actor_loss += log.updates[i].actor_loss / double(n_new);
        row.critic_loss[0] += log.updates[i].critic_loss[0] / double(n_new);
        row.critic_loss[1] += log.updates[i].critic_loss[1] / double(n_new);
        row.mean_ess += log.updates[i].mean_ess / double(n_new);
      }
      last_eval_update = log.updates.size();
      Rng eval_rng = make_stream(cfg.seed, 1000 + std::uint64_t(eval_index++));
      row.eval_return = evaluate(agent, env, cfg.eval_episodes, eval_rng, cfg.ode_steps);
      log.evals.push_back(row);
      if (on_eval) on_eval(row);
    }
  }
  log.buffer_size = buffer.size();
  return log;
}

}  // namespace boltzflow::rl
