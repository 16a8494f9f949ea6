#include "boltzflow/rl/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace boltzflow::rl {

Vec clip_action(const Vec& a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

namespace {

void check_action(const Env& env, const Vec& state, const Vec& action) {
  if (state.size() != env.state_dim() || action.size() != env.action_dim())
    throw ConfigError(env.name() + ": state/action dimension mismatch");
}

}  // namespace

Vec PointMass2D::reset(Rng&) const { return Vec::Zero(4); }

StepResult PointMass2D::step(const Vec& state, const Vec& action) const {
  check_action(*this, state, action);
  const Vec a = clip_action(action);
  const Vec v = kDamping * state.tail(2) + kDt * a;
  const Vec p = state.head(2) + kDt * v;
  StepResult r;
  r.next_state.resize(4);
  r.next_state << p, v;
  r.reward = -(p - goal()).squaredNorm() - 0.01 * a.squaredNorm();
  return r;
}

Vec Pendulum1::reset(Rng& rng) const {
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi), speed(-1.0, 1.0);
  const double th = angle(rng), th_dot = speed(rng);
  Vec s(3);
  s << std::cos(th), std::sin(th), th_dot;
  return s;
}

StepResult Pendulum1::step(const Vec& state, const Vec& action) const {
  check_action(*this, state, action);
  const double th = std::atan2(state(1), state(0));
  const double th_dot = state(2);
  const double u = kMaxTorque * std::clamp(action(0), -1.0, 1.0);
  const double wrapped = std::fmod(th + std::numbers::pi, 2 * std::numbers::pi);
  const double th_norm = (wrapped < 0 ? wrapped + 2 * std::numbers::pi : wrapped) - std::numbers::pi;
  StepResult r;
  r.reward = -(th_norm * th_norm + 0.1 * th_dot * th_dot + 0.001 * u * u);
  // Unit mass and length.
  const double new_dot = std::clamp(th_dot + (3 * kGravity / 2 * std::sin(th) + 3.0 * u) * kDt, -kMaxSpeed, kMaxSpeed);
  const double new_th = th + new_dot * kDt;
  r.next_state.resize(3);
  r.next_state << std::cos(new_th), std::sin(new_th), new_dot;
  return r;
}

Vec Bandit::reset(Rng&) const { return Vec::Zero(1); }

void Bandit::reward(const Mat& actions, Vec* r, Mat* grad) const {
  const double w2 = width_ * width_;
  const Eigen::ArrayXd a = actions.row(0).transpose().array();
  const Eigen::ArrayXd lp = -(a - center_).square() / (2 * w2), lm = -(a + center_).square() / (2 * w2);
  const Eigen::ArrayXd hi = lp.max(lm);
  const Eigen::ArrayXd ep = (lp - hi).exp(), em = (lm - hi).exp();
  if (r) *r = (w2 * (hi + (ep + em).log())).matrix();
  if (grad) *grad = (-((a - center_) * ep + (a + center_) * em) / (ep + em)).matrix().transpose();
}

StepResult Bandit::step(const Vec& state, const Vec& action) const {
  check_action(*this, state, action);
  Vec r;
  reward(Mat(clip_action(action)), &r, nullptr);
  return {state, r(0), true};
}

const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names{"pointmass2d", "pendulum1", "bandit"};
  return names;
}

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "pointmass2d") return std::make_unique<PointMass2D>();
  if (name == "pendulum1") return std::make_unique<Pendulum1>();
  if (name == "bandit") return std::make_unique<Bandit>();
  throw ConfigError("unknown environment '" + name + "' (expected pointmass2d, pendulum1 or bandit)");
}

}  // namespace boltzflow::rl
