#pragma once

// Built-in continuous-control environments. Actions live in [-1, 1]^d; dynamics are
// deterministic given (state, action), only reset draws randomness.

#include "boltzflow/core.hpp"

#include <memory>
#include <string>
#include <vector>

namespace boltzflow::rl {

using Vec = Vector<double>;
using Mat = Matrix<double>;

struct StepResult {
  Vec next_state;
  double reward = 0;
  bool done = false;  // true terminal state; running out of horizon is not terminal
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;
  virtual Vec reset(Rng& rng) const = 0;
  virtual StepResult step(const Vec& state, const Vec& action) const = 0;
};

Vec clip_action(const Vec& a);

/// Point mass in the plane: state (p, v), action = acceleration.
/// v' = 0.99 v + dt a, p' = p + dt v', reward -||p' - (1, 1)||^2 - 0.01 ||a||^2.
class PointMass2D final : public Env {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kDamping = 0.99;
  static constexpr int kHorizon = 200;

  std::string name() const override { return "pointmass2d"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  int horizon() const override { return kHorizon; }
  Vec reset(Rng& rng) const override;
  StepResult step(const Vec& state, const Vec& action) const override;
  static Vec goal() { return Vec::Ones(2); }
};

/// Torque-limited pendulum, observation (cos th, sin th, th_dot); action in [-1, 1] maps to
/// torque in [-2, 2]. Reward -(th~^2 + 0.1 th_dot^2 + 0.001 u^2) with th~ wrapped to [-pi, pi).
class Pendulum1 final : public Env {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;
  static constexpr int kHorizon = 200;

  std::string name() const override { return "pendulum1"; }
  int state_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  int horizon() const override { return kHorizon; }
  Vec reset(Rng& rng) const override;
  StepResult step(const Vec& state, const Vec& action) const override;
};

/// One-step bandit with a single dummy state and a two-mode reward
/// r(a) = width^2 log(exp(-(a - c)^2 / 2 width^2) + exp(-(a + c)^2 / 2 width^2)) in 1D.
class Bandit final : public Env {
 public:
  explicit Bandit(double center = 0.5, double width = 0.2) : center_(center), width_(width) {}

  std::string name() const override { return "bandit"; }
  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  int horizon() const override { return 1; }
  Vec reset(Rng& rng) const override;
  StepResult step(const Vec& state, const Vec& action) const override;

  double center() const { return center_; }
  double width() const { return width_; }
  /// Reward and its derivative at each action column.
  void reward(const Mat& actions, Vec* r, Mat* grad) const;

 private:
  double center_, width_;
};

const std::vector<std::string>& env_names();
std::unique_ptr<Env> make_env(const std::string& name);

}  // namespace boltzflow::rl
