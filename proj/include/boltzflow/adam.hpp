#pragma once

#include "boltzflow/core.hpp"

#include <cmath>
#include <cstdint>

namespace boltzflow {

template <typename Scalar>
struct AdamState {
  Vector<Scalar> m, v;
  std::int64_t step = 0;
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  std::int64_t skipped = 0;  // updates dropped for non-finite gradients

  AdamState() = default;
  explicit AdamState(Eigen::Index n, Scalar learning_rate = Scalar(1e-3))
      : m(Vector<Scalar>::Zero(n)), v(Vector<Scalar>::Zero(n)), lr(learning_rate) {}
};

/// One bias-corrected Adam update in place. Returns false (and counts the skip) when the
/// gradient has a non-finite entry; params and moments are then left untouched.
template <typename Scalar>
bool adam_step(Vector<Scalar>& params, const Vector<Scalar>& grads, AdamState<Scalar>& s) {
  if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw ConfigError("adam: parameter, gradient and moment sizes differ");
  if (!grads.allFinite()) {
    ++s.skipped;
    return false;
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1 - s.beta2) * grads.cwiseAbs2();
  const Scalar c1 = 1 - std::pow(s.beta1, Scalar(s.step));
  const Scalar c2 = 1 - std::pow(s.beta2, Scalar(s.step));
  params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
  return true;
}

}  // namespace boltzflow
