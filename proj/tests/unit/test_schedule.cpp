#include <doctest.h>

#include "boltzflow/schedule.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace boltzflow;
using Vec = Vector<double>;

namespace {

std::vector<Schedule<double>> all_schedules() {
  return {Schedule<double>::linear(), Schedule<double>::variance_exploding(), Schedule<double>::variance_preserving(),
          Schedule<double>::variance_exploding(0.5, 3.0), Schedule<double>::variance_preserving(0.3, 5.0)};
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_SUITE("schedules") {
  TEST_CASE("linear coefficients") {
    const auto s = Schedule<double>::linear();
    auto c = s(0.5);
    CHECK(c.alpha == 0.5);
    CHECK(c.beta == 0.5);
    CHECK(c.alpha_dot == 1.0);
    CHECK(c.beta_dot == -1.0);
    c = s(0.0);
    CHECK(c.alpha == 0.0);
    CHECK(c.beta == 1.0);
    CHECK(c.alpha_dot == 1.0);
    CHECK(c.beta_dot == -1.0);
    c = s(1.0);
    CHECK(c.alpha == 1.0);
    CHECK(c.beta == 0.0);
  }

  TEST_CASE("variance exploding endpoint") {
    const auto c = Schedule<double>::variance_exploding(0.01, 10.0)(1.0);
    CHECK(c.alpha == 1.0);
    CHECK(c.beta == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(c.alpha_dot == 0.0);
  }

  TEST_CASE("invalid parameters are rejected") {
    CHECK_THROWS_AS(Schedule<double>::variance_exploding(0.0, 10.0), ConfigError);
    CHECK_THROWS_AS(Schedule<double>::variance_exploding(-1.0, 10.0), ConfigError);
    CHECK_THROWS_AS(Schedule<double>::variance_preserving(0.1, 0.0), ConfigError);
    CHECK_THROWS_AS(Schedule<double>::linear()(1.5), DomainError);
    CHECK_THROWS_AS(Schedule<double>::linear()(-0.1), DomainError);
  }

  TEST_CASE("positivity on the open ends") {
    for (const auto& s : all_schedules())
      for (int i = 1; i < 1000; ++i) {
        const double t = i / 1000.0;
        const auto c = s(t);
        CHECK(c.alpha > 0);
        CHECK(c.beta > 0);
      }
    CHECK(Schedule<double>::variance_exploding()(1.0).beta > 0);
    CHECK(Schedule<double>::variance_preserving()(0.0).beta > 0);
    CHECK(Schedule<double>::variance_preserving()(1.0).alpha > 0);
  }

  TEST_CASE("analytic derivatives match central differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    const double h = 1e-5;
    for (const auto& s : all_schedules())
      for (int i = 0; i < 100; ++i) {
        const double t = u(rng);
        const auto c = s(t);
        const double fd_alpha = (s(t + h).alpha - s(t - h).alpha) / (2 * h);
        const double fd_beta = (s(t + h).beta - s(t - h).beta) / (2 * h);
        if (s.kind() == ScheduleKind::VE)
          CHECK(c.alpha_dot == 0.0);
        else
          CHECK(rel_err(c.alpha_dot, fd_alpha) < 1e-6);
        CHECK(rel_err(c.beta_dot, fd_beta) < 1e-6);
      }
  }

  TEST_CASE("interpolate and conditional velocity") {
    const auto lin = Schedule<double>::linear();
    CHECK(interpolate(vec({1, 0}), vec({0, 1}), 0.0, lin) == vec({1, 0}));
    CHECK(interpolate(vec({1, 0}), vec({0, 1}), 1.0, lin) == vec({0, 1}));
    CHECK(interpolate(vec({2}), vec({4}), 0.25, lin)(0) == 2.5);
    for (double t : {0.0, 0.3, 1.0}) CHECK(conditional_velocity(vec({1, 0}), vec({0, 1}), t, lin) == vec({-1, 1}));
    CHECK(conditional_velocity(vec({3}), vec({3}), 0.7, lin)(0) == 0.0);
    CHECK(conditional_velocity(vec({0}), vec({1}), 0.5, Schedule<double>::variance_exploding())(0) == 0.0);
    CHECK_THROWS_AS(interpolate(vec({1, 0}), vec({1}), 0.5, lin), ConfigError);
    CHECK_THROWS_AS(conditional_velocity(vec({1, 0}), vec({1}), 0.5, lin), ConfigError);
  }

  TEST_CASE("conversion examples") {
    const auto lin = Schedule<double>::linear();
    // 2x2 system at t = 0.5: v = E1 - E0 = 2, x = (E1 + E0) / 2 = 0, so E1 = 1.
    const Vec e1 = convert_prediction(Prediction::Velocity, Prediction::DataMean, vec({2}), vec({0}), 0.5, lin);
    CHECK(e1(0) == doctest::Approx(1.0).epsilon(1e-15));
    const Vec score = convert_prediction(Prediction::NoiseMean, Prediction::Score, vec({0.5}), vec({0}), 0.5, lin);
    CHECK(score(0) == doctest::Approx(-1.0).epsilon(1e-15));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (const auto& s : all_schedules())
      for (double t : {0.1, 0.4, 0.77}) {
        const Vec v = vec({n(rng), n(rng), n(rng)});
        const Vec x = vec({n(rng), n(rng), n(rng)});
        const Vec e0 = convert_prediction(Prediction::Velocity, Prediction::NoiseMean, v, x, t, s);
        const Vec back = convert_prediction(Prediction::NoiseMean, Prediction::Velocity, e0, x, t, s);
        CHECK((back - v).lpNorm<Eigen::Infinity>() < 1e-12 * std::max(1.0, v.lpNorm<Eigen::Infinity>()) * 10);
        // every pair of kinds round-trips
        for (auto a : {Prediction::Velocity, Prediction::DataMean, Prediction::NoiseMean, Prediction::Score})
          for (auto b : {Prediction::Velocity, Prediction::DataMean, Prediction::NoiseMean, Prediction::Score}) {
            const Vec there = convert_prediction(a, b, v, x, t, s);
            const Vec again = convert_prediction(b, a, there, x, t, s);
            CHECK((again - v).norm() < 1e-9 * (1 + v.norm()));
          }
      }
  }

  TEST_CASE("reconstruction from velocity and interpolant") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (const auto& s : all_schedules())
      for (int i = 0; i < 100; ++i) {
        const double t = u(rng);
        const Vec x0 = vec({n(rng), n(rng)});
        const Vec x1 = vec({n(rng), n(rng)});
        const Vec xt = interpolate(x0, x1, t, s);
        const Vec v = conditional_velocity(x0, x1, t, s);
        const Vec e0 = convert_prediction(Prediction::Velocity, Prediction::NoiseMean, v, xt, t, s);
        const Vec e1 = convert_prediction(Prediction::Velocity, Prediction::DataMean, v, xt, t, s);
        CHECK((e0 - x0).lpNorm<Eigen::Infinity>() < 1e-10);
        CHECK((e1 - x1).lpNorm<Eigen::Infinity>() < 1e-10);
      }
  }

  TEST_CASE("singular conversions name the denominator") {
    const auto lin = Schedule<double>::linear();
    try {
      convert_prediction(Prediction::NoiseMean, Prediction::DataMean, vec({1}), vec({1}), 0.0, lin);
      FAIL("expected a domain error");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("denominator alpha") != std::string::npos);
    }
    try {
      convert_prediction(Prediction::DataMean, Prediction::NoiseMean, vec({1}), vec({1}), 1.0 - 1e-8, lin);
      FAIL("expected a domain error");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("denominator beta") != std::string::npos);
    }
    // VE has alpha_dot = 0, so the velocity determinant is alpha * beta_dot, which is fine.
    CHECK_NOTHROW(convert_prediction(Prediction::Velocity, Prediction::DataMean, vec({1}), vec({1}), 0.5,
                                     Schedule<double>::variance_exploding()));
    CHECK_THROWS_AS(convert_prediction(Prediction::NoiseMean, Prediction::Score, vec({1}), vec({1}), 1.0, lin), DomainError);
  }
}
