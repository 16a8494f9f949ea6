#include <doctest.h>

#include "boltzflow/flow_train.hpp"

#include "../support/oracles.hpp"

#include <cmath>

using namespace boltzflow;
using Vec = Vector<double>;
using Mat = Matrix<double>;

namespace {

const auto kLinear = Schedule<double>::linear();

// Directional-derivative probes of f(theta) = <w, net(x)> summed over the batch.
double max_param_fd_error(Mlp<double> net, const Mat& x, const Mat& w, Rng& rng, int probes) {
  MlpCache<double> cache;
  mlp_forward(net, x, &cache);
  const Vec g = mlp_backward(net, cache, w).params;
  const Vec theta = net.params;
  double worst = 0;
  for (int p = 0; p < probes; ++p) {
    const Vec u = standard_normal<double>(rng, theta.size(), 1);
    const double h = 1e-5;
    net.params = theta + h * u;
    const double fp = (w.array() * mlp_forward(net, x).array()).sum();
    net.params = theta - h * u;
    const double fm = (w.array() * mlp_forward(net, x).array()).sum();
    const double fd = (fp - fm) / (2 * h), an = g.dot(u);
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
  }
  return worst;
}

double max_input_fd_error(const Mlp<double>& net, const Mat& x, const Mat& w, Rng& rng, int probes) {
  MlpCache<double> cache;
  mlp_forward(net, x, &cache);
  const Mat g = mlp_backward(net, cache, w, false).input;
  double worst = 0;
  for (int p = 0; p < probes; ++p) {
    const Mat u = standard_normal<double>(rng, x.rows(), x.cols());
    const double h = 1e-5;
    const double fp = (w.array() * mlp_forward(net, Mat(x + h * u)).array()).sum();
    const double fm = (w.array() * mlp_forward(net, Mat(x - h * u)).array()).sum();
    const double fd = (fp - fm) / (2 * h), an = (g.array() * u.array()).sum();
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
  }
  return worst;
}

// Exact E[X0 | x_t] for p1 = N(m, s^2).
NoiseMeanProvider<double> gaussian_noise_means(double m, double s) {
  return [m, s](const Vec& t, const Mat& x, Rng&) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      out.col(i) = oracle::gaussian_posterior(Vec::Constant(x.rows(), m), s, t(i), Vec(x.col(i)), kLinear).noise_mean;
    return out;
  };
}

double grid_error(const VelocityNet<double>& v, double m, double s) {
  double worst = 0;
  for (double t = 0.1; t <= 0.9 + 1e-9; t += 0.1) {
    const auto c = kLinear(t);
    const double sd = std::sqrt(c.alpha * c.alpha * s * s + c.beta * c.beta);
    for (int k = -10; k <= 10; ++k) {
      const Vec x = Vec::Constant(1, c.alpha * m + 0.2 * k * sd);
      const double pred = velocity(v, Mat(), Vec(Vec::Constant(1, t)), Mat(x))(0, 0);
      worst = std::max(worst, std::abs(pred - gaussian_velocity_oracle(Vec(Vec::Constant(1, m)), s, t, x, kLinear)(0)));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("flownet") {
  TEST_CASE("parameter layout and count") {
    const Mlp<double> net({3, 5, 2});
    CHECK(net.params.size() == (3 + 1) * 5 + (5 + 1) * 2);
    CHECK(net.weight(1).rows() == 2);
    CHECK(net.weight(1).cols() == 5);
    CHECK(net.bias(0).size() == 5);
    CHECK_THROWS_AS(Mlp<double>({3}), ConfigError);
  }

  TEST_CASE("zero network outputs zero") {
    const Mlp<double> net({4, 8, 8, 3});
    Rng rng(1);
    CHECK(mlp_forward(net, Mat(standard_normal<double>(rng, 4, 6))).isZero(0));
  }

  TEST_CASE("single affine layer is exact") {
    Mlp<double> net({3, 2});
    net.weight(0) << 1, 2, 3, -1, 0.5, 4;
    net.bias(0) << 0.25, -2;
    Vec x(3);
    x << 1, -1, 2;
    const Vec expected = net.weight(0) * x + net.bias(0);
    CHECK(mlp_forward(net, x) == expected);
  }

  TEST_CASE("forward is deterministic and rejects bad input") {
    Rng rng(2);
    const auto net = init_mlp<double>({2, 16, 16, 2}, rng);
    const Mat x = standard_normal<double>(rng, 2, 10);
    CHECK(mlp_forward(net, x) == mlp_forward(net, x));
    CHECK_THROWS_AS(mlp_forward(net, Mat(standard_normal<double>(rng, 3, 10))), ConfigError);
  }

  TEST_CASE("gradients match central differences") {
    for (auto act : {Activation::Tanh, Activation::Silu}) {
      Rng rng(3);
      const auto net = init_mlp<double>({2, 16, 16, 2}, rng, act);
      const Mat x = standard_normal<double>(rng, 2, 7);
      const Mat w = standard_normal<double>(rng, 2, 7);
      CHECK(max_param_fd_error(net, x, w, rng, 50) < 1e-6);
      CHECK(max_input_fd_error(net, x, w, rng, 50) < 1e-6);
    }
  }

  TEST_CASE("zero output gradient gives zero gradients") {
    Rng rng(4);
    const auto net = init_mlp<double>({2, 16, 16, 2}, rng);
    MlpCache<double> cache;
    mlp_forward(net, Mat(standard_normal<double>(rng, 2, 5)), &cache);
    const auto g = mlp_backward(net, cache, Mat(Mat::Zero(2, 5)));
    CHECK(g.params.isZero(0));
    CHECK(g.input.isZero(0));
  }

  TEST_CASE("stale cache is rejected") {
    Rng rng(5);
    auto net = init_mlp<double>({2, 4, 1}, rng);
    MlpCache<double> cache;
    mlp_forward(net, Mat(standard_normal<double>(rng, 2, 3)), &cache);
    net.touch();
    CHECK_THROWS_AS(mlp_backward(net, cache, Mat(Mat::Ones(1, 3))), ConfigError);
    const auto other = net;
    CHECK_THROWS_AS(mlp_backward(other, cache, Mat(Mat::Ones(1, 3))), ConfigError);
  }

  TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Vec p = Vec::LinSpaced(5, -1, 1);
    const Vec p0 = p;
    AdamState<double> s(5, 0.01);
    for (int i = 0; i < 10; ++i) CHECK(adam_step(p, Vec(Vec::Zero(5)), s));
    CHECK(p == p0);
    CHECK(s.step == 10);
  }

  TEST_CASE("adam: constant gradient moves by lr * sign(g) per step") {
    for (double g : {3.0, -0.02}) {
      Vec p = Vec::Zero(1);
      AdamState<double> s(1, 0.01);
      double prev = 0;
      for (int i = 0; i < 500; ++i) {
        adam_step(p, Vec(Vec::Constant(1, g)), s);
        const double step = p(0) - prev;
        prev = p(0);
        CHECK(std::abs(step + 0.01 * (g > 0 ? 1 : -1)) < 1e-6);
      }
    }
  }

  TEST_CASE("adam: non-finite gradients are skipped") {
    Vec p = Vec::Ones(2);
    AdamState<double> s(2);
    Vec g(2);
    g << 1.0, std::nan("");
    CHECK_FALSE(adam_step(p, g, s));
    CHECK(s.skipped == 1);
    CHECK(s.step == 0);
    CHECK(p == Vec::Ones(2));
    CHECK(s.m.isZero(0));
  }

  TEST_CASE("time features") {
    const Vec f = time_features(0.25, 4);
    CHECK(f.size() == 9);
    CHECK(f(0) == 0.25);
    CHECK(std::abs(f(1) - 1.0) < 1e-15);  // sin(pi / 2)
    CHECK(std::abs(f(2)) < 1e-15);
    CHECK(std::abs(f(4) + 1.0) < 1e-15);  // cos(pi)
    CHECK(time_features(0.3, 0).size() == 1);
  }

  TEST_CASE("rfm target and exact fit") {
    // u = (alpha_dot / alpha) x + ((alpha beta_dot - alpha_dot beta) / alpha) mu0; linear t = 0.5: 2x - 2 mu0.
    Mat x(1, 2), mu(1, 2);
    x << 1.0, -0.5;
    mu << 0.25, 0.0;
    const Mat u = rfm_target(Vec(Vec::Constant(2, 0.5)), x, mu, kLinear);
    CHECK(u(0, 0) == doctest::Approx(1.5));
    CHECK(u(0, 1) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(rfm_target(Vec(Vec::Zero(2)), x, mu, kLinear), DomainError);

    Rng rng(6);
    auto v = make_velocity_net<double>(0, 1, {8}, rng);
    v.net.params.setZero();
    AdamState<double> opt(v.net.params.size());
    RfmBatch<double> b{Mat(), Vec::Constant(2, 0.5), Mat::Zero(1, 2), Mat::Zero(1, 2)};
    CHECK(rfm_train_step(v, opt, b, kLinear) == 0.0);
    CHECK(v.net.params.isZero(0));
  }

  TEST_CASE("rfm loss decreases on a fixed batch") {
    Rng rng(7);
    auto v = make_velocity_net<double>(2, 2, {32, 32}, rng);
    AdamState<double> opt(v.net.params.size(), 3e-3);
    RfmBatch<double> b;
    b.context = standard_normal<double>(rng, 2, 64);
    b.t = (Vec::Random(64).array() * 0.4 + 0.5).matrix();
    b.x_t = standard_normal<double>(rng, 2, 64);
    b.noise_mean = standard_normal<double>(rng, 2, 64);
    const double first = rfm_train_step(v, opt, b, kLinear);
    double last = first;
    for (int i = 0; i < 100; ++i) last = rfm_train_step(v, opt, b, kLinear);
    CHECK(last < 0.5 * first);
  }

  TEST_CASE("Gaussian velocity closed form") {
    const Vec x = Vec::LinSpaced(5, -2, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      CHECK(std::abs(gaussian_velocity_oracle(Vec(Vec::Zero(1)), 1.0, 0.5, Vec(x.segment(i, 1)), kLinear)(0)) < 1e-15);
    Vec m(2);
    m << 1.0, -3.0;
    for (double t : {0.2, 0.7}) {
      const Vec v = gaussian_velocity_oracle(m, 0.4, t, Vec(kLinear(t).alpha * m), kLinear);
      CHECK((v - kLinear(t).alpha_dot * m).norm() < 1e-15);
    }
    // Near t = 1, against quadrature of the data posterior: v = alpha_dot E1 + beta_dot (x - alpha E1) / beta.
    const double mm = 0.5, s = 0.7, t = 0.99;
    const auto tgt = GaussianMixture<double>::isotropic_gaussian(Vec::Constant(1, mm), s);
    const auto src = SourceDistribution<double>::standard_gaussian(1);
    const auto c = kLinear(t);
    for (double xv : {-0.5, 0.3, 1.4}) {
      const Vec xx = Vec::Constant(1, xv);
      const Vec e1 = oracle::data_posterior_expectation(tgt.as_target(), src, c, xx, oracle::mixture_box(tgt), 20001, oracle::identity);
      const double ref = c.alpha_dot * e1(0) + c.beta_dot * (xv - c.alpha * e1(0)) / c.beta;
      CHECK(std::abs(gaussian_velocity_oracle(Vec(Vec::Constant(1, mm)), s, t, xx, kLinear)(0) - ref) < 1e-8);
    }
  }

  TEST_CASE("training is deterministic given the seed") {
    FlowTrainConfig<double> cfg;
    cfg.hidden = {8};
    cfg.steps = 20;
    cfg.batch = 32;
    const auto src = SourceDistribution<double>::standard_gaussian(1);
    const auto a = train_flow(cfg, kLinear, src, gaussian_noise_means(1.0, 0.5), 9);
    const auto b = train_flow(cfg, kLinear, src, gaussian_noise_means(1.0, 0.5), 9);
    CHECK(a.losses == b.losses);
    CHECK(a.net.net.params == b.net.net.params);
  }

  TEST_CASE("residual against the true velocity shrinks with capacity") {
    const double m = 1.0, s = 0.5;
    const auto src = SourceDistribution<double>::standard_gaussian(1);
    FlowTrainConfig<double> cfg;
    cfg.steps = 1500;
    cfg.batch = 128;
    cfg.lr = 3e-3;
    cfg.lr_final = 1e-4;
    double prev = 1e300;
    for (int width : {4, 16, 64}) {
      cfg.hidden = {width, width};
      const auto r = train_flow(cfg, kLinear, src, gaussian_noise_means(m, s), 10);
      const double e = grid_error(r.net, m, s);
      MESSAGE("width " << width << " grid error " << e);
      CHECK(e < prev);
      prev = e;
    }
  }
}
