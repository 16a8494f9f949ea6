#include <doctest.h>

#include "boltzflow/posterior.hpp"

#include "../support/oracles.hpp"

#include <cmath>
#include <random>

using namespace boltzflow;
using Vec = Vector<double>;
using Mat = Matrix<double>;

namespace {

const auto kLinear = Schedule<double>::linear();
const auto kGauss1 = SourceDistribution<double>::standard_gaussian(1);

QFunction<double> quadratic_q(double center = 0.0, double curvature = 1.0) {
  return [center, curvature](const Mat& a, Vec* q, Mat* g) {
    const Mat d = a.array() - center;
    if (q) *q = -0.5 * curvature * d.colwise().squaredNorm().transpose();
    if (g) *g = -curvature * d;
  };
}

QFunction<double> constant_q(double c) {
  return [c](const Mat& a, Vec* q, Mat* g) {
    if (q) *q = Vec::Constant(a.cols(), c);
    if (g) *g = Mat::Zero(a.rows(), a.cols());
  };
}

QFunction<double> shifted(QFunction<double> q, double shift) {
  return [q, shift](const Mat& a, Vec* v, Mat* g) {
    q(a, v, g);
    if (v) v->array() += shift;
  };
}

Vec scalar(double v) { return Vec::Constant(1, v); }

// p1 = N(m, s^2) in 1D as a Boltzmann target with temperature lambda.
UnnormalizedTarget<double> gaussian_boltzmann(double m, double s, double lambda) {
  return boltzmann_from_q<double>(quadratic_q(m, lambda / (s * s)), lambda, 1);
}

}  // namespace

TEST_SUITE("posterior") {
  TEST_CASE("context validation") {
    const auto tgt = boltzmann_from_q<double>(quadratic_q(), 1.0, 1);
    CHECK_THROWS_AS(PosteriorContext<double>(0.0, scalar(0), kLinear, kGauss1, tgt, PosteriorSide::Noise), DomainError);
    CHECK_THROWS_AS(PosteriorContext<double>(1e-7, scalar(0), kLinear, kGauss1, tgt, PosteriorSide::Noise), DomainError);
    CHECK_THROWS_AS(PosteriorContext<double>(1.0, scalar(0), kLinear, kGauss1, tgt, PosteriorSide::Data), DomainError);
    CHECK_NOTHROW(PosteriorContext<double>(1.0, scalar(0), kLinear, kGauss1, tgt, PosteriorSide::Noise));
    CHECK_NOTHROW(PosteriorContext<double>(0.0, scalar(0), kLinear, kGauss1, tgt, PosteriorSide::Data));
    CHECK_THROWS_AS(PosteriorContext<double>(0.5, Vec::Zero(2), kLinear, kGauss1, tgt, PosteriorSide::Noise), ConfigError);
  }

  TEST_CASE("noise log weight") {
    const auto flat = boltzmann_from_q<double>(constant_q(3.0), 0.5, 1);
    const PosteriorContext<double> c_flat(0.3, scalar(0.7), kLinear, kGauss1, flat, PosteriorSide::Noise);
    for (double x0 : {-2.0, 0.0, 1.5}) CHECK(noise_log_weight(c_flat, scalar(x0)) == 6.0);

    const auto quad = boltzmann_from_q<double>(quadratic_q(), 1.0, 1);
    const PosteriorContext<double> c(0.5, scalar(0), kLinear, kGauss1, quad, PosteriorSide::Noise);
    CHECK(noise_log_weight(c, scalar(0)) == 0.0);

    // A constant added to Q shifts every log weight by constant / lambda.
    const double lambda = 0.25;
    const auto base = boltzmann_from_q<double>(quadratic_q(), lambda, 1);
    const auto plus7 = boltzmann_from_q<double>(shifted(quadratic_q(), 7.0), lambda, 1);
    const PosteriorContext<double> cb(0.4, scalar(0.3), kLinear, kGauss1, base, PosteriorSide::Noise);
    const PosteriorContext<double> cp(0.4, scalar(0.3), kLinear, kGauss1, plus7, PosteriorSide::Noise);
    for (double x0 : {-1.0, 0.2, 2.0})
      CHECK(noise_log_weight(cp, scalar(x0)) - noise_log_weight(cb, scalar(x0)) == doctest::Approx(7.0 / lambda).epsilon(1e-13));
  }

  TEST_CASE("noise posterior score") {
    const auto quad = boltzmann_from_q<double>(quadratic_q(), 1.0, 1);
    const PosteriorContext<double> c(0.5, scalar(0), kLinear, kGauss1, quad, PosteriorSide::Noise);
    Mat x0(1, 4);
    x0 << -1.5, -0.2, 0.3, 2.0;
    CHECK((posterior_score_noise(c, x0) + 2 * x0).norm() < 1e-15);

    const auto flat = boltzmann_from_q<double>(constant_q(1.0), 1.0, 1);
    const PosteriorContext<double> cf(0.5, scalar(0.4), kLinear, kGauss1, flat, PosteriorSide::Noise);
    CHECK(posterior_score_noise(cf, x0) == -x0);

    // Finite differences of log q0 = log p0(x0) + log p1(x1(x0)) on a 2D mixture with a Laplace source.
    Mat means(2, 2);
    means << -2, 2, 0, 1;
    const GaussianMixture<double> mix(Vec::Constant(2, 0.5), means, Vec::Constant(2, 0.6));
    const auto tgt = mix.as_target();
    const auto lap = SourceDistribution<double>::laplace(2);
    Vec xt(2);
    xt << 0.3, -0.4;
    const PosteriorContext<double> c2(0.6, xt, Schedule<double>::variance_preserving(), lap, tgt, PosteriorSide::Noise);
    const auto co = c2.coefficients();
    auto logq = [&](const Vec& p) {
      const Mat x1 = implied_data(co, xt, Mat(p));
      return lap.log_density(p)(0) + tgt.log_density(x1)(0);
    };
    Rng rng(3);
    const Mat pts = standard_normal<double>(rng, 2, 50);
    const Mat score = posterior_score_noise(c2, pts);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < pts.cols(); ++j)
      for (int i = 0; i < 2; ++i) {
        if (std::abs(pts(i, j)) < 1e-3) continue;
        Vec p = pts.col(j), m = pts.col(j);
        p(i) += h;
        m(i) -= h;
        const double fd = (logq(p) - logq(m)) / (2 * h);
        CHECK(std::abs(fd - score(i, j)) / std::max(1.0, std::abs(fd)) < 1e-5);
      }
  }

  TEST_CASE("snis_estimate") {
    Mat x(2, 1);
    x << 3, -4;
    CHECK(snis_estimate<double>(scalar(-700.0), x) == x.col(0));

    Rng rng(1);
    const Mat f = standard_normal<double>(rng, 3, 17);
    const Vec equal = snis_estimate<double>(Vec::Constant(17, -2.5), f);
    CHECK((equal - f.rowwise().sum() / 17.0).norm() < 1e-15);

    // Dyadic log weights and shifts: the subtraction is exact, so the output is bit-identical.
    Vec lw(17);
    for (int i = 0; i < 17; ++i) lw(i) = -0.125 * i * (i % 3);
    const Vec base = snis_estimate<double>(lw, f);
    for (double shift : {8.0, -64.0, 1024.0}) CHECK(snis_estimate<double>((lw.array() + shift).matrix(), f) == base);
    // Multiplying all weights by 10 (adding log 10) rounds each log weight; agreement is to rounding.
    const Vec times10 = snis_estimate<double>((lw.array() + std::log(10.0)).matrix(), f);
    CHECK((times10 - base).norm() < 1e-14);

    // The callable overload applies f to the sample batch.
    const Vec sq = snis_estimate<double>(f, lw, [](const Mat& s) { return s.cwiseAbs2(); });
    CHECK((sq - snis_estimate<double>(lw, f.cwiseAbs2())).norm() == 0.0);

    CHECK_THROWS_AS(snis_estimate<double>(Vec::Constant(3, -std::numeric_limits<double>::infinity()), Mat::Zero(1, 3)),
                    EstimationError);
    CHECK_THROWS_AS(snis_estimate<double>(Vec::Constant(3, std::nan("")), Mat::Zero(1, 3)), EstimationError);
    CHECK_THROWS_AS(snis_estimate<double>(Vec::Zero(0), Mat::Zero(1, 0)), EstimationError);
  }

  TEST_CASE("stein control variate") {
    const auto quad = boltzmann_from_q<double>(quadratic_q(), 1.0, 1);
    const PosteriorContext<double> c(0.5, scalar(0), kLinear, kGauss1, quad, PosteriorSide::Noise);
    Mat x0(1, 3);
    x0 << -1, 0.5, 2;
    CHECK(stein_cv(c, x0, scalar(0)).isZero(0.0));
    CHECK((stein_cv(c, x0, scalar(1)) + 2 * x0).norm() < 1e-15);

    // Zero mean under the exact posterior, for a Gaussian and a mixture target.
    Mat means(1, 2);
    means << -1.5, 1.0;
    const GaussianMixture<double> mix((Vec(2) << 0.3, 0.7).finished(), means, (Vec(2) << 0.5, 0.8).finished());
    for (const auto& tgt : {gaussian_boltzmann(1.0, 0.5, 0.7), mix.as_target()}) {
      const PosteriorContext<double> ctx(0.35, scalar(0.6), kLinear, kGauss1, tgt, PosteriorSide::Noise);
      const double lam = -0.8;
      const Vec mean_g = oracle::noise_posterior_expectation(tgt, kGauss1, ctx.coefficients(), ctx.x_t(), Box<double>::cube(1, -12, 12),
                                                             20001, [&](const Mat& p) { return stein_cv(ctx, p, scalar(lam)); });
      CHECK(std::abs(mean_g(0)) < 1e-6);
    }
  }

  TEST_CASE("optimal coefficients") {
    // Proposal equal to a Gaussian target N(mu, v): Lambda* -> v.
    const double mu = 0.4, v = 0.3;
    Rng rng(7);
    const Mat x = (std::sqrt(v) * standard_normal<double>(rng, 1, 100000)).array() + mu;
    const Mat s = -(x.array() - mu) / v;
    const Vec lw = Vec::Zero(x.cols());
    const Vec mean = snis_estimate<double>(lw, x);
    const auto lam = optimal_lambda<double>(x, lw, s, mean);
    CHECK(lam.degenerate.empty());
    CHECK(std::abs(lam.lambda(0) - v) / v < 0.05);
    const auto eta = optimal_eta<double>(x, lw, s, mean);
    CHECK(!eta.degenerate);
    CHECK(eta.eta == doctest::Approx(lam.lambda(0)).epsilon(1e-12));

    const auto zero = optimal_lambda<double>(x, lw, Mat::Zero(1, x.cols()), mean);
    CHECK(zero.lambda(0) == 0.0);
    CHECK(zero.degenerate == std::vector<int>{0});
    CHECK(optimal_eta<double>(x, lw, Mat::Zero(1, x.cols()), mean).degenerate);

    // Residuals orthogonal to scores: r = (1, -1, 1, -1), s = (1, 1, 1, 1).
    Mat xs(1, 4), ss(1, 4);
    xs << 1, -1, 1, -1;
    ss << 1, 1, 1, 1;
    CHECK(optimal_eta<double>(xs, Vec::Zero(4), ss, scalar(0)).eta == 0.0);

    // Proposal matching a d-dimensional target: eta* -> d / E||s||^2 = v.
    const Mat x3 = std::sqrt(v) * standard_normal<double>(rng, 3, 100000);
    const Mat s3 = -x3 / v;
    const auto eta3 = optimal_eta<double>(x3, lw, s3, Vec::Zero(3));
    CHECK(std::abs(eta3.eta - v) / v < 0.05);
  }

  TEST_CASE("asymptotic covariance trace") {
    Rng rng(2);
    const Mat f = standard_normal<double>(rng, 2, 40);
    const Vec lw = standard_normal<double>(rng, 40, 1).col(0);
    const Vec mu = f.col(0);
    CHECK(asymptotic_cov_trace<double>(lw, mu.replicate(1, 40), mu) == 0.0);
    const Vec m = f.rowwise().mean();
    const double expected = (f.colwise() - m).colwise().squaredNorm().sum() / 40.0;
    CHECK(asymptotic_cov_trace<double>(Vec::Zero(40), f, m) == doctest::Approx(expected).epsilon(1e-13));
    CHECK_THROWS_AS(asymptotic_cov_trace<double>(Vec::Zero(1), f.leftCols(1), m), ConfigError);
  }

  TEST_CASE("noise mean against the closed form") {
    const auto tgt = gaussian_boltzmann(0.0, 1.0, 1.0);
    const PosteriorContext<double> c(0.5, scalar(0.25), kLinear, kGauss1, tgt, PosteriorSide::Noise);
    const auto g = oracle::gaussian_posterior(scalar(0), 1.0, 0.5, scalar(0.25), kLinear);
    CHECK(g.noise_mean(0) == doctest::Approx(0.25).epsilon(1e-15));
    for (auto mode : {CvMode<double>::none(), CvMode<double>::iso(0.5), CvMode<double>::iso(1.0), CvMode<double>::auto_iso(),
                      CvMode<double>::auto_diag()}) {
      CAPTURE(to_string(mode));
      Rng rng(11);
      const auto est = estimate_noise_mean(c, 100000, mode, rng);
      CHECK(std::abs(est.mean(0) - 0.25) <= est.band() + 1e-12);
      CHECK(est.ess > 1000);
      CHECK(!est.low_ess);
      CHECK(est.n_samples == 100000);
    }
  }

  TEST_CASE("eta = 0 and eta = 1 reproduce their estimator families exactly") {
    const double lambda = 0.4;
    const auto tgt = gaussian_boltzmann(0.7, 0.6, lambda);
    const PosteriorContext<double> c(0.35, scalar(-0.2), kLinear, kGauss1, tgt, PosteriorSide::Noise);
    Rng rng(5);
    const Mat x0 = kGauss1.sample(rng, 5000);
    const auto none = estimate_noise_mean(c, x0, CvMode<double>::none());
    CHECK(estimate_noise_mean(c, x0, CvMode<double>::iso(0.0)).mean == none.mean);
    CHECK(estimate_noise_mean(c, x0, CvMode<double>::diag(scalar(0.0))).mean == none.mean);
    // Plain SNIS of x0.
    const auto co = c.coefficients();
    const Mat x1 = implied_data(co, c.x_t(), x0);
    const Vec lw = tgt.log_density(x1);
    CHECK(none.mean == snis_estimate<double>(lw, x0));
    // Gradient expectation -(beta / alpha) SNIS[grad Q / lambda].
    const Mat grad_term = (-co.beta / co.alpha) * tgt.grad(x1);
    CHECK(estimate_noise_mean(c, x0, CvMode<double>::iso(1.0)).mean == snis_estimate<double>(lw, grad_term));

    // Data side: eta = 1 gives x_t / alpha + (beta / alpha)^2 SNIS[grad Q / lambda].
    const PosteriorContext<double> cd(0.35, scalar(-0.2), kLinear, kGauss1, tgt, PosteriorSide::Data);
    const Mat xi = standard_normal<double>(rng, 1, 5000);
    const auto batch = evaluate_data_batch(cd, xi, true);
    const double ratio = co.beta / co.alpha;
    const Vec expected = cd.x_t() / co.alpha + (ratio * ratio) * snis_estimate<double>(tgt.log_density(batch.x1), tgt.grad(batch.x1));
    CHECK(estimate_data_mean(cd, batch, CvMode<double>::iso(1.0)).mean == expected);
    CHECK(estimate_data_mean(cd, batch, CvMode<double>::iso(0.0)).mean == snis_estimate<double>(tgt.log_density(batch.x1), batch.x1));
  }

  TEST_CASE("noise-expectation and gradient-expectation agree statistically") {
    const auto tgt = gaussian_boltzmann(1.0, 0.5, 0.3);
    for (double t : {0.2, 0.5, 0.8}) {
      const PosteriorContext<double> c(t, scalar(0.4), kLinear, kGauss1, tgt, PosteriorSide::Noise);
      Rng r0(100), r1(200);
      const auto e0 = estimate_noise_mean(c, 100000, CvMode<double>::iso(0.0), r0);
      const auto e1 = estimate_noise_mean(c, 100000, CvMode<double>::iso(1.0), r1);
      CHECK(std::abs(e0.mean(0) - e1.mean(0)) <= std::hypot(e0.band(), e1.band()));
    }
  }

  TEST_CASE("data mean against the closed form and the interpolation identity") {
    Vec m(2);
    m << 1.0, -0.5;
    const double s = 0.7;
    const auto tgt = GaussianMixture<double>::isotropic_gaussian(m, s).as_target();
    const auto src = SourceDistribution<double>::standard_gaussian(2);
    Vec x(2);
    x << 0.4, 0.1;
    for (double t : {0.25, 0.6}) {
      const auto g = oracle::gaussian_posterior(m, s, t, x, kLinear);
      const PosteriorContext<double> cd(t, x, kLinear, src, tgt, PosteriorSide::Data);
      const PosteriorContext<double> cn(t, x, kLinear, src, tgt, PosteriorSide::Noise);
      for (auto mode : {CvMode<double>::none(), CvMode<double>::iso(1.0), CvMode<double>::auto_diag()}) {
        Rng r1(1), r2(2);
        const auto d = estimate_data_mean(cd, 100000, mode, r1);
        const auto n = estimate_noise_mean(cn, 100000, mode, r2);
        CHECK((d.mean - g.data_mean).norm() <= d.band() + 1e-12);
        const auto co = cd.coefficients();
        const Vec recon = co.alpha * d.mean + co.beta * n.mean;
        CHECK((recon - x).norm() <= std::hypot(co.alpha * d.band(), co.beta * n.band()) + 1e-12);
      }
    }
  }

  TEST_CASE("data mean with a Laplace source against quadrature") {
    Mat means(1, 2);
    means << -1.0, 1.5;
    const GaussianMixture<double> mix((Vec(2) << 0.4, 0.6).finished(), means, (Vec(2) << 0.5, 0.5).finished());
    const auto tgt = mix.as_target();
    const auto lap = SourceDistribution<double>::laplace(1);
    const PosteriorContext<double> cd(0.45, scalar(0.3), kLinear, lap, tgt, PosteriorSide::Data);
    const Vec ref = oracle::data_posterior_expectation(tgt, lap, cd.coefficients(), cd.x_t(), oracle::mixture_box(mix), 20001,
                                                       oracle::identity);
    for (auto mode : {CvMode<double>::none(), CvMode<double>::auto_iso()}) {
      Rng rng(4);
      const auto est = estimate_data_mean(cd, 100000, mode, rng);
      CHECK(std::abs(est.mean(0) - ref(0)) <= est.band());
    }
    const PosteriorContext<double> cn(0.45, scalar(0.3), kLinear, lap, tgt, PosteriorSide::Noise);
    const Vec ref0 = oracle::noise_posterior_expectation(tgt, lap, cn.coefficients(), cn.x_t(), oracle::mixture_box(mix), 20001,
                                                         oracle::identity);
    for (auto mode : {CvMode<double>::none(), CvMode<double>::iso(1.0), CvMode<double>::auto_diag()}) {
      Rng rng(6);
      const auto est = estimate_noise_mean(cn, 100000, mode, rng);
      CHECK(std::abs(est.mean(0) - ref0(0)) <= est.band());
    }
  }

  TEST_CASE("auto coefficients reduce variance") {
    const auto tgt = gaussian_boltzmann(0.5, 0.8, 1.0);
    const PosteriorContext<double> c(0.5, scalar(0.3), kLinear, kGauss1, tgt, PosteriorSide::Noise);
    int wins = 0;
    for (int trial = 0; trial < 50; ++trial) {
      Rng rng = make_stream(99, static_cast<std::uint64_t>(trial));
      const Mat x0 = kGauss1.sample(rng, 2000);
      const auto plain = estimate_noise_mean(c, x0, CvMode<double>::none());
      const auto autoiso = estimate_noise_mean(c, x0, CvMode<double>::auto_iso());
      if (autoiso.trace_cov <= plain.trace_cov) ++wins;
    }
    CHECK(wins >= 45);
  }

  TEST_CASE("optimal diagonal coefficients are a local minimum") {
    Mat means(2, 2);
    means << -2, 2, 0, 0;
    const GaussianMixture<double> mix(Vec::Constant(2, 0.5), means, Vec::Constant(2, 0.5));
    const auto tgt = mix.as_target();
    const auto src = SourceDistribution<double>::standard_gaussian(2);
    Vec x(2);
    x << 0.5, -0.3;
    const PosteriorContext<double> c(0.6, x, kLinear, src, tgt, PosteriorSide::Noise);
    Rng rng(8);
    const Mat x0 = src.sample(rng, 20000);
    const auto best = estimate_noise_mean(c, x0, CvMode<double>::auto_diag());
    for (int j = 0; j < 2; ++j)
      for (double factor : {0.8, 1.2}) {
        Vec lam = best.coefficients;
        lam(j) *= factor;
        const auto other = estimate_noise_mean(c, x0, CvMode<double>::diag(lam));
        CHECK(best.trace_cov <= other.trace_cov);
      }
  }

  TEST_CASE("automatic coefficients minimise the reported trace on every batch") {
    Mat means(2, 2);
    means << -1.5, 2, 0.5, -1;
    const GaussianMixture<double> mix((Vec(2) << 0.4, 0.6).finished(), means, (Vec(2) << 0.6, 0.9).finished());
    const auto tgt = mix.as_target();
    const auto src = SourceDistribution<double>::standard_gaussian(2);
    Vec x(2);
    x << 0.2, -0.6;
    for (auto side : {PosteriorSide::Noise, PosteriorSide::Data})
      for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const PosteriorContext<double> c(0.45, x, kLinear, src, tgt, side);
        Rng rng = make_stream(123, trial);
        const Mat x0 = src.sample(rng, 500);
        const Mat z = standard_normal<double>(rng, 2, 500);
        auto run = [&](const CvMode<double>& mode) {
          return side == PosteriorSide::Noise ? estimate_noise_mean(c, x0, mode)
                                              : estimate_data_mean(c, evaluate_data_batch(c, z, true), mode);
        };
        const auto plain = run(CvMode<double>::none());
        const auto iso = run(CvMode<double>::auto_iso());
        const auto diag = run(CvMode<double>::auto_diag());
        const double tol = 1e-12 * plain.trace_cov;
        CHECK(iso.trace_cov <= plain.trace_cov + tol);
        CHECK(diag.trace_cov <= iso.trace_cov + tol);
        // Any fixed coefficient does no better than the fitted one.
        for (double f : {0.99, 1.01}) {
          const auto other = run(CvMode<double>::diag(Vec(diag.coefficients * f)));
          CHECK(diag.trace_cov <= other.trace_cov + tol);
        }
      }
  }

  TEST_CASE("failure modes") {
    // A target that vanishes everywhere makes every weight underflow.
    const UnnormalizedTarget<double> dead(1, [](const Mat& a, Vec* v, Mat* g) {
      if (v) *v = Vec::Constant(a.cols(), -std::numeric_limits<double>::infinity());
      if (g) *g = Mat::Zero(a.rows(), a.cols());
    });
    const PosteriorContext<double> c(0.5, scalar(0), kLinear, kGauss1, dead, PosteriorSide::Noise);
    Rng rng(1);
    CHECK_THROWS_AS(estimate_noise_mean(c, 10, CvMode<double>::none(), rng), EstimationError);
    CHECK_THROWS_AS(estimate_noise_mean(c, 0, CvMode<double>::none(), rng), ConfigError);

    // Extremely peaked target: low ESS is flagged, not rejected.
    const auto sharp = gaussian_boltzmann(3.0, 1e-3, 1.0);
    const PosteriorContext<double> cs(0.9, scalar(2.7), kLinear, kGauss1, sharp, PosteriorSide::Noise);
    const auto est = estimate_noise_mean(cs, 100, CvMode<double>::none(), rng);
    CHECK(est.low_ess);
    CHECK(est.ess >= 1.0);
    CHECK(est.mean.allFinite());

    CHECK_THROWS_AS(parse_cv_mode<double>("iso:abc"), ConfigError);
    CHECK_THROWS_AS(parse_cv_mode<double>("bogus"), ConfigError);
    CHECK(parse_cv_mode<double>("diag:0.5,1").lambda == (Vec(2) << 0.5, 1.0).finished());
    CHECK(parse_cv_mode<double>("iso:0.25").eta == 0.25);
    CHECK(to_string(parse_cv_mode<double>("diag-auto")) == "diag-auto");
  }
}
