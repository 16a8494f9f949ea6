#include "boltzflow/named_targets.hpp"

#include <numbers>

namespace boltzflow {

namespace {

Vector<double> to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector<double>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

GaussianMixture<double> explicit_mixture(const TargetParams& p) {
  const auto k = static_cast<Eigen::Index>(p.means.size());
  require(k >= 1, "target: explicit mixture needs at least one mean");
  const auto d = static_cast<Eigen::Index>(p.means.front().size());
  require(d >= 1, "target: mixture means must be non-empty");
  Matrix<double> means(d, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    require(static_cast<Eigen::Index>(p.means[static_cast<std::size_t>(c)].size()) == d, "target: mixture means differ in dimension");
    means.col(c) = to_vector(p.means[static_cast<std::size_t>(c)]);
  }
  Vector<double> weights = p.weights.empty() ? Vector<double>::Constant(k, 1.0 / double(k)) : to_vector(p.weights);
  Vector<double> sds = p.stddevs.empty() ? Vector<double>::Constant(k, p.stddev) : to_vector(p.stddevs);
  return GaussianMixture<double>(weights, means, sds);
}

}  // namespace

const std::vector<std::string>& named_target_names() {
  static const std::vector<std::string> names{"gauss", "gmm2", "gmm-ring", "quadratic-q"};
  return names;
}

NamedTarget make_named_target(const TargetParams& p) {
  if (p.name == "gauss") {
    require(!p.mean.empty(), "target gauss: mean must be non-empty");
    auto mix = GaussianMixture<double>::isotropic_gaussian(to_vector(p.mean), p.stddev);
    return {p.name, mix.as_target(), mix};
  }
  if (p.name == "gmm2" || p.name == "gmm-ring") {
    if (!p.means.empty()) {
      auto mix = explicit_mixture(p);
      return {p.name, mix.as_target(), mix};
    }
    if (p.name == "gmm2") {
      Matrix<double> means(2, 2);
      means << -p.separation, p.separation, 0.0, 0.0;
      GaussianMixture<double> mix(Vector<double>::Constant(2, 0.5), means, Vector<double>::Constant(2, p.stddev));
      return {p.name, mix.as_target(), mix};
    }
    require(p.ring_components >= 1, "target gmm-ring: ring_components must be >= 1");
    const int k = p.ring_components;
    Matrix<double> means(2, k);
    for (int c = 0; c < k; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / k;
      means(0, c) = p.ring_radius * std::cos(angle);
      means(1, c) = p.ring_radius * std::sin(angle);
    }
    GaussianMixture<double> mix(Vector<double>::Constant(k, 1.0 / k), means, Vector<double>::Constant(k, p.stddev));
    return {p.name, mix.as_target(), mix};
  }
  if (p.name == "quadratic-q") {
    require(!p.mean.empty(), "target quadratic-q: center must be non-empty");
    require(p.curvature > 0, "target quadratic-q: curvature must be positive");
    const Vector<double> center = to_vector(p.mean);
    const double curvature = p.curvature;
    QFunction<double> q = [center, curvature](const Matrix<double>& a, Vector<double>* value, Matrix<double>* grad) {
      const Matrix<double> diff = a.colwise() - center;
      if (value) *value = -0.5 * curvature * diff.colwise().squaredNorm().transpose();
      if (grad) *grad = -curvature * diff;
    };
    const int d = static_cast<int>(center.size());
    auto target = boltzmann_from_q<double>(std::move(q), p.lambda, d);
    // exp(Q / lambda) is N(center, lambda / curvature).
    auto mix = GaussianMixture<double>::isotropic_gaussian(center, std::sqrt(p.lambda / curvature));
    return {p.name, std::move(target), mix};
  }
  std::string known;
  for (const auto& n : named_target_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("target: unknown name '" + p.name + "' (known: " + known + ")");
}

std::pair<Vector<double>, Matrix<double>> mixture_moments(const GaussianMixture<double>& m) {
  const Vector<double> mean = m.means * m.weights;
  Matrix<double> cov = Matrix<double>::Zero(m.dim(), m.dim());
  for (Eigen::Index c = 0; c < m.components(); ++c) {
    const Vector<double> diff = m.means.col(c) - mean;
    cov += m.weights(c) * (diff * diff.transpose() + m.stddevs(c) * m.stddevs(c) * Matrix<double>::Identity(m.dim(), m.dim()));
  }
  return {mean, cov};
}

}  // namespace boltzflow
