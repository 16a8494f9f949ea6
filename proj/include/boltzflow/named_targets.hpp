#pragma once

#include "boltzflow/targets.hpp"

#include <optional>
#include <string>
#include <vector>

namespace boltzflow {

/// Parameters of the built-in targets. Fields irrelevant to the chosen name are ignored.
struct TargetParams {
  std::string name = "gauss";
  std::vector<double> mean{2.0};          // gauss, quadratic-q (center)
  double stddev = 0.5;                    // gauss, gmm2, gmm-ring
  double separation = 2.0;                // gmm2: modes at (+-separation, 0)
  int ring_components = 8;                // gmm-ring
  double ring_radius = 3.0;               // gmm-ring
  double curvature = 1.0;                 // quadratic-q: Q(x) = -curvature ||x - center||^2 / 2
  double lambda = 1.0;                    // quadratic-q temperature
  // Explicit mixture overrides gmm2 / gmm-ring when non-empty.
  std::vector<double> weights{};
  std::vector<std::vector<double>> means{};
  std::vector<double> stddevs{};
};

struct NamedTarget {
  std::string name;
  UnnormalizedTarget<double> target;
  /// Analytic form when the target is a Gaussian mixture (all built-ins are): exact moments
  /// and mode assignment for reports and tests.
  std::optional<GaussianMixture<double>> mixture;

  int dim() const { return target.dim(); }
};

/// Names accepted by make_named_target.
const std::vector<std::string>& named_target_names();

NamedTarget make_named_target(const TargetParams& params);

/// Exact mean and covariance of a Gaussian mixture.
std::pair<Vector<double>, Matrix<double>> mixture_moments(const GaussianMixture<double>& mixture);

}  // namespace boltzflow
