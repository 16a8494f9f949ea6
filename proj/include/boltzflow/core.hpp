#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace boltzflow {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Batches of points are stored column-wise: one column per point.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// Invalid parameters or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical operation requested outside the region where it is well defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Importance-sampling or integration failures (e.g. every weight underflows).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent generator for stream `stream` of a run seeded with `seed`.
/// Streams are keyed by counter so parallel workers reproduce serial output.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

template <typename Scalar>
Matrix<Scalar> standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  Matrix<Scalar> out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ConfigError(message);
}

}  // namespace boltzflow
