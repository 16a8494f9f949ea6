#pragma once

// Fully-connected network with hand-written reverse mode. Batches are column-wise, parameters
// live in one flat vector: per layer the weight (out x in, column-major) followed by the bias.

#include "boltzflow/core.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace boltzflow {

enum class Activation { Tanh, Silu, Relu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Silu: return "silu";
    case Activation::Relu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "silu") return Activation::Silu;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "' (expected tanh, silu or relu)");
}

template <typename Scalar>
struct Mlp {
  std::vector<int> widths;  // input, hidden..., output
  Vector<Scalar> params;
  Activation activation = Activation::Tanh;
  // Bumped by every in-place parameter change; caches from older versions are rejected.
  std::uint64_t version = 0;

  Mlp() = default;
  Mlp(std::vector<int> w, Activation act = Activation::Tanh) : widths(std::move(w)), activation(act) {
    require(widths.size() >= 2, "mlp: need at least input and output widths");
    for (int v : widths) require(v >= 1, "mlp: layer widths must be positive");
    params = Vector<Scalar>::Zero(parameter_count(widths));
  }

  static Eigen::Index parameter_count(const std::vector<int>& w) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) n += Eigen::Index(w[l] + 1) * w[l + 1];
    return n;
  }

  int layers() const { return int(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  Eigen::Index offset(int layer) const {
    Eigen::Index o = 0;
    for (int l = 0; l < layer; ++l) o += Eigen::Index(widths[l] + 1) * widths[l + 1];
    return o;
  }

  Eigen::Map<const Matrix<Scalar>> weight(int l) const {
    return {params.data() + offset(l), widths[l + 1], widths[l]};
  }
  Eigen::Map<Matrix<Scalar>> weight(int l) { return {params.data() + offset(l), widths[l + 1], widths[l]}; }
  Eigen::Map<const Vector<Scalar>> bias(int l) const {
    return {params.data() + offset(l) + Eigen::Index(widths[l]) * widths[l + 1], widths[l + 1]};
  }
  Eigen::Map<Vector<Scalar>> bias(int l) {
    return {params.data() + offset(l) + Eigen::Index(widths[l]) * widths[l + 1], widths[l + 1]};
  }

  void touch() { ++version; }
};

/// Weights N(0, gain^2 / fan_in), zero biases; the output layer is further scaled by output_gain.
template <typename Scalar>
Mlp<Scalar> init_mlp(const std::vector<int>& widths, Rng& rng, Activation act = Activation::Tanh,
                     Scalar output_gain = Scalar(1)) {
  Mlp<Scalar> net(widths, act);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  for (int l = 0; l < net.layers(); ++l) {
    const Scalar gain = l + 1 == net.layers() ? output_gain : Scalar(1);
    const Scalar sd = gain / std::sqrt(Scalar(widths[l]));
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * normal(rng);
  }
  return net;
}

template <typename Scalar>
struct MlpCache {
  std::vector<Matrix<Scalar>> inputs;  // input to each layer; inputs[0] is the network input
  std::vector<Matrix<Scalar>> pre;     // pre-activations of hidden layers
  std::uint64_t version = 0;
  const void* owner = nullptr;
};

template <typename Scalar>
struct MlpGradients {
  Vector<Scalar> params;  // summed over the batch
  Matrix<Scalar> input;   // d output-gradient-weighted sum / d input, one column per point
};

namespace detail {

// tanh through the vectorized exp: sign(z) (1 - e) / (1 + e), e = exp(-2|z|). Absolute error
// stays at rounding level; Eigen's own tanh is scalar for double.
template <typename Scalar>
void fast_tanh(const Matrix<Scalar>& z, Matrix<Scalar>& h) {
  h = (Scalar(-2) * z.array().abs()).exp();
  h = ((Scalar(1) - h.array()) / (Scalar(1) + h.array())).cwiseProduct(z.array().sign());
}

template <typename Scalar>
void activate(Activation a, const Matrix<Scalar>& z, Matrix<Scalar>& h) {
  switch (a) {
    case Activation::Tanh: fast_tanh(z, h); break;
    case Activation::Silu: h = z.array() / (Scalar(1) + (-z.array()).exp()); break;
    case Activation::Relu: h = z.array().max(Scalar(0)); break;
  }
}

// In place: g <- g * act'(z), with h = act(z).
template <typename Scalar>
void activation_backward(Activation a, const Matrix<Scalar>& z, const Matrix<Scalar>& h, Matrix<Scalar>& g) {
  switch (a) {
    case Activation::Tanh: g.array() *= Scalar(1) - h.array().square(); break;
    case Activation::Silu: {
      const auto sig = (Scalar(1) + (-z.array()).exp()).inverse();
      g.array() *= sig * (Scalar(1) + z.array() * (Scalar(1) - sig));
      break;
    }
    case Activation::Relu: g.array() *= (z.array() > Scalar(0)).template cast<Scalar>(); break;
  }
}

}  // namespace detail

/// Batched forward pass; the last layer is affine.
template <typename Scalar>
Matrix<Scalar> mlp_forward(const Mlp<Scalar>& net, const Matrix<Scalar>& input, MlpCache<Scalar>* cache = nullptr) {
  if (input.rows() != net.input_dim())
    throw ConfigError("mlp: input has " + std::to_string(input.rows()) + " rows, network expects " +
                      std::to_string(net.input_dim()));
  const int L = net.layers();
  if (cache) {
    cache->inputs.assign(L, {});
    cache->pre.assign(L - 1, {});
    cache->inputs[0] = input;
    cache->version = net.version;
    cache->owner = &net;
  }
  Matrix<Scalar> h = input;
  for (int l = 0; l < L; ++l) {
    Matrix<Scalar> z = net.weight(l) * h;
    z.colwise() += net.bias(l);
    if (l + 1 == L) return z;
    detail::activate(net.activation, z, h);
    if (cache) {
      cache->pre[l] = std::move(z);
      cache->inputs[l + 1] = h;
    }
  }
  return h;
}

template <typename Scalar>
Vector<Scalar> mlp_forward(const Mlp<Scalar>& net, const Vector<Scalar>& input) {
  return mlp_forward(net, Matrix<Scalar>(input));
}

/// Reverse pass for the scalar sum over the batch of <grad_output, output>. Parameter
/// gradients are skipped when `with_params` is false (input gradients only).
template <typename Scalar>
MlpGradients<Scalar> mlp_backward(const Mlp<Scalar>& net, const MlpCache<Scalar>& cache, const Matrix<Scalar>& grad_output,
                                  bool with_params = true) {
  if (cache.owner != &net || cache.version != net.version || int(cache.inputs.size()) != net.layers())
    throw ConfigError("mlp: backward called with a stale cache");
  if (grad_output.rows() != net.output_dim() || grad_output.cols() != cache.inputs[0].cols())
    throw ConfigError("mlp: grad_output shape does not match the cached forward pass");
  MlpGradients<Scalar> out;
  if (with_params) out.params = Vector<Scalar>::Zero(net.params.size());
  Matrix<Scalar> g = grad_output;
  for (int l = net.layers() - 1; l >= 0; --l) {
    if (l + 1 < net.layers()) detail::activation_backward(net.activation, cache.pre[l], cache.inputs[l + 1], g);
    if (with_params) {
      const Eigen::Index o = net.offset(l);
      const Eigen::Index n_w = Eigen::Index(net.widths[l]) * net.widths[l + 1];
      Eigen::Map<Matrix<Scalar>>(out.params.data() + o, net.widths[l + 1], net.widths[l]).noalias() =
          g * cache.inputs[l].transpose();
      out.params.segment(o + n_w, net.widths[l + 1]) = g.rowwise().sum();
    }
    g = net.weight(l).transpose() * g;
  }
  out.input = std::move(g);
  return out;
}

}  // namespace boltzflow
