#pragma once

// Rectifier MLPs (teacher and student) and the temperature prediction network.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mkd/autograd.hpp"

namespace mkd {

struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;

  void validate() const {
    if (input_dim < 1 || output_dim < 1) {
      throw ConfigError("MlpConfig: input_dim and output_dim must be >= 1");
    }
    for (auto h : hidden_dims) {
      if (h < 1) throw ConfigError("MlpConfig: hidden dims must be >= 1");
    }
  }

  /// Layer widths from input to output.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
    w.push_back(output_dim);
    return w;
  }

  bool operator==(const MlpConfig&) const = default;
};

/// Weights and biases of an MLP, stored as [w0, b0, w1, b1, ...] with
/// w_k of shape (fan_in, fan_out) and b_k of shape (fan_out,).
struct MlpParams {
  MlpConfig config;
  std::vector<Tensor> tensors;

  std::size_t num_layers() const { return tensors.size() / 2; }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (std::size_t k = 0; k < num_layers(); ++k) {
      n.push_back("layer" + std::to_string(k) + ".weight");
      n.push_back("layer" + std::to_string(k) + ".bias");
    }
    return n;
  }

  /// Deep copy; `trainable` sets requires_grad on every copied tensor.
  MlpParams copy(bool trainable) const {
    MlpParams out{config, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.detach().requires_grad_(trainable));
    return out;
  }
};

using StudentParams = MlpParams;
using TeacherParams = MlpParams;

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape,
                             std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(shape_numel(shape));
  for (double& v : w) v = dist(rng);
  return Tensor(std::move(shape), std::move(w));
}

}  // namespace detail

/// Glorot-uniform weights, zero biases. All tensors require gradients.
inline MlpParams mlp_init(const MlpConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  MlpParams p{config, {}};
  auto w = config.widths();
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    p.tensors.push_back(detail::glorot_uniform(w[k], w[k + 1], {w[k], w[k + 1]}, rng).requires_grad_());
    p.tensors.push_back(Tensor::zeros({w[k + 1]}).requires_grad_());
  }
  return p;
}

/// Logits for a (batch, input_dim) input. `layers` is [w0, b0, w1, b1, ...];
/// a rectifier sits between consecutive layers.
inline Tensor mlp_forward(std::span<const Tensor> layers, const Tensor& x) {
  if (layers.empty() || layers.size() % 2 != 0) {
    throw DimensionError("mlp_forward: expected weight/bias pairs, got " +
                         std::to_string(layers.size()) + " tensors");
  }
  if (x.dim() != 2 || x.size(1) != layers[0].shape().at(0)) {
    throw DimensionError("mlp_forward: input shape " + shape_str(x.shape()) +
                         " does not match first layer " + shape_str(layers[0].shape()));
  }
  Tensor h = x;
  for (std::size_t k = 0; k < layers.size(); k += 2) {
    h = matmul(h, layers[k]) + layers[k + 1];
    if (k + 2 < layers.size()) h = relu(h);
  }
  return h;
}

inline Tensor mlp_forward(const MlpParams& params, const Tensor& x) {
  return mlp_forward(std::span<const Tensor>(params.tensors), x);
}

struct Temperatures {
  Tensor tau_s;  // scalar
  Tensor tau_t;  // scalar

  static Temperatures fixed(double tau_s, double tau_t) {
    return {Tensor::scalar(tau_s), Tensor::scalar(tau_t)};
  }
  double student() const { return tau_s.item(); }
  double teacher() const { return tau_t.item(); }
};

inline constexpr std::size_t kTempEmbeddingDim = 8;
inline constexpr std::size_t kTempHiddenDim = 16;

/// Learnable embedding plus a 2-layer rectifier MLP producing two temperatures.
struct MetaParams {
  Tensor embedding;  // (8,)
  Tensor w1;         // (8, 16)
  Tensor b1;         // (16,)
  Tensor w2;         // (16, 2)
  Tensor b2;         // (2,)
  double tau_init = 1.0;

  std::vector<Tensor> tensors() const { return {embedding, w1, b1, w2, b2}; }
  static std::vector<std::string> names() { return {"meta.embedding", "meta.w1", "meta.b1", "meta.w2", "meta.b2"}; }

  MetaParams copy() const {
    MetaParams m = *this;
    m.embedding = embedding.clone_leaf();
    m.w1 = w1.clone_leaf();
    m.b1 = b1.clone_leaf();
    m.w2 = w2.clone_leaf();
    m.b2 = b2.clone_leaf();
    return m;
  }
};

/// Output head starts at zero so the initial temperatures equal tau_init exactly.
inline MetaParams meta_init(double tau_init, std::uint64_t seed) {
  if (!(tau_init > 0.5) || !std::isfinite(tau_init)) {
    throw ConfigError("meta_init: tau_init must exceed 0.5 so temperatures stay positive, got " +
                      std::to_string(tau_init));
  }
  std::mt19937_64 rng(seed);
  MetaParams m;
  m.tau_init = tau_init;
  m.embedding = detail::glorot_uniform(1, kTempEmbeddingDim, {kTempEmbeddingDim}, rng).requires_grad_();
  m.w1 = detail::glorot_uniform(kTempEmbeddingDim, kTempHiddenDim, {kTempEmbeddingDim, kTempHiddenDim}, rng)
             .requires_grad_();
  m.b1 = Tensor::zeros({kTempHiddenDim}).requires_grad_();
  m.w2 = Tensor::zeros({kTempHiddenDim, 2}).requires_grad_();
  m.b2 = Tensor::zeros({2}).requires_grad_();
  return m;
}

/// tau = tau_init + sigmoid(MLP(e)) - 0.5, for the student (index 0) and the
/// teacher (index 1). The offset is formed before adding tau_init so that a
/// zero head reproduces tau_init bit for bit. Results are kept strictly
/// inside (tau_init - 0.5, tau_init + 0.5) even when the sigmoid saturates.
inline Temperatures tempnet_forward(const MetaParams& meta) {
  Tensor e = reshape(meta.embedding, {1, kTempEmbeddingDim});
  Tensor h = relu(matmul(e, meta.w1) + meta.b1);
  Tensor out = reshape(matmul(h, meta.w2) + meta.b2, {2});
  Tensor tau = add_scalar(sigmoid(out) - 0.5, meta.tau_init);
  double lo = std::nextafter(meta.tau_init - 0.5, meta.tau_init);
  double hi = std::nextafter(meta.tau_init + 0.5, meta.tau_init);
  tau = clamp(tau, lo, hi);
  return {reshape(slice(tau, 0, 0, 1), {}), reshape(slice(tau, 0, 1, 2), {})};
}

}  // namespace mkd
