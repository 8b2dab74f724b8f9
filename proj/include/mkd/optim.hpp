#pragma once

// Parameter-space optimizers and learning-rate schedules. Updates are applied
// in place to leaf tensors; call them outside of any live graph.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mkd/autograd.hpp"

namespace mkd {

namespace detail {

inline void ensure_buffers(std::vector<std::vector<double>>& bufs, std::span<Tensor> params,
                           const char* who) {
  if (bufs.empty()) {
    for (const auto& p : params) bufs.emplace_back(p.numel(), 0.0);
    return;
  }
  if (bufs.size() != params.size()) {
    throw ContractError(std::string(who) + ": optimizer state tracks " + std::to_string(bufs.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (bufs[i].size() != params[i].numel()) {
      throw DimensionError(std::string(who) + ": state buffer size mismatch for parameter " +
                           std::to_string(i));
    }
  }
}

inline const Tensor& grad_for(const GradMap& grads, const Tensor& p, const char* who) {
  if (!grads.contains(p)) throw ContractError(std::string(who) + ": missing gradient for a parameter");
  return grads[p];
}

}  // namespace detail

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
struct SgdState {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + g + wd * p;  p <- p - lr * v.
inline void sgd_step(std::span<Tensor> params, const GradMap& grads, SgdState& state) {
  detail::ensure_buffers(state.velocity, params, "sgd_step");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = detail::grad_for(grads, params[i], "sgd_step").data();
    auto p = params[i].mutable_data();
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = state.momentum * v[k] + g[k] + state.weight_decay * p[k];
      p[k] -= state.lr * v[k];
    }
  }
}

/// Adam with decoupled weight decay.
struct AdamWState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-5;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

inline void adamw_step(std::span<Tensor> params, const GradMap& grads, AdamWState& state) {
  detail::ensure_buffers(state.m, params, "adamw_step");
  detail::ensure_buffers(state.v, params, "adamw_step");
  for (const auto& p : params) detail::grad_for(grads, p, "adamw_step");
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads[params[i]].data();
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= state.lr * state.weight_decay * p[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      double m_hat = m[k] / bc1;
      double v_hat = v[k] / bc2;
      p[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

/// Raw gradient descent, p <- p - lr * g.
struct PlainGradientState {
  double lr = 1e-3;
};

inline void gd_step(std::span<Tensor> params, const GradMap& grads, const PlainGradientState& state) {
  for (auto& param : params) {
    auto g = detail::grad_for(grads, param, "gd_step").data();
    auto p = param.mutable_data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= state.lr * g[k];
  }
}

/// Optimizer driving the meta-parameters.
using MetaOptimizer = std::variant<AdamWState, PlainGradientState>;

inline void meta_optimizer_step(std::span<Tensor> params, const GradMap& grads, MetaOptimizer& opt) {
  std::visit(
      [&](auto& s) {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, AdamWState>) {
          adamw_step(params, grads, s);
        } else {
          gd_step(params, grads, s);
        }
      },
      opt);
}

inline double& meta_learning_rate(MetaOptimizer& opt) {
  return std::visit([](auto& s) -> double& { return s.lr; }, opt);
}

/// Optimizer driving the student: SGD for the CIFAR recipe, AdamW for the ViT one.
using StudentOptimizer = std::variant<SgdState, AdamWState>;

inline void optimizer_step(std::span<Tensor> params, const GradMap& grads, SgdState& s) { sgd_step(params, grads, s); }
inline void optimizer_step(std::span<Tensor> params, const GradMap& grads, AdamWState& s) {
  adamw_step(params, grads, s);
}
inline void optimizer_step(std::span<Tensor> params, const GradMap& grads, StudentOptimizer& opt) {
  std::visit([&](auto& s) { optimizer_step(params, grads, s); }, opt);
}

inline double& student_learning_rate(StudentOptimizer& opt) {
  return std::visit([](auto& s) -> double& { return s.lr; }, opt);
}

/// Linear warmup from 0 to lr_max, then cosine decay from lr_max to lr_min.
inline double cosine_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                              double lr_max, double lr_min) {
  if (warmup_steps > total_steps) {
    throw ConfigError("cosine_schedule: warmup_steps (" + std::to_string(warmup_steps) +
                      ") exceeds total_steps (" + std::to_string(total_steps) + ")");
  }
  if (step > total_steps) {
    throw ContractError("cosine_schedule: step " + std::to_string(step) + " beyond total " +
                        std::to_string(total_steps));
  }
  if (step < warmup_steps) {
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return lr_max;
  double progress = static_cast<double>(step - warmup_steps) /
                    static_cast<double>(total_steps - warmup_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mkd
