#pragma once

// Distillation, meta-objective, and classification losses.
//
// Probability/label batches are plain (batch, classes) tensors whose rows lie
// on the simplex; see check_distribution_rows.

#include <cmath>
#include <string>
#include <vector>

#include "mkd/autograd.hpp"
#include "mkd/models.hpp"

namespace mkd {

/// Throws DimensionError unless `t` is (batch, classes) with rows summing to 1
/// within `tol` and entries in [0, 1].
inline void check_distribution_rows(const Tensor& t, const char* what, double tol = 1e-9) {
  if (t.dim() != 2) throw DimensionError(std::string(what) + ": expected (batch, classes)");
  std::size_t n = t.size(0), c = t.size(1);
  auto d = t.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double v = d[i * c + j];
      if (v < -tol || v > 1.0 + tol) {
        throw DomainError(std::string(what) + ": entry outside [0, 1] in row " + std::to_string(i));
      }
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      throw DomainError(std::string(what) + ": row " + std::to_string(i) + " sums to " +
                        std::to_string(s));
    }
  }
}

/// Cross-entropy between temperature-softened teacher and student outputs,
/// averaged over the batch: mean_i -sum_j softmax(z_t/tau_t)_ij log softmax(z_s/tau_s)_ij.
/// The teacher logits are detached; both temperatures stay differentiable.
/// `tau_squared` multiplies by tau_s * tau_t (the classical T^2 correction).
inline Tensor kd_loss(const Tensor& z_s, const Tensor& z_t, const Temperatures& tau,
                      bool tau_squared = false) {
  if (z_s.dim() != 2 || z_t.dim() != 2 || z_s.shape() != z_t.shape()) {
    throw DimensionError("kd_loss: student logits " + shape_str(z_s.shape()) +
                         " and teacher logits " + shape_str(z_t.shape()) + " must match");
  }
  if (!(tau.student() > 0.0) || !(tau.teacher() > 0.0)) {
    throw DomainError("kd_loss: temperatures must be positive, got tau_s=" +
                      std::to_string(tau.student()) + " tau_t=" + std::to_string(tau.teacher()));
  }
  double n = static_cast<double>(z_s.size(0));
  Tensor log_ps = log_softmax(z_s / tau.tau_s, 1);
  Tensor p_t = softmax_stable(z_t.detach() / tau.tau_t, 1);
  Tensor loss = scalar_mul(sum(p_t * log_ps), -1.0 / n);
  if (tau_squared) loss = loss * (tau.tau_s * tau.tau_t);
  return loss;
}

/// Row-wise argmax with ties broken toward the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& t) {
  std::size_t n = t.size(0), c = t.size(1);
  auto d = t.data();
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < c; ++j)
      if (d[i * c + j] > d[i * c + out[i]]) out[i] = j;
  return out;
}

/// Squared error between student probabilities and targets, summed over the
/// misclassified rows only. The misclassification mask is a constant.
inline Tensor meta_loss(const Tensor& p_s, const Tensor& y) {
  if (p_s.dim() != 2 || p_s.shape() != y.shape()) {
    throw DimensionError("meta_loss: probabilities " + shape_str(p_s.shape()) + " and labels " +
                         shape_str(y.shape()) + " must match");
  }
  auto pred = argmax_rows(p_s);
  auto truth = argmax_rows(y);
  std::size_t n = p_s.size(0);
  std::vector<double> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = pred[i] != truth[i] ? 1.0 : 0.0;
  Tensor diff = p_s - y.detach();
  return sum(Tensor({n, 1}, std::move(mask)) * (diff * diff));
}

/// Number of rows in `p` whose argmax disagrees with the argmax of `y`.
inline std::size_t count_incorrect(const Tensor& p, const Tensor& y) {
  auto a = argmax_rows(p);
  auto b = argmax_rows(y);
  std::size_t k = 0;
  for (std::size_t i = 0; i < a.size(); ++i) k += a[i] != b[i];
  return k;
}

/// Batch-mean cross-entropy of logits against (possibly soft) targets.
inline Tensor ce_loss(const Tensor& z, const Tensor& y) {
  if (z.dim() != 2 || z.shape() != y.shape()) {
    throw DimensionError("ce_loss: logits " + shape_str(z.shape()) + " and labels " +
                         shape_str(y.shape()) + " must match");
  }
  double n = static_cast<double>(z.size(0));
  return scalar_mul(sum(y.detach() * log_softmax(z, 1)), -1.0 / n);
}

/// (1 - eps) * y + eps / classes.
inline Tensor label_smooth(const Tensor& y, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("label_smooth: eps must be in [0, 1)");
  if (y.dim() != 2) throw DimensionError("label_smooth: expected (batch, classes)");
  if (eps == 0.0) return y.detach();
  double c = static_cast<double>(y.size(1));
  std::vector<double> out(y.values());
  for (double& v : out) v = (1.0 - eps) * v + eps / c;
  return Tensor(y.shape(), std::move(out));
}

inline Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  std::vector<double> out(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DomainError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    out[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(out));
}

}  // namespace mkd
