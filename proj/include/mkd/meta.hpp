#pragma once

// One-step-lookahead meta-gradients and the three-phase MKD update.
//
// The generic entry points take the losses as callables:
//   train_loss(theta)   -> scalar Tensor, may depend on the meta leaves;
//   val_loss(theta')    -> scalar Tensor, depends on the meta leaves only
//                          through theta'.
// theta is passed as a span of tensors in the same order as `student`.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mkd/autograd.hpp"
#include "mkd/losses.hpp"
#include "mkd/models.hpp"
#include "mkd/optim.hpp"

namespace mkd {

enum class MetaGradMode { exact, fd };
enum class MetaObjective { eq8, ce };

struct MetaGradResult {
  GradMap grad;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// Exact gradient of val_loss(theta - alpha * d train_loss / d theta) w.r.t.
/// `meta`, obtained by differentiating through the student gradient.
template <class TrainLoss, class ValLoss>
MetaGradResult meta_grad_exact(std::span<const Tensor> student, std::span<const Tensor> meta,
                               TrainLoss&& train_loss, ValLoss&& val_loss, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("meta_grad_exact: step size must be non-negative");
  TapeScope scope;
  MetaGradResult r;
  Tensor lt = train_loss(student);
  GradMap g = backward(lt, student, /*create_graph=*/true);
  std::vector<Tensor> lookahead;
  lookahead.reserve(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    lookahead.push_back(student[i] - scalar_mul(g.grads()[i], alpha));
  }
  Tensor lv = val_loss(std::span<const Tensor>(lookahead));
  r.train_loss = lt.item();
  r.val_loss = lv.item();
  r.grad = lv.requires_grad() ? backward(lv, meta) : GradMap{};
  if (!lv.requires_grad()) {
    for (const auto& m : meta) r.grad.insert(m, Tensor::zeros(m.shape()));
  }
  return r;
}

/// First-order approximation of meta_grad_exact by a symmetric difference of
/// d train_loss / d meta at theta +/- eps * v, where v = d val_loss / d theta'.
/// fd_eps <= 0 selects eps = radius / |v|, i.e. theta moves by `radius`.
template <class TrainLoss, class ValLoss>
MetaGradResult meta_grad_fd(std::span<const Tensor> student, std::span<const Tensor> meta,
                            TrainLoss&& train_loss, ValLoss&& val_loss, double alpha,
                            double fd_eps = 0.0, double radius = 0.01) {
  if (!(alpha >= 0.0)) throw ConfigError("meta_grad_fd: step size must be non-negative");
  MetaGradResult r;
  std::vector<Tensor> lookahead;
  {
    TapeScope scope;
    Tensor lt = train_loss(student);
    r.train_loss = lt.item();
    GradMap g = backward(lt, student);
    for (std::size_t i = 0; i < student.size(); ++i) {
      NoGradGuard ng;
      lookahead.push_back((student[i] - scalar_mul(g.grads()[i], alpha)).detach().requires_grad_());
    }
  }
  GradMap v;
  {
    TapeScope scope;
    Tensor lv = val_loss(std::span<const Tensor>(lookahead));
    r.val_loss = lv.item();
    v = backward(lv, std::span<const Tensor>(lookahead));
  }
  double vnorm = v.norm();
  auto zero_grad = [&] {
    GradMap z;
    for (const auto& m : meta) z.insert(m, Tensor::zeros(m.shape()));
    return z;
  };
  if (vnorm == 0.0 || alpha == 0.0) {
    r.grad = zero_grad();
    return r;
  }
  double eps = fd_eps > 0.0 ? fd_eps : radius / vnorm;

  auto shifted = [&](double sign) {
    std::vector<Tensor> out;
    NoGradGuard ng;
    for (std::size_t i = 0; i < student.size(); ++i) {
      out.push_back((student[i].detach() + scalar_mul(v.grads()[i], sign * eps)).detach());
    }
    return out;
  };
  auto meta_grad_at = [&](const std::vector<Tensor>& theta) {
    TapeScope scope;
    Tensor lt = train_loss(std::span<const Tensor>(theta));
    return backward(lt, meta);
  };
  GradMap plus = meta_grad_at(shifted(+1.0));
  GradMap minus = meta_grad_at(shifted(-1.0));
  for (std::size_t i = 0; i < meta.size(); ++i) {
    auto a = plus.grads()[i].data();
    auto b = minus.grads()[i].data();
    std::vector<double> out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = -alpha * (a[k] - b[k]) / (2.0 * eps);
    r.grad.insert(meta[i], Tensor(meta[i].shape(), std::move(out)));
  }
  return r;
}


/// Phases (i) and (ii) of the bilevel step for arbitrary losses, followed by
/// `update_student()` for phase (iii). The pre-update is only used to form
/// the meta-gradient; the student update restarts from the original theta.
template <class TrainLoss, class ValLoss, class StudentUpdate>
MetaGradResult bilevel_step(std::span<const Tensor> student, std::span<Tensor> meta,
                            TrainLoss&& train_loss, ValLoss&& val_loss, double alpha,
                            MetaGradMode mode, double fd_eps, MetaOptimizer& meta_opt,
                            StudentUpdate&& update_student) {
  std::span<const Tensor> meta_view(meta.data(), meta.size());
  MetaGradResult mg = mode == MetaGradMode::exact
                          ? meta_grad_exact(student, meta_view, train_loss, val_loss, alpha)
                          : meta_grad_fd(student, meta_view, train_loss, val_loss, alpha, fd_eps);
  if (!std::isfinite(mg.train_loss) || !std::isfinite(mg.val_loss) || !std::isfinite(mg.grad.norm())) {
    throw NumericalError("bilevel_step: non-finite pre-update loss (" + std::to_string(mg.train_loss) +
                         "), meta objective (" + std::to_string(mg.val_loss) +
                         ") or meta-gradient norm (" + std::to_string(mg.grad.norm()) + ")");
  }
  meta_optimizer_step(meta, mg.grad, meta_opt);
  update_student();
  return mg;
}

/// Record of one MKD step.
struct MetaStepTrace {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double tau_s = 0.0;
  double tau_t = 0.0;
  double meta_grad_norm = 0.0;
  double student_grad_norm = 0.0;
  std::size_t val_incorrect = 0;
  double train_correct = 0.0;
};

struct StepBatch {
  Tensor x;               // (batch, features)
  Tensor y;               // (batch, classes) targets
  Tensor teacher_logits;  // (batch, classes); only needed for training batches
};

struct MkdStepOptions {
  double alpha = 0.05;  // current student step size (also used by the pre-update)
  MetaGradMode mode = MetaGradMode::exact;
  MetaObjective objective = MetaObjective::eq8;
  double fd_eps = 0.0;
  bool tau_squared = false;
  bool meta_active = true;
  std::size_t step = 0;
};

namespace detail {

inline void require_finite(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("mkd_step: non-finite ") + what + " at step " + std::to_string(step));
  }
}

}  // namespace detail

/// Distillation loss of the student (given as a tensor list) on one batch at
/// the given temperatures.
inline Tensor distill_train_loss(std::span<const Tensor> theta, const StepBatch& batch,
                                 const Temperatures& tau, bool tau_squared) {
  return kd_loss(mlp_forward(theta, batch.x), batch.teacher_logits, tau, tau_squared);
}

/// Meta objective evaluated on the (pre-updated) student.
inline Tensor validation_objective(std::span<const Tensor> theta, const StepBatch& batch,
                                   MetaObjective objective) {
  Tensor z = mlp_forward(theta, batch.x);
  return objective == MetaObjective::eq8 ? meta_loss(softmax_stable(z, 1), batch.y)
                                         : ce_loss(z, batch.y);
}

/// Phase (iii): one student update at fixed temperatures. The temperatures
/// enter as constants, so this is also the plain fixed-temperature KD step.
/// Returns (loss, grad norm, correct count).
struct KdStepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double correct = 0.0;
};

template <class StudentOpt>
KdStepResult kd_step(StudentParams& student, const StepBatch& batch, double tau_s, double tau_t,
                     StudentOpt& student_opt, bool tau_squared) {
  KdStepResult r;
  GradMap g;
  {
    TapeScope scope;
    Tensor z = mlp_forward(student, batch.x);
    Tensor loss = kd_loss(z, batch.teacher_logits, Temperatures::fixed(tau_s, tau_t), tau_squared);
    r.loss = loss.item();
    g = backward(loss, std::span<const Tensor>(student.tensors));
    r.correct = static_cast<double>(z.size(0) - count_incorrect(z, batch.y));
  }
  r.grad_norm = g.norm();
  if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm)) {
    throw NumericalError("kd_step: non-finite loss or gradient (loss=" + std::to_string(r.loss) +
                         ", grad norm=" + std::to_string(r.grad_norm) + ")");
  }
  optimizer_step(student.tensors, g, student_opt);
  return r;
}

/// One step of the bilevel procedure:
///  (i)   pre-update theta' = theta - alpha * dL_t/dtheta (plain step, discarded),
///  (ii)  update the meta-parameters with the gradient of the meta objective at theta',
///  (iii) update the original theta with the student optimizer at the new temperatures.
/// With meta_active false only phase (iii) runs.
template <class StudentOpt>
MetaStepTrace mkd_step(StudentParams& student, MetaParams& meta, const StepBatch& train,
                       const StepBatch& val, StudentOpt& student_opt, MetaOptimizer& meta_opt,
                       const MkdStepOptions& opt) {
  MetaStepTrace trace;
  trace.step = opt.step;
  std::vector<Tensor> meta_leaves = meta.tensors();

  double tau_s = 0.0, tau_t = 0.0;
  auto current_temperatures = [&] {
    NoGradGuard ng;
    Temperatures tau = tempnet_forward(meta);
    tau_s = tau.student();
    tau_t = tau.teacher();
    double lo = meta.tau_init - 0.5, hi = meta.tau_init + 0.5;
    if (!(tau_s > lo && tau_s < hi && tau_t > lo && tau_t < hi)) {
      throw InvariantViolation("mkd_step: temperatures (" + std::to_string(tau_s) + ", " +
                               std::to_string(tau_t) + ") left the open interval around tau_init");
    }
  };
  KdStepResult r;
  auto update_student = [&] {
    current_temperatures();
    r = kd_step(student, train, tau_s, tau_t, student_opt, opt.tau_squared);
  };

  if (opt.meta_active) {
    auto train_loss = [&](std::span<const Tensor> theta) {
      return distill_train_loss(theta, train, tempnet_forward(meta), opt.tau_squared);
    };
    auto val_loss = [&](std::span<const Tensor> theta) {
      return validation_objective(theta, val, opt.objective);
    };
    MetaGradResult mg = bilevel_step(student.tensors, meta_leaves, train_loss, val_loss, opt.alpha,
                                     opt.mode, opt.fd_eps, meta_opt, update_student);
    trace.meta_grad_norm = mg.grad.norm();
    trace.val_loss = mg.val_loss;
  } else {
    update_student();
  }

  trace.tau_s = tau_s;
  trace.tau_t = tau_t;

  trace.train_loss = r.loss;
  trace.student_grad_norm = r.grad_norm;
  trace.train_correct = r.correct;
  return trace;
}

}  // namespace mkd
