#pragma once

// Finite-difference oracles and the gradient self-check suite.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mkd/autograd.hpp"
#include "mkd/losses.hpp"
#include "mkd/meta.hpp"
#include "mkd/models.hpp"

namespace mkd {

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every component
/// of every tensor in `params`. `f` reads the parameters' current values.
template <class F>
GradMap finite_difference_grad(F&& f, std::span<Tensor> params, double h = 1e-6) {
  if (!(h > 0.0)) throw ContractError("finite_difference_grad: step must be positive");
  NoGradGuard ng;
  auto eval = [&]() {
    double v = static_cast<double>(f());
    if (!std::isfinite(v)) throw EvaluationError("finite_difference_grad: non-finite function value");
    return v;
  };
  GradMap out;
  for (auto& p : params) {
    auto data = p.mutable_data();
    std::vector<double> g(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
      double saved = data[k];
      data[k] = saved + h;
      double fp = eval();
      data[k] = saved - h;
      double fm = eval();
      data[k] = saved;
      g[k] = (fp - fm) / (2.0 * h);
    }
    out.insert(p, Tensor(p.shape(), std::move(g)));
  }
  return out;
}

/// |a - b| / max(|a|, |b|, floor), with norms taken over the whole tensor.
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-6) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline std::vector<double> flatten(const GradMap& g) {
  std::vector<double> out;
  for (const auto& t : g.grads()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  return dot / std::sqrt(na * nb);
}

/// Input domain for a randomly generated gradcheck operand.
enum class Domain { symmetric, positive, away_from_zero };

struct GradCase {
  std::string name;
  std::vector<Shape> shapes;
  std::vector<Domain> domains;  // one per shape; missing entries mean symmetric
  std::function<Tensor(const std::vector<Tensor>&)> loss;
};

struct CheckRow {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline Tensor random_tensor(const Shape& shape, Domain domain, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = u(rng);
    if (domain == Domain::positive) x = 0.1 + std::abs(x);
    if (domain == Domain::away_from_zero) x = (x < 0 ? -0.5 : 0.5) + 0.75 * x;
  }
  return Tensor(shape, std::move(v));
}

/// sum(f(x) * w) for a fixed random weighting w, so every output entry matters.
inline Tensor weighted(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(y * random_tensor(y.shape(), Domain::symmetric, rng));
}

}  // namespace detail

/// One case per differentiable primitive plus the three losses.
inline std::vector<GradCase> primitive_cases() {
  using V = std::vector<Tensor>;
  std::vector<GradCase> c;
  auto W = [](const Tensor& y) { return detail::weighted(y, 7); };
  c.push_back({"matmul", {{3, 4}, {4, 2}}, {}, [=](const V& x) { return W(matmul(x[0], x[1])); }});
  c.push_back({"add", {{3, 4}, {3, 4}}, {}, [=](const V& x) { return W(x[0] + x[1]); }});
  c.push_back({"add_broadcast", {{3, 4}, {4}}, {}, [=](const V& x) { return W(x[0] + x[1]); }});
  c.push_back({"sub", {{3, 4}, {3, 4}}, {}, [=](const V& x) { return W(x[0] - x[1]); }});
  c.push_back({"mul", {{3, 4}, {3, 4}}, {}, [=](const V& x) { return W(x[0] * x[1]); }});
  c.push_back({"div", {{3, 4}, {3, 4}}, {Domain::symmetric, Domain::away_from_zero},
               [=](const V& x) { return W(x[0] / x[1]); }});
  c.push_back({"scalar_mul", {{5}}, {}, [=](const V& x) { return W(scalar_mul(x[0], -1.7)); }});
  c.push_back({"add_scalar", {{5}}, {}, [=](const V& x) { return W(add_scalar(x[0], 0.3)); }});
  c.push_back({"relu", {{4, 5}}, {}, [=](const V& x) { return W(relu(x[0])); }});
  c.push_back({"sigmoid", {{4, 5}}, {}, [=](const V& x) { return W(sigmoid(x[0])); }});
  c.push_back({"exp", {{4, 5}}, {}, [=](const V& x) { return W(exp(x[0])); }});
  c.push_back({"log", {{4, 5}}, {Domain::positive}, [=](const V& x) { return W(log(x[0])); }});
  c.push_back({"sum", {{3, 4}}, {}, [=](const V& x) { return sum(x[0]) * sum(x[0]); }});
  c.push_back({"sum_axis", {{3, 4}}, {}, [=](const V& x) { return W(sum(x[0], 1)); }});
  c.push_back({"mean", {{3, 4}}, {}, [=](const V& x) { return mean(x[0]) * mean(x[0]); }});
  c.push_back({"mean_axis", {{3, 4}}, {}, [=](const V& x) { return W(mean(x[0], 0)); }});
  c.push_back({"max_along_axis", {{4, 5}}, {}, [=](const V& x) { return W(max_along_axis(x[0], 1)); }});
  c.push_back({"broadcast", {{1, 4}}, {}, [=](const V& x) { return W(broadcast_to(x[0], {3, 4})); }});
  c.push_back({"sum_to", {{3, 4}}, {}, [=](const V& x) { return W(sum_to(x[0], {4})); }});
  c.push_back({"reshape", {{3, 4}}, {}, [=](const V& x) { return W(reshape(x[0], {2, 6})); }});
  c.push_back({"transpose", {{3, 4}}, {}, [=](const V& x) { return W(transpose(x[0])); }});
  c.push_back({"concat", {{2, 3}, {1, 3}}, {}, [=](const V& x) { return W(concat({x[0], x[1]}, 0)); }});
  c.push_back({"slice", {{4, 3}}, {}, [=](const V& x) { return W(slice(x[0], 1, 1, 3)); }});
  c.push_back({"clamp", {{4, 5}}, {}, [=](const V& x) { return W(clamp(x[0], -1.0, 1.0)); }});
  c.push_back({"softmax_stable", {{3, 5}}, {}, [=](const V& x) { return W(softmax_stable(x[0], 1)); }});
  c.push_back({"log_softmax", {{3, 5}}, {}, [=](const V& x) { return W(log_softmax(x[0], 1)); }});
  auto fixed = [](const Shape& shape, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    return scalar_mul(detail::random_tensor(shape, Domain::symmetric, rng), scale);
  };
  Tensor teacher = fixed({4, 5}, 11, 2.0);
  Tensor soft_targets = softmax_stable(fixed({4, 5}, 13, 1.0), 1);
  Tensor labels = one_hot({0, 1, 2, 3}, 5);
  c.push_back({"kd_loss", {{4, 5}, {}, {}}, {Domain::symmetric, Domain::positive, Domain::positive},
               [teacher](const V& x) { return kd_loss(x[0], teacher, {x[1], x[2]}); }});
  c.push_back({"kd_loss_tau_squared", {{4, 5}, {}, {}},
               {Domain::symmetric, Domain::positive, Domain::positive},
               [teacher](const V& x) { return kd_loss(x[0], teacher, {x[1], x[2]}, true); }});
  c.push_back({"ce_loss", {{4, 5}}, {}, [soft_targets](const V& x) { return ce_loss(x[0], soft_targets); }});
  c.push_back({"meta_loss", {{4, 5}}, {},
               [labels](const V& x) { return meta_loss(softmax_stable(x[0], 1), labels); }});
  return c;
}

/// Checks reverse-mode gradients of every case against central differences
/// over `trials` seeded random inputs. Reports the worst relative error.
inline std::vector<CheckRow> run_first_order_checks(const std::vector<GradCase>& cases,
                                                    std::size_t trials = 100, double h = 1e-6,
                                                    double tol = 1e-5) {
  std::vector<CheckRow> rows;
  for (const auto& gc : cases) {
    CheckRow row{gc.name, 0.0, tol, true, ""};
    for (std::size_t trial = 0; trial < trials; ++trial) {
      std::mt19937_64 rng(1000 + trial);
      std::vector<Tensor> inputs;
      for (std::size_t k = 0; k < gc.shapes.size(); ++k) {
        Domain d = k < gc.domains.size() ? gc.domains[k] : Domain::symmetric;
        Tensor t = detail::random_tensor(gc.shapes[k], d, rng);
        inputs.push_back(t.requires_grad_());
      }
      GradMap analytic;
      {
        TapeScope scope;
        analytic = backward(gc.loss(inputs), std::span<const Tensor>(inputs));
      }
      GradMap numeric = finite_difference_grad([&] { return gc.loss(inputs).item(); },
                                               std::span<Tensor>(inputs), h);
      double err = relative_error(flatten(analytic), flatten(numeric));
      if (!(err <= row.error)) row.error = err;  // also captures NaN
    }
    row.passed = row.error <= tol;
    rows.push_back(row);
  }
  return rows;
}

/// Second derivatives of polynomial fixtures through create_graph backward,
/// compared with their closed forms.
inline std::vector<CheckRow> run_second_order_checks(double tol = 1e-8) {
  std::vector<CheckRow> rows;
  auto second = [](const std::function<Tensor(const Tensor&)>& f, double x0) {
    TapeScope scope;
    Tensor x = Tensor::scalar(x0).requires_grad_();
    GradMap g = backward(f(x), {x}, true);
    return backward(g[x], {x})[x].item();
  };
  struct Poly {
    std::string name;
    std::function<Tensor(const Tensor&)> f;
    std::function<double(double)> d2;
  };
  std::vector<Poly> polys = {
      {"d2(x^3)", [](const Tensor& x) { return x * x * x; }, [](double x) { return 6 * x; }},
      {"d2(x^4 - 3x^2)", [](const Tensor& x) { return x * x * x * x - scalar_mul(x * x, 3.0); },
       [](double x) { return 12 * x * x - 6; }},
      {"d2(2x^5 + x)", [](const Tensor& x) { return scalar_mul(x * x * x * x * x, 2.0) + x; },
       [](double x) { return 40 * x * x * x; }},
  };
  for (const auto& p : polys) {
    CheckRow row{p.name, 0.0, tol, true, ""};
    for (double x0 : {-1.5, -0.3, 0.0, 0.7, 2.0}) {
      row.error = std::max(row.error, std::abs(second(p.f, x0) - p.d2(x0)));
    }
    row.passed = row.error <= tol;
    rows.push_back(row);
  }
  // Mixed partial of x^2 y: d/dy (d/dx) = 2x.
  {
    CheckRow row{"d2(x^2 y)/dxdy", 0.0, tol, true, ""};
    for (double x0 : {-1.0, 0.5, 1.5}) {
      TapeScope scope;
      Tensor x = Tensor::scalar(x0).requires_grad_();
      Tensor y = Tensor::scalar(0.8).requires_grad_();
      GradMap g = backward(x * x * y, {x, y}, true);
      double mixed = backward(g[x], {y})[y].item();
      row.error = std::max(row.error, std::abs(mixed - 2 * x0));
    }
    row.passed = row.error <= tol;
    rows.push_back(row);
  }
  return rows;
}

/// Scalar system L_t = (theta - phi)^2 / 2, L_v = theta'^2 / 2 at theta = 1,
/// phi = 0: theta' = theta - alpha (theta - phi) and dL_v/dphi = alpha theta'.
struct ToyMetaResult {
  double exact = 0.0;
  double fd = 0.0;
};

inline ToyMetaResult toy_meta_gradient(double theta0 = 1.0, double phi0 = 0.0, double alpha = 0.1) {
  Tensor theta = Tensor::scalar(theta0).requires_grad_();
  Tensor phi = Tensor::scalar(phi0).requires_grad_();
  std::vector<Tensor> student{theta}, meta{phi};
  auto lt = [&](std::span<const Tensor> th) {
    Tensor d = th[0] - phi;
    return scalar_mul(d * d, 0.5);
  };
  auto lv = [](std::span<const Tensor> th) { return scalar_mul(th[0] * th[0], 0.5); };
  ToyMetaResult r;
  r.exact = meta_grad_exact(student, meta, lt, lv, alpha).grad[phi].item();
  r.fd = meta_grad_fd(student, meta, lt, lv, alpha).grad[phi].item();
  return r;
}

struct MetaCrossCheck {
  double max_relative_error = 0.0;
  double min_cosine = 1.0;
  std::size_t instances = 0;
};

/// Random small student + temperature network instance for exact-vs-fd checks.
struct MetaInstance {
  StudentParams student;
  MetaParams meta;
  StepBatch train;
  StepBatch val;
};

inline MetaInstance random_meta_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t d = 5, c = 4, n = 8;
  MetaInstance inst;
  inst.student = mlp_init({d, {6}, c}, seed);
  inst.meta = meta_init(2.0, seed + 1);
  for (Tensor t : {inst.meta.w2, inst.meta.b2}) {
    for (double& v : t.mutable_data()) v = 0.5 * u(rng);
  }
  auto rand_mat = [&](std::size_t r, std::size_t cols, double scale) {
    std::vector<double> v(r * cols);
    for (double& x : v) x = scale * u(rng);
    return Tensor({r, cols}, std::move(v));
  };
  std::vector<int> train_labels(n), val_labels(n);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(c) - 1);
  for (auto& l : train_labels) l = lab(rng);
  for (auto& l : val_labels) l = lab(rng);
  inst.train = {rand_mat(n, d, 1.5), one_hot(train_labels, c), rand_mat(n, c, 3.0)};
  inst.val = {rand_mat(n, d, 1.5), one_hot(val_labels, c), Tensor()};
  return inst;
}

inline MetaGradResult instance_meta_grad(const MetaInstance& inst, MetaGradMode mode,
                                         MetaObjective objective, double alpha, double radius = 0.01) {
  auto train_loss = [&](std::span<const Tensor> theta) {
    return distill_train_loss(theta, inst.train, tempnet_forward(inst.meta), false);
  };
  auto val_loss = [&](std::span<const Tensor> theta) {
    return validation_objective(theta, inst.val, objective);
  };
  std::vector<Tensor> meta = inst.meta.tensors();
  std::span<const Tensor> theta(inst.student.tensors);
  return mode == MetaGradMode::exact ? meta_grad_exact(theta, meta, train_loss, val_loss, alpha)
                                     : meta_grad_fd(theta, meta, train_loss, val_loss, alpha, 0.0, radius);
}

/// `radius` is the size of the theta perturbation used by the difference
/// quotient. The truncation error of the symmetric difference shrinks as radius^2.
inline MetaCrossCheck run_meta_cross_check(std::size_t instances = 20, double alpha = 0.1,
                                           MetaObjective objective = MetaObjective::eq8,
                                           double radius = 1e-4) {
  MetaCrossCheck out;
  for (std::size_t i = 0; i < instances; ++i) {
    MetaInstance inst = random_meta_instance(500 + i);
    auto exact = flatten(instance_meta_grad(inst, MetaGradMode::exact, objective, alpha).grad);
    auto fd = flatten(instance_meta_grad(inst, MetaGradMode::fd, objective, alpha, radius).grad);
    out.max_relative_error = std::max(out.max_relative_error, relative_error(exact, fd, 1e-12));
    out.min_cosine = std::min(out.min_cosine, cosine_similarity(exact, fd));
    ++out.instances;
  }
  return out;
}

/// The whole self-check: first order, second order, meta-gradients.
inline std::vector<CheckRow> run_gradcheck_suite(std::size_t trials = 100) {
  std::vector<CheckRow> rows = run_first_order_checks(primitive_cases(), trials);
  for (auto& r : run_second_order_checks()) rows.push_back(r);

  ToyMetaResult toy = toy_meta_gradient();
  rows.push_back({"toy meta-gradient exact (0.09)", std::abs(toy.exact - 0.09), 1e-10,
                  std::abs(toy.exact - 0.09) <= 1e-10, "value=" + std::to_string(toy.exact)});
  rows.push_back({"toy meta-gradient fd (0.09)", std::abs(toy.fd - 0.09), 1e-6,
                  std::abs(toy.fd - 0.09) <= 1e-6, "value=" + std::to_string(toy.fd)});

  MetaCrossCheck mc = run_meta_cross_check();
  rows.push_back({"meta-gradient exact vs fd (relative L2)", mc.max_relative_error, 1e-3,
                  mc.max_relative_error <= 1e-3, std::to_string(mc.instances) + " instances"});
  rows.push_back({"meta-gradient exact vs fd (1 - cosine)", 1.0 - mc.min_cosine, 1e-3,
                  mc.min_cosine >= 0.999, "min cosine=" + std::to_string(mc.min_cosine)});
  return rows;
}

}  // namespace mkd
