#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mkd/gradcheck.hpp"
#include "mkd/meta.hpp"

using namespace mkd;

namespace {

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.push_back(t.values());
  return out;
}

SgdState student_sgd(double lr) { return SgdState{lr, 0.9, 5e-4, {}}; }

}  // namespace

TEST(MetaGrad, ScalarToyExact) {
  EXPECT_NEAR(toy_meta_gradient().exact, 0.09, 1e-12);
}

TEST(MetaGrad, ScalarToyFiniteDifference) {
  EXPECT_NEAR(toy_meta_gradient().fd, 0.09, 1e-6);
}

TEST(MetaGrad, ScalarToyOtherPoints) {
  // grad = alpha * (theta - alpha (theta - phi))
  for (auto [theta, phi, alpha] : {std::tuple{2.0, 0.5, 0.3}, std::tuple{-1.0, 1.0, 0.05}}) {
    ToyMetaResult r = toy_meta_gradient(theta, phi, alpha);
    double expected = alpha * (theta - alpha * (theta - phi));
    EXPECT_NEAR(r.exact, expected, 1e-12);
    EXPECT_NEAR(r.fd, expected, 1e-6);
  }
}

TEST(MetaGrad, NoLookaheadMeansZeroGradient) {
  ToyMetaResult r = toy_meta_gradient(1.0, 0.0, 0.0);
  EXPECT_EQ(r.exact, 0.0);
  EXPECT_EQ(r.fd, 0.0);
}

TEST(MetaGrad, PerfectValidationGivesZeroFiniteDifferenceGradient) {
  // theta = phi = 0 puts theta' at the minimum of L_v, so v = 0.
  ToyMetaResult r = toy_meta_gradient(0.0, 0.0, 0.1);
  EXPECT_EQ(r.fd, 0.0);
  EXPECT_EQ(r.exact, 0.0);
}

TEST(MetaGrad, NegativeStepSizeRejected) {
  EXPECT_THROW(toy_meta_gradient(1.0, 0.0, -0.1), ConfigError);
}

TEST(MetaGrad, ExactAgreesWithFiniteDifferenceOnRandomNetworks) {
  MetaCrossCheck r = run_meta_cross_check(5);
  EXPECT_EQ(r.instances, 5u);
  EXPECT_LE(r.max_relative_error, 1e-3);
  EXPECT_GE(r.min_cosine, 0.999);
}

TEST(MetaGrad, DifferenceQuotientErrorShrinksQuadratically) {
  MetaInstance inst = random_meta_instance(500);
  auto exact = flatten(instance_meta_grad(inst, MetaGradMode::exact, MetaObjective::eq8, 0.1).grad);
  double e_coarse = relative_error(
      exact, flatten(instance_meta_grad(inst, MetaGradMode::fd, MetaObjective::eq8, 0.1, 1e-3).grad), 1e-12);
  double e_fine = relative_error(
      exact, flatten(instance_meta_grad(inst, MetaGradMode::fd, MetaObjective::eq8, 0.1, 1e-4).grad), 1e-12);
  EXPECT_GT(e_coarse / e_fine, 50.0);
  EXPECT_LT(e_coarse / e_fine, 200.0);
}

TEST(MetaGrad, CrossEntropyObjectiveAlsoAgrees) {
  MetaCrossCheck r = run_meta_cross_check(3, 0.1, MetaObjective::ce);
  EXPECT_LE(r.max_relative_error, 1e-3);
  EXPECT_GE(r.min_cosine, 0.999);
}

TEST(MetaGrad, ReachesEveryMetaParameter) {
  MetaInstance inst = random_meta_instance(77);
  MetaGradResult g = instance_meta_grad(inst, MetaGradMode::exact, MetaObjective::ce, 0.1);
  for (const auto& t : inst.meta.tensors()) {
    double s = 0.0;
    for (double v : g.grad[t].data()) s += std::abs(v);
    EXPECT_GT(s, 0.0);
  }
}

TEST(BilevelStep, ScalarToyWithPlainMetaUpdate) {
  const double alpha = 0.1, beta = 0.7;
  std::vector<Tensor> theta{Tensor::scalar(1.0).requires_grad_()};
  std::vector<Tensor> phi{Tensor::scalar(0.0).requires_grad_()};
  auto lt = [&](std::span<const Tensor> th) {
    Tensor d = th[0] - phi[0];
    return scalar_mul(d * d, 0.5);
  };
  auto lv = [](std::span<const Tensor> th) { return scalar_mul(th[0] * th[0], 0.5); };
  MetaOptimizer opt = PlainGradientState{beta};
  SgdState sgd{alpha, 0.0, 0.0, {}};
  bilevel_step(theta, phi, lt, lv, alpha, MetaGradMode::exact, 0.0, opt, [&] {
    TapeScope scope;
    GradMap g = backward(lt(theta), std::span<const Tensor>(theta));
    sgd_step(theta, g, sgd);
  });
  double phi_new = -beta * 0.09;
  EXPECT_NEAR(phi[0].item(), phi_new, 1e-12);
  // The student step starts from theta = 1, not from the lookahead 0.9.
  EXPECT_NEAR(theta[0].item(), 1.0 - alpha * (1.0 - phi_new), 1e-12);
}

TEST(MkdStep, FrozenMetaReproducesKdStep) {
  MetaInstance inst = random_meta_instance(3);
  StudentParams kd_student = inst.student.copy(true);
  MetaParams meta = meta_init(4.0, 9);
  auto before = snapshot(meta.tensors());
  SgdState sgd_a = student_sgd(0.05), sgd_b = student_sgd(0.05);
  MetaOptimizer opt = AdamWState{0.0, 0.9, 0.999, 1e-8, 0.0, {}, {}, 0};
  for (std::size_t step = 0; step < 5; ++step) {
    MkdStepOptions o;
    o.alpha = 0.05;
    o.step = step;
    mkd_step(inst.student, meta, inst.train, inst.val, sgd_a, opt, o);
    kd_step(kd_student, inst.train, 4.0, 4.0, sgd_b, false);
  }
  EXPECT_EQ(snapshot(meta.tensors()), before);
  EXPECT_EQ(snapshot(inst.student.tensors), snapshot(kd_student.tensors));
}

TEST(MkdStep, StudentUpdateStartsFromOriginalParameters) {
  MetaInstance inst = random_meta_instance(4);
  StudentParams reference = inst.student.copy(true);
  MetaParams meta = inst.meta.copy();
  SgdState sgd = student_sgd(0.05), sgd_ref = student_sgd(0.05);
  MetaOptimizer opt = AdamWState{};
  std::get<AdamWState>(opt).lr = 0.05;
  MkdStepOptions o;
  o.alpha = 0.05;
  MetaStepTrace tr = mkd_step(inst.student, meta, inst.train, inst.val, sgd, opt, o);
  EXPECT_GT(tr.meta_grad_norm, 0.0);
  Temperatures tau = tempnet_forward(meta);
  EXPECT_EQ(tr.tau_s, tau.student());
  EXPECT_EQ(tr.tau_t, tau.teacher());
  EXPECT_NE(tr.tau_s, tempnet_forward(inst.meta).student());
  kd_step(reference, inst.train, tau.student(), tau.teacher(), sgd_ref, false);
  EXPECT_EQ(snapshot(inst.student.tensors), snapshot(reference.tensors));
}

TEST(MkdStep, AllCorrectValidationOnlyDecaysMetaParameters) {
  MetaInstance inst = random_meta_instance(5);
  const double alpha = 0.05;
  // Label the validation batch with the lookahead student's own predictions.
  std::vector<Tensor> lookahead;
  {
    TapeScope scope;
    Tensor lt = distill_train_loss(inst.student.tensors, inst.train, tempnet_forward(inst.meta), false);
    GradMap g = backward(lt, std::span<const Tensor>(inst.student.tensors));
    NoGradGuard ng;
    for (const auto& t : inst.student.tensors) lookahead.push_back(t - scalar_mul(g[t], alpha));
  }
  Tensor z = mlp_forward(std::span<const Tensor>(lookahead), inst.val.x);
  std::vector<int> labels;
  for (auto k : argmax_rows(z)) labels.push_back(static_cast<int>(k));
  inst.val.y = one_hot(labels, z.size(1));

  AdamWState adam;
  std::vector<std::vector<double>> expected;
  for (const auto& t : inst.meta.tensors()) {
    std::vector<double> v = t.values();
    for (double& x : v) x -= adam.lr * adam.weight_decay * x;
    expected.push_back(v);
  }
  MetaOptimizer opt = adam;
  SgdState sgd = student_sgd(alpha);
  MkdStepOptions o;
  o.alpha = alpha;
  MetaStepTrace tr = mkd_step(inst.student, inst.meta, inst.train, inst.val, sgd, opt, o);
  EXPECT_EQ(tr.meta_grad_norm, 0.0);
  EXPECT_EQ(tr.val_loss, 0.0);
  EXPECT_EQ(snapshot(inst.meta.tensors()), expected);
}

TEST(MkdStep, TemperaturesStayInsideOpenInterval) {
  MetaInstance inst = random_meta_instance(6);
  MetaParams meta = meta_init(1.5, 2);
  SgdState sgd = student_sgd(0.05);
  MetaOptimizer opt = AdamWState{};
  std::get<AdamWState>(opt).lr = 0.5;  // aggressive, to push the sigmoid toward saturation
  for (std::size_t step = 0; step < 60; ++step) {
    MkdStepOptions o;
    o.alpha = 0.05;
    o.step = step;
    MetaStepTrace tr = mkd_step(inst.student, meta, inst.train, inst.val, sgd, opt, o);
    EXPECT_GT(tr.tau_s, 1.0);
    EXPECT_LT(tr.tau_s, 2.0);
    EXPECT_GT(tr.tau_t, 1.0);
    EXPECT_LT(tr.tau_t, 2.0);
    EXPECT_TRUE(std::isfinite(tr.train_loss) && std::isfinite(tr.val_loss));
  }
}

TEST(MkdStep, TrajectoryIsBitwiseReproducible) {
  auto run = [](MetaGradMode mode) {
    MetaInstance inst = random_meta_instance(8);
    SgdState sgd = student_sgd(0.05);
    MetaOptimizer opt = AdamWState{};
    std::get<AdamWState>(opt).lr = 0.01;
    std::vector<double> trace;
    for (std::size_t step = 0; step < 10; ++step) {
      MkdStepOptions o;
      o.alpha = 0.05;
      o.mode = mode;
      MetaStepTrace tr = mkd_step(inst.student, inst.meta, inst.train, inst.val, sgd, opt, o);
      trace.insert(trace.end(), {tr.train_loss, tr.val_loss, tr.tau_s, tr.tau_t, tr.meta_grad_norm});
    }
    return trace;
  };
  EXPECT_EQ(run(MetaGradMode::exact), run(MetaGradMode::exact));
  EXPECT_EQ(run(MetaGradMode::fd), run(MetaGradMode::fd));
}

TEST(MkdStep, NonFiniteInputAbortsBeforeAnyUpdate) {
  MetaInstance inst = random_meta_instance(10);
  inst.train.teacher_logits.mutable_data()[3] = std::nan("");
  auto student_before = snapshot(inst.student.tensors);
  auto meta_before = snapshot(inst.meta.tensors());
  SgdState sgd = student_sgd(0.05);
  MetaOptimizer opt = AdamWState{};
  MkdStepOptions o;
  EXPECT_THROW(mkd_step(inst.student, inst.meta, inst.train, inst.val, sgd, opt, o), Error);
  EXPECT_EQ(snapshot(inst.student.tensors), student_before);
  EXPECT_EQ(snapshot(inst.meta.tensors()), meta_before);
}

TEST(KdStep, NonFiniteGradientIsNumericalError) {
  MetaInstance inst = random_meta_instance(11);
  inst.student.tensors[0].mutable_data()[0] = 1e308;
  inst.train.x.mutable_data()[0] = 1e308;
  SgdState sgd = student_sgd(0.05);
  EXPECT_THROW(kd_step(inst.student, inst.train, 2.0, 2.0, sgd, false), Error);
}
