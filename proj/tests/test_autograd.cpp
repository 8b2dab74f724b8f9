#include <gtest/gtest.h>

#include <random>

#include "mkd/autograd.hpp"
#include "mkd/gradcheck.hpp"
#include "mkd/models.hpp"

using namespace mkd;

namespace {

void expect_values(const Tensor& t, std::vector<double> expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "index " << i;
}

}  // namespace

TEST(Primitives, MatmulHandArithmetic) {
  Tensor r = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  expect_values(r, {3, 7});
}

TEST(Primitives, ReluDefinition) { expect_values(relu(Tensor::vector({-1, 0, 2})), {0, 0, 2}); }

TEST(Primitives, SoftmaxSymmetric) { expect_values(softmax_stable(Tensor::vector({0, 0}), 0), {0.5, 0.5}); }

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST(Primitives, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::vector({-2.0})), DomainError);
}

TEST(Primitives, MaxAlongAxisTiesGoToLowestIndex) {
  Tensor x = Tensor::matrix({{1, 3, 3}, {2, 0, 1}}).requires_grad_();
  TapeScope scope;
  Tensor m = max_along_axis(x, 1);
  expect_values(m, {3, 2});
  GradMap g = backward(sum(m), {x});
  expect_values(g[x], {0, 1, 0, 1, 0, 0});
}

TEST(Primitives, ConcatAndSliceRoundTrip) {
  Tensor a = Tensor::matrix({{1, 2}});
  Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  Tensor c = concat({a, b}, 0);
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  expect_values(slice(c, 0, 1, 3), {3, 4, 5, 6});
}

TEST(Primitives, RecordsOnlyWhenInputsRequireGrad) {
  TapeScope scope;
  Tensor a = Tensor::vector({1, 2});
  Tensor b = Tensor::vector({3, 4}).requires_grad_();
  (void)(a * a);
  EXPECT_EQ(scope.tape().size(), 0u);
  (void)(a * b);
  EXPECT_EQ(scope.tape().size(), 1u);
  {
    NoGradGuard ng;
    (void)(b * b);
  }
  EXPECT_EQ(scope.tape().size(), 1u);
}

TEST(Backward, SquareAtThree) {
  TapeScope scope;
  Tensor x = Tensor::scalar(3.0).requires_grad_();
  EXPECT_DOUBLE_EQ(backward(x * x, {x})[x].item(), 6.0);
}

TEST(Backward, SecondDerivativeOfCube) {
  TapeScope scope;
  Tensor x = Tensor::scalar(2.0).requires_grad_();
  GradMap g = backward(x * x * x, {x}, true);
  EXPECT_DOUBLE_EQ(g[x].item(), 12.0);
  EXPECT_DOUBLE_EQ(backward(g[x], {x})[x].item(), 12.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  TapeScope scope;
  Tensor x = Tensor::vector({1, 2}).requires_grad_();
  EXPECT_THROW(backward(x * x, {x}), ContractError);
}

TEST(Backward, UntrackedParameterIsUnreachable) {
  TapeScope scope;
  Tensor x = Tensor::scalar(1.0).requires_grad_();
  Tensor y = Tensor::scalar(2.0);
  EXPECT_THROW(backward(x * y, {y}), UnreachableParameterError);
}

TEST(Backward, DisconnectedParameterGetsZeros) {
  TapeScope scope;
  Tensor x = Tensor::vector({1, 2}).requires_grad_();
  Tensor unused = Tensor::zeros({2, 3}).requires_grad_();
  GradMap g = backward(sum(x * x), {x, unused});
  ASSERT_TRUE(g.contains(unused));
  EXPECT_EQ(g[unused].shape(), (Shape{2, 3}));
  for (double v : g[unused].data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  TapeScope scope;
  Tensor x = Tensor::scalar(1.5).requires_grad_();
  Tensor y = x * x;
  // d/dx (y + y*x) = 2x + 3x^2
  EXPECT_NEAR(backward(y + y * x, {x})[x].item(), 3.0 + 3 * 2.25, 1e-15);
}

TEST(Backward, VisitsEachNodeOnce) {
  TapeScope scope;
  Tensor x = Tensor::scalar(2.0).requires_grad_();
  int calls = 0;
  Tensor y = make_result("probe", {}, {x.item()}, {x}, [&calls](const Tensor& g) {
    ++calls;
    return std::vector<Tensor>{g};
  });
  Tensor loss = y * y + y;
  backward(loss, {x});
  EXPECT_EQ(calls, 1);
}

TEST(Backward, ClearedTapeTurnsTensorsIntoLeaves) {
  Tensor x = Tensor::scalar(2.0).requires_grad_();
  Tensor y;
  {
    TapeScope scope;
    y = x * x;
  }
  TapeScope fresh;
  // y is no longer on any live tape: it behaves as a leaf.
  GradMap g = backward(y * x, {x, y});
  EXPECT_DOUBLE_EQ(g[x].item(), 4.0);
  EXPECT_DOUBLE_EQ(g[y].item(), 2.0);
}

TEST(SoftmaxProperties, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(4 * 7);
    for (double& x : v) x = u(rng);
    Tensor z({4, 7}, v);
    Tensor p = softmax_stable(z, 1);
    double c = u(rng) * 10;
    Tensor q = softmax_stable(add_scalar(z, c), 1);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        s += p.at(i, j);
        EXPECT_GT(p.at(i, j), 0.0);
        EXPECT_LT(p.at(i, j), 1.0);
        EXPECT_NEAR(p.at(i, j), q.at(i, j), 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(SoftmaxProperties, LargeLogitsDoNotOverflow) {
  Tensor p = softmax_stable(Tensor::vector({1000.0, 1001.0}), 0);
  EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(FiniteDifference, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0);
  std::vector<Tensor> params{x};
  GradMap g = finite_difference_grad([&] { return x.item() * x.item(); }, std::span<Tensor>(params));
  EXPECT_NEAR(g[x].item(), 6.0, 1e-8);
}

TEST(FiniteDifference, SigmoidSlopeAtZero) {
  Tensor x = Tensor::zeros({3});
  std::vector<Tensor> params{x};
  GradMap g = finite_difference_grad([&] { return sum(sigmoid(x)).item(); }, std::span<Tensor>(params));
  for (double v : g[x].data()) EXPECT_NEAR(v, 0.25, 1e-9);
}

TEST(FiniteDifference, NonFiniteValueIsEvaluationError) {
  Tensor x = Tensor::scalar(0.0);
  std::vector<Tensor> params{x};
  // log(-h) is NaN on the backward side of the stencil.
  EXPECT_THROW(finite_difference_grad([&] { return std::log(x.item()); }, std::span<Tensor>(params)),
               EvaluationError);
}

TEST(FiniteDifference, AgreesWithBackwardOnTwoLayerMlp) {
  MlpParams p = mlp_init({4, {5}, 3}, 17);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> xv(6 * 4);
  for (double& v : xv) v = u(rng);
  Tensor x({6, 4}, xv);
  Tensor y = one_hot({0, 1, 2, 0, 1, 2}, 3);
  auto loss = [&] { return ce_loss(mlp_forward(p, x), y); };
  GradMap analytic;
  {
    TapeScope scope;
    analytic = backward(loss(), std::span<const Tensor>(p.tensors));
  }
  GradMap numeric = finite_difference_grad([&] { return loss().item(); }, std::span<Tensor>(p.tensors));
  for (const auto& t : p.tensors) {
    EXPECT_LE(relative_error(analytic[t].data(), numeric[t].data()), 1e-5);
  }
}

TEST(GradcheckSuite, EveryPrimitivePassesFirstOrder) {
  for (const auto& row : run_first_order_checks(primitive_cases(), 100)) {
    EXPECT_TRUE(row.passed) << row.name << " error " << row.error;
  }
}

TEST(GradcheckSuite, SecondOrderPolynomials) {
  for (const auto& row : run_second_order_checks()) {
    EXPECT_TRUE(row.passed) << row.name << " error " << row.error;
  }
}

TEST(GradcheckSuite, InjectedSignFlipIsReported) {
  GradCase bad{"bad_square",
               {{3}},
               {},
               [](const std::vector<Tensor>& x) {
                 Tensor in = x[0];
                 std::vector<double> v(in.values());
                 for (double& e : v) e *= e;
                 Tensor sq = make_result("bad_square", in.shape(), v, {in}, [in](const Tensor& g) {
                   return std::vector<Tensor>{scalar_mul(g * in, -2.0)};  // wrong sign
                 });
                 return sum(sq);
               }};
  auto rows = run_first_order_checks({bad}, 5);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].passed);
  EXPECT_EQ(rows[0].name, "bad_square");
  EXPECT_GT(rows[0].error, 1.0);
}
