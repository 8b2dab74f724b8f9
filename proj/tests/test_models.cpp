#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mkd/autograd.hpp"
#include "mkd/gradcheck.hpp"
#include "mkd/models.hpp"

using namespace mkd;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Straight loops over the raw arrays, no tensor ops involved.
std::vector<double> loop_forward(const MlpParams& p, const std::vector<double>& x, std::size_t n) {
  std::vector<double> h = x;
  std::size_t in = p.config.input_dim;
  for (std::size_t k = 0; k < p.num_layers(); ++k) {
    auto w = p.tensors[2 * k].data();
    auto b = p.tensors[2 * k + 1].data();
    std::size_t out = p.tensors[2 * k].shape()[1];
    std::vector<double> next(n * out);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < in; ++q) s += h[i * in + q] * w[q * out + j];
        s += b[j];
        if (k + 1 < p.num_layers()) s = s > 0.0 ? s : 0.0;
        next[i * out + j] = s;
      }
    }
    h = std::move(next);
    in = out;
  }
  return h;
}

std::pair<double, double> loop_temperatures(const MetaParams& m) {
  auto e = m.embedding.data();
  auto w1 = m.w1.data();
  auto b1 = m.b1.data();
  auto w2 = m.w2.data();
  auto b2 = m.b2.data();
  double hidden[16];
  for (int j = 0; j < 16; ++j) {
    double s = b1[j];
    for (int q = 0; q < 8; ++q) s += e[q] * w1[q * 16 + j];
    hidden[j] = s > 0.0 ? s : 0.0;
  }
  double tau[2];
  for (int j = 0; j < 2; ++j) {
    double s = b2[j];
    for (int q = 0; q < 16; ++q) s += hidden[q] * w2[q * 2 + j];
    tau[j] = m.tau_init + 1.0 / (1.0 + std::exp(-s)) - 0.5;
  }
  return {tau[0], tau[1]};
}

}  // namespace

TEST(MlpInit, SameSeedSameParameters) {
  MlpParams a = mlp_init({7, {5, 4}, 3}, 42);
  MlpParams b = mlp_init({7, {5, 4}, 3}, 42);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].values(), b.tensors[i].values());
  }
  MlpParams c = mlp_init({7, {5, 4}, 3}, 43);
  EXPECT_NE(a.tensors[0].values(), c.tensors[0].values());
}

TEST(MlpInit, BiasesAreZeroAndShapesFollowConfig) {
  MlpParams p = mlp_init({7, {5, 4}, 3}, 1);
  ASSERT_EQ(p.num_layers(), 3u);
  EXPECT_EQ(p.tensors[0].shape(), (Shape{7, 5}));
  EXPECT_EQ(p.tensors[2].shape(), (Shape{5, 4}));
  EXPECT_EQ(p.tensors[4].shape(), (Shape{4, 3}));
  for (std::size_t k = 0; k < 3; ++k) {
    for (double v : p.tensors[2 * k + 1].data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(MlpInit, WeightsInsideGlorotBound) {
  MlpParams p = mlp_init({30, {20}, 10}, 5);
  double bound = std::sqrt(6.0 / 50.0);
  for (double v : p.tensors[0].data()) {
    EXPECT_GE(v, -bound);
    EXPECT_LE(v, bound);
  }
}

TEST(MlpInit, SampleVarianceMatchesUniformLaw) {
  MlpParams p = mlp_init({256, {}, 256}, 9);
  auto w = p.tensors[0].data();
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  double expected = 2.0 / 512.0;
  EXPECT_NEAR(var, expected, 0.2 * expected);
}

TEST(MlpInit, InvalidConfigRejected) {
  EXPECT_THROW(mlp_init({0, {4}, 3}, 1), ConfigError);
  EXPECT_THROW(mlp_init({4, {0}, 3}, 1), ConfigError);
  EXPECT_THROW(mlp_init({4, {4}, 0}, 1), ConfigError);
}

TEST(MlpForward, ZeroWeightsZeroInputGiveZeroLogits) {
  MlpParams p = mlp_init({3, {4}, 2}, 1);
  for (auto& t : p.tensors) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  Tensor z = mlp_forward(p, Tensor::zeros({5, 3}));
  EXPECT_EQ(z.shape(), (Shape{5, 2}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityLayerReturnsInput) {
  MlpParams p = mlp_init({3, {}, 3}, 1);
  auto w = p.tensors[0].mutable_data();
  for (std::size_t i = 0; i < 9; ++i) w[i] = i % 4 == 0 ? 1.0 : 0.0;
  Tensor x = Tensor::matrix({{1.5, -2.0, 0.25}, {0.0, 3.0, -7.0}});
  EXPECT_EQ(mlp_forward(p, x).values(), x.values());
}

TEST(MlpForward, MatchesLoopImplementation) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    MlpParams p = mlp_init({6, {9, 5}, 4}, 100 + trial);
    for (std::size_t k = 1; k < p.tensors.size(); k += 2) {
      auto b = p.tensors[k].mutable_data();
      auto r = random_values(b.size(), rng, 0.3);
      std::copy(r.begin(), r.end(), b.begin());
    }
    auto xv = random_values(7 * 6, rng, 2.0);
    Tensor z = mlp_forward(p, Tensor({7, 6}, xv));
    auto oracle = loop_forward(p, xv, 7);
    ASSERT_EQ(z.numel(), oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(z[i], oracle[i], 1e-12);
  }
}

TEST(MlpForward, DeterministicAndPure) {
  MlpParams p = mlp_init({4, {8}, 3}, 3);
  std::mt19937_64 rng(4);
  Tensor x({10, 4}, random_values(40, rng));
  auto before = x.values();
  Tensor a = mlp_forward(p, x);
  Tensor b = mlp_forward(p, x);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(x.values(), before);
}

TEST(MlpForward, WrongInputWidthIsDimensionError) {
  MlpParams p = mlp_init({4, {8}, 3}, 3);
  EXPECT_THROW(mlp_forward(p, Tensor::zeros({2, 5})), DimensionError);
  EXPECT_THROW(mlp_forward(p, Tensor::zeros({4})), DimensionError);
}

TEST(MlpForward, RecordsOnTapeOnlyWhenParamsRequireGrad) {
  MlpParams p = mlp_init({4, {8}, 3}, 3);
  TapeScope scope;
  mlp_forward(p, Tensor::zeros({2, 4}));
  EXPECT_GT(scope.tape().size(), 0u);
  scope.tape().clear();
  MlpParams frozen = p.copy(false);
  mlp_forward(frozen, Tensor::zeros({2, 4}));
  EXPECT_EQ(scope.tape().size(), 0u);
}

TEST(TempNet, ZeroHeadGivesTauInitExactly) {
  for (double tau : {4.0, 1.0, 0.75, 2.5}) {
    Temperatures t = tempnet_forward(meta_init(tau, 7));
    EXPECT_EQ(t.student(), tau);
    EXPECT_EQ(t.teacher(), tau);
  }
}

TEST(TempNet, TauInitAtOrBelowHalfRejected) {
  EXPECT_THROW(meta_init(0.5, 1), ConfigError);
  EXPECT_THROW(meta_init(0.1, 1), ConfigError);
  EXPECT_THROW(meta_init(-3.0, 1), ConfigError);
}

TEST(TempNet, StructureMatchesEmbeddingAndHiddenWidths) {
  MetaParams m = meta_init(4.0, 1);
  EXPECT_EQ(m.embedding.shape(), (Shape{8}));
  EXPECT_EQ(m.w1.shape(), (Shape{8, 16}));
  EXPECT_EQ(m.b1.shape(), (Shape{16}));
  EXPECT_EQ(m.w2.shape(), (Shape{16, 2}));
  EXPECT_EQ(m.b2.shape(), (Shape{2}));
}

TEST(TempNet, SaturatedOutputsStayBelowSupremum) {
  MetaParams m = meta_init(4.0, 2);
  m.b2.mutable_data()[0] = 1e6;
  m.b2.mutable_data()[1] = -1e6;
  Temperatures t = tempnet_forward(m);
  EXPECT_LT(t.student(), 4.5);
  EXPECT_GT(t.student(), 4.5 - 1e-12);
  EXPECT_GT(t.teacher(), 3.5);
  EXPECT_LT(t.teacher(), 3.5 + 1e-12);
}

TEST(TempNet, MatchesHandEvaluation) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    MetaParams m = meta_init(4.0, 50 + trial);
    for (Tensor t : m.tensors()) {
      auto r = random_values(t.numel(), rng, 1.0);
      std::copy(r.begin(), r.end(), t.mutable_data().begin());
    }
    auto [ts, tt] = loop_temperatures(m);
    Temperatures t = tempnet_forward(m);
    EXPECT_NEAR(t.student(), ts, 1e-12);
    EXPECT_NEAR(t.teacher(), tt, 1e-12);
  }
}

TEST(TempNet, StudentTemperatureSlopeInHeadBiasIsQuarter) {
  MetaParams m = meta_init(4.0, 3);
  TapeScope scope;
  Temperatures t = tempnet_forward(m);
  GradMap g = backward(t.tau_s, {m.b2});
  EXPECT_DOUBLE_EQ(g[m.b2][0], 0.25);
  EXPECT_DOUBLE_EQ(g[m.b2][1], 0.0);
}

TEST(TempNet, RangeHoldsForArbitraryFiniteParameters) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    double tau_init = 0.6 + 9.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    double scale = std::pow(10.0, std::uniform_real_distribution<double>(-2, 4)(rng));
    MetaParams m = meta_init(tau_init, trial);
    for (Tensor t : m.tensors()) {
      auto r = random_values(t.numel(), rng, scale);
      std::copy(r.begin(), r.end(), t.mutable_data().begin());
    }
    Temperatures t = tempnet_forward(m);
    for (double v : {t.student(), t.teacher()}) {
      EXPECT_GT(v, tau_init - 0.5);
      EXPECT_LT(v, tau_init + 0.5);
    }
  }
}

TEST(TempNet, GradientsPassFiniteDifferenceCheck) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    MetaParams m = meta_init(3.0, 200 + trial);
    for (Tensor t : {m.w2, m.b2, m.b1}) {
      auto r = random_values(t.numel(), rng, 0.7);
      std::copy(r.begin(), r.end(), t.mutable_data().begin());
    }
    // Weighted combination so both outputs contribute.
    auto f = [&] {
      Temperatures t = tempnet_forward(m);
      return t.tau_s * 0.7 + t.tau_t * 1.3;
    };
    std::vector<Tensor> leaves = m.tensors();
    GradMap analytic;
    {
      TapeScope scope;
      analytic = backward(f(), std::span<const Tensor>(leaves));
    }
    GradMap numeric = finite_difference_grad([&] { return f().item(); }, std::span<Tensor>(leaves));
    for (const auto& t : leaves) {
      EXPECT_LE(relative_error(analytic[t].data(), numeric[t].data()), 1e-5);
    }
  }
}
