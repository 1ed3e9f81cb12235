#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ecgcl/error.hpp"
#include "ecgcl/ops.hpp"
#include "ecgcl/optim.hpp"
#include "oracles.hpp"

using namespace ecgcl;

namespace {

Tensor row(std::vector<Real> v) {
  const int n = static_cast<int>(v.size());
  return Tensor(1, 1, n, std::move(v));
}

std::vector<Real> values(Var v) { return v.value().data; }

Tensor random_tensor(std::mt19937_64& rng, int n, int c, int l) {
  std::uniform_real_distribution<float> d(-1, 1);
  Tensor t(n, c, l);
  for (auto& v : t.data) v = d(rng);
  return t;
}

}  // namespace

TEST(Conv1d, IdentityKernel) {
  Graph g;
  Var y = conv1d(g.constant(row({1, 2, 3})), g.constant(row({0, 1, 0})), g.constant(Tensor(1, 1, 1)), 1, 1);
  EXPECT_EQ(values(y), (std::vector<Real>{1, 2, 3}));
}

TEST(Conv1d, BoxFilterStrideTwo) {
  Graph g;
  Var y = conv1d(g.constant(row({1, 1, 1, 1})), g.constant(row({1, 1})), g.constant(Tensor(1, 1, 1)), 2, 0);
  EXPECT_EQ(values(y), (std::vector<Real>{2, 2}));
}

TEST(Conv1d, MatchesLoopOracle) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, 1, 3, 17), w = random_tensor(rng, 5, 3, 3), b = random_tensor(rng, 1, 5, 1);
  Graph g;
  Var y = conv1d(g.constant(x), g.constant(w), g.constant(b), 2, 1);
  const Tensor o = oracle::conv1d(x, w, &b, 2, 1);
  ASSERT_TRUE(y.value().same_shape(o));
  EXPECT_EQ(o.l, 9);
  // 32-bit accumulation: compare against the magnitude of the summed terms
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(y.value().data[i], o.data[i], 1e-5);
}

TEST(Conv1d, OutputLengthLaw) {
  for (int len = 1; len < 30; ++len)
    for (int k = 1; k <= 5; ++k)
      for (int s = 1; s <= 3; ++s)
        for (int p = 0; p <= 2; ++p) {
          const int expect = (len + 2 * p - k) / s + 1;
          if (len + 2 * p - k < 0) continue;
          Graph g;
          Var y = conv1d(g.constant(Tensor(1, 1, len)), g.constant(Tensor(2, 1, k)), Var{}, s, p);
          EXPECT_EQ(y.value().l, expect);
          EXPECT_EQ(y.value().c, 2);
        }
}

TEST(Conv1d, ShapeErrors) {
  Graph g;
  EXPECT_THROW(conv1d(g.constant(Tensor(1, 2, 5)), g.constant(Tensor(1, 3, 3)), Var{}, 1, 0), ShapeError);
  EXPECT_THROW(conv1d(g.constant(Tensor(1, 1, 2)), g.constant(Tensor(1, 1, 5)), Var{}, 1, 0), ShapeError);
}

TEST(ConvTranspose1d, SingleTapExpansion) {
  Graph g;
  Var y = conv_transpose1d(g.constant(row({1})), g.constant(row({1, 1})), Var{}, 2);
  EXPECT_EQ(values(y), (std::vector<Real>{1, 1}));
}

TEST(ConvTranspose1d, StrideInsertion) {
  Graph g;
  Var y = conv_transpose1d(g.constant(row({1, 2})), g.constant(row({1, 0})), Var{}, 2);
  EXPECT_EQ(values(y), (std::vector<Real>{1, 0, 2, 0}));
}

TEST(ConvTranspose1d, MatchesScatterOracle) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(rng, 2, 3, 7), w = random_tensor(rng, 3, 4, 3), b = random_tensor(rng, 1, 4, 1);
  Graph g;
  Var y = conv_transpose1d(g.constant(x), g.constant(w), g.constant(b), 2);
  const Tensor o = oracle::conv_transpose1d(x, w, &b, 2);
  ASSERT_TRUE(y.value().same_shape(o));
  EXPECT_EQ(o.l, (7 - 1) * 2 + 3);
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(y.value().data[i], o.data[i], 1e-5);
}

TEST(ConvTranspose1d, ShapeError) {
  Graph g;
  EXPECT_THROW(conv_transpose1d(g.constant(Tensor(1, 2, 3)), g.constant(Tensor(3, 1, 2)), Var{}, 2), ShapeError);
}

TEST(LinearInterpolate, Examples) {
  Graph g;
  EXPECT_EQ(values(linear_interpolate(g.constant(row({0, 2})), 3)), (std::vector<Real>{0, 1, 2}));
  EXPECT_EQ(values(linear_interpolate(g.constant(row({5, 5, 5})), 7)), std::vector<Real>(7, 5));
  EXPECT_EQ(values(linear_interpolate(g.constant(row({0, 1, 2, 3})), 4)), (std::vector<Real>{0, 1, 2, 3}));
}

TEST(BatchNorm, IdentityStatsInEval) {
  Tensor x(1, 2, 4, std::vector<Real>{1, -1, 1, -1, 2, 0, -2, 0});
  NormStats stats(2);
  Graph g;
  Var y = batchnorm1d(g.constant(x), g.constant(Tensor(1, 2, 1, 1)), g.constant(Tensor(1, 2, 1)), stats, NormMode::Eval);
  const double scale = 1.0 / std::sqrt(1.0 + kNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.value().data[i], x.data[i] * scale, 1e-6);
}

TEST(BatchNorm, ConstantChannelEvalIsZero) {
  NormStats stats(1);
  stats.mean[0] = 3;
  stats.var[0] = 0;
  Graph g;
  Var y = batchnorm1d(g.constant(Tensor(1, 1, 5, 3)), g.constant(Tensor(1, 1, 1, 1)), g.constant(Tensor(1, 1, 1)),
                      stats, NormMode::Eval);
  for (Real v : y.value().data) EXPECT_EQ(v, 0);
}

TEST(BatchNorm, TrainModeMomentsAndRunningStats) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(rng, 4, 3, 10);
  for (auto& v : x.data) v = v * 3 + 2;
  NormStats stats(3);
  Graph g;
  Var y = batchnorm1d(g.constant(x), g.constant(Tensor(1, 3, 1, 1)), g.constant(Tensor(1, 3, 1)), stats, NormMode::Train);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < 10; ++t) {
        m += y.value()(b, c, t);
        xm += x(b, c, t);
      }
    m /= 40;
    xm /= 40;
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < 10; ++t) {
        v += std::pow(y.value()(b, c, t) - m, 2);
        xv += std::pow(x(b, c, t) - xm, 2);
      }
    v /= 40;
    xv /= 40;
    EXPECT_NEAR(m, 0, 1e-5);
    EXPECT_NEAR(v, 1, 1e-5 + 1e-5 / xv);  // eps in the denominator shrinks the variance slightly
    EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-5);
  }
}

TEST(Activations, ReluAndSigmoid) {
  Graph g;
  EXPECT_EQ(values(relu(g.constant(row({-1, 0, 2})))), (std::vector<Real>{0, 0, 2}));
  EXPECT_EQ(values(sigmoid(g.constant(row({0}))))[0], Real(0.5));
  for (Real v : values(sigmoid(g.constant(row({-30, -3, 0, 3, 30}))))) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
}

TEST(Pooling, Examples) {
  Graph g;
  EXPECT_EQ(values(global_avg_pool(g.constant(row({1, 2, 3})))), (std::vector<Real>{2}));
  EXPECT_EQ(values(adaptive_avg_pool(g.constant(row({1, 2, 3, 4})), 2)), (std::vector<Real>{1.5, 3.5}));
  const Tensor x = row({4, -1, 7, 2, 0});
  EXPECT_EQ(values(adaptive_avg_pool(g.constant(x), 5)), x.data);
  EXPECT_THROW(adaptive_avg_pool(g.constant(x), 6), ShapeError);
}

TEST(Pooling, UnequalBins) {
  // bins [0,2), [2,4), [4,7) for length 7 into 3
  Graph g;
  EXPECT_EQ(values(adaptive_avg_pool(g.constant(row({1, 3, 5, 7, 0, 3, 6})), 3)), (std::vector<Real>{2, 6, 3}));
}

TEST(Loss, BceExamples) {
  Graph g;
  EXPECT_NEAR(bce_loss(g.constant(row({0.5})), row({1})).value().data[0], std::log(2.0), 1e-6);
  EXPECT_LE(bce_loss(g.constant(row({1, 0, 1})), row({1, 0, 1})).value().data[0], 1e-6);
  EXPECT_GE(bce_loss(g.constant(row({0.3, 0.9})), row({1, 0})).value().data[0], 0);
  EXPECT_THROW(bce_loss(g.constant(row({0.5, 0.5})), row({1})), ShapeError);
}

TEST(Backward, FrozenScalarsStayBitIdentical) {
  std::mt19937_64 rng(4);
  Parameter w(random_tensor(rng, 3, 2, 3));
  for (std::size_t i = 0; i < w.trainable.size(); ++i) w.trainable[i] = i % 3 == 0 ? 0 : 1;
  const Tensor before = w.value;
  OptimConfig cfg;
  Optimizer opt(cfg);
  opt.add_group({w.value.data, w.grad.data, w.trainable});
  const Tensor x = random_tensor(rng, 2, 2, 9);
  for (int step = 0; step < 20; ++step) {
    w.zero_grad();
    Graph g;
    g.backward(sum(relu(conv1d(g.constant(x), g.parameter(w), Var{}, 1, 1))));
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!w.trainable[i]) EXPECT_EQ(w.grad.data[i], 0);
    opt.step(0.01);
  }
  int changed = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!w.trainable[i])
      EXPECT_EQ(w.value.data[i], before.data[i]);
    else
      changed += w.value.data[i] != before.data[i];
  }
  EXPECT_GT(changed, 0);
}

TEST(Backward, SameSeedSameParameters) {
  auto run = [] {
    std::mt19937_64 rng(9);
    Parameter w(random_tensor(rng, 4, 3, 3));
    const Tensor x = random_tensor(rng, 2, 3, 12);
    Optimizer opt(OptimConfig{});
    opt.add_group({w.value.data, w.grad.data, {}});
    for (int step = 0; step < 10; ++step) {
      w.zero_grad();
      Graph g;
      g.backward(sum(sigmoid(conv1d(g.constant(x), g.parameter(w), Var{}, 2, 1))));
      opt.step(0.05);
    }
    return w.value.data;
  };
  EXPECT_EQ(run(), run());
}
