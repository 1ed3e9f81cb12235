#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "ecgcl/error.hpp"
#include "ecgcl/optim.hpp"

using namespace ecgcl;

TEST(LrSchedule, WarmupAndHalving) {
  OptimConfig o;
  EXPECT_DOUBLE_EQ(lr_at(0, o), 1e-6);
  EXPECT_DOUBLE_EQ(lr_at(5, o), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(34, o), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(35, o), 0.0005);
  EXPECT_DOUBLE_EQ(lr_at(65, o), 0.00025);
  for (int e = 0; e < 5; ++e) EXPECT_NEAR(lr_at(e, o), 1e-6 + (0.001 - 1e-6) * e / 5.0, 1e-15);
  for (int e = 1; e < 5; ++e) EXPECT_GT(lr_at(e, o), lr_at(e - 1, o));

  o.warmup_epochs = 0;
  EXPECT_DOUBLE_EQ(lr_at(0, o), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(30, o), 0.0005);
  EXPECT_DOUBLE_EQ(kRetrainLearningRate, 0.0005);
}

TEST(OptimConfig, Validation) {
  OptimConfig o;
  o.base_lr = 0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = OptimConfig{};
  o.batch_size = 0;
  EXPECT_THROW(o.validate(), ConfigError);
  EXPECT_EQ(optimizer_from_string("sgd"), OptimizerKind::Sgd);
  EXPECT_EQ(to_string(OptimizerKind::Adam), "adam");
  EXPECT_THROW(optimizer_from_string("rmsprop"), ConfigError);
}

TEST(Sgd, Examples) {
  std::vector<Real> w{1}, g{Real(0.5)}, v{0};
  sgd_step(w, g, {}, v, 0.1, 0.0);
  EXPECT_NEAR(w[0], 0.95, 1e-7);

  std::vector<Real> z{2, -3}, zero{0, 0}, vel{0, 0};
  sgd_step(z, zero, {}, vel, 0.1, 0.9);
  EXPECT_EQ(z, (std::vector<Real>{2, -3}));

  // momentum accumulates: v1 = g, v2 = 0.9 g + g
  std::vector<Real> m{0}, gm{1}, vm{0};
  sgd_step(m, gm, {}, vm, 0.1, 0.9);
  sgd_step(m, gm, {}, vm, 0.1, 0.9);
  EXPECT_NEAR(m[0], -0.1 - 0.19, 1e-6);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double c : {0.5, 3.0, 1e-3}) {
    std::vector<Real> w{1}, g{Real(c)}, m{0}, v{0};
    adam_step(w, g, {}, m, v, 0.01, 0.9, 0.999, 1e-8, 1);
    // bias-corrected first step: lr * c / (|c| + eps)
    EXPECT_NEAR(w[0], 1 - 0.01 * c / (c + 1e-8), 1e-6) << c;
  }
  std::vector<Real> w{1, 2}, g{0, 0}, m{0, 0}, v{0, 0};
  adam_step(w, g, {}, m, v, 0.01, 0.9, 0.999, 1e-8, 1);
  EXPECT_EQ(w, (std::vector<Real>{1, 2}));
}

TEST(Optimizer, FrozenScalarsStayBitIdentical) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> d;
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    std::vector<Real> w(64), grad(64);
    std::vector<std::uint8_t> trainable(64);
    for (int i = 0; i < 64; ++i) {
      w[i] = static_cast<Real>(d(rng));
      trainable[i] = i % 3 != 0;
    }
    const auto before = w;
    OptimConfig cfg;
    cfg.optimizer = kind;
    Optimizer opt(cfg);
    opt.add_group({w, grad, trainable});
    for (int step = 0; step < 50; ++step) {
      for (auto& gv : grad) gv = static_cast<Real>(d(rng));
      opt.step(0.01);
    }
    EXPECT_EQ(opt.steps(), 50);
    for (int i = 0; i < 64; ++i) {
      if (trainable[i])
        EXPECT_NE(w[i], before[i]);
      else
        EXPECT_EQ(std::memcmp(&w[i], &before[i], sizeof(Real)), 0);
    }
  }
}

TEST(Optimizer, SameSeedSameTrajectory) {
  auto run = [] {
    std::mt19937_64 rng(32);
    std::normal_distribution<double> d;
    std::vector<Real> w(40, Real(0.5)), grad(40);
    OptimConfig cfg;
    Optimizer opt(cfg);
    opt.add_group({w, grad, {}});
    for (int step = 0; step < 30; ++step) {
      for (auto& gv : grad) gv = static_cast<Real>(d(rng));
      opt.step(1e-3);
    }
    return w;
  };
  const auto a = run(), b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)), 0);
}
