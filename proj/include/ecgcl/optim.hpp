#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgcl/real.hpp"

ECGCL_NAMESPACE_BEGIN

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

/// Fixed learning rate of the prune/retrain phase.
inline constexpr double kRetrainLearningRate = 0.0005;

struct OptimConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double base_lr = 0.001;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  int epochs = 5;
  // warm-up ramps linearly from warmup_start_lr to base_lr over warmup_epochs,
  // then the rate halves every halve_every epochs counted from the end of warm-up
  int warmup_epochs = 5;
  double warmup_start_lr = 1e-6;
  int halve_every = 30;

  void validate() const;
};

double lr_at(int epoch, const OptimConfig& cfg);

/// v = momentum * v + g; w -= lr * v. Scalars with trainable == 0 are skipped.
void sgd_step(std::span<Real> value, std::span<const Real> grad, std::span<const std::uint8_t> trainable,
              std::span<Real> velocity, double lr, double momentum);

/// Bias-corrected Adam; step_index starts at 1.
void adam_step(std::span<Real> value, std::span<const Real> grad, std::span<const std::uint8_t> trainable,
               std::span<Real> m, std::span<Real> v, double lr, double beta1, double beta2, double eps,
               long step_index);

/// A tensor the optimizer updates. An empty `trainable` means all scalars.
struct OptimGroup {
  std::span<Real> value;
  std::span<Real> grad;
  std::span<const std::uint8_t> trainable;
};

/// Holds per-group state; groups must be registered in the same order for
/// the lifetime of the optimizer.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg) : cfg_(cfg) {}

  void add_group(OptimGroup g);
  void step(double lr);
  long steps() const { return steps_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  struct State {
    OptimGroup group;
    std::vector<Real> first;
    std::vector<Real> second;
  };
  OptimConfig cfg_;
  std::vector<State> states_;
  long steps_ = 0;
};

ECGCL_NAMESPACE_END
