#include "ecgcl/optim.hpp"

#include <cmath>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

void OptimConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("warm-up epochs must be >= 0");
  if (halve_every < 1) throw ConfigError("halving period must be >= 1");
}

double lr_at(int epoch, const OptimConfig& cfg) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  if (epoch < cfg.warmup_epochs)
    return cfg.warmup_start_lr +
           (cfg.base_lr - cfg.warmup_start_lr) * static_cast<double>(epoch) / cfg.warmup_epochs;
  const int halvings = (epoch - cfg.warmup_epochs) / cfg.halve_every;
  return cfg.base_lr * std::pow(0.5, halvings);
}

void sgd_step(std::span<Real> value, std::span<const Real> grad, std::span<const std::uint8_t> trainable,
              std::span<Real> velocity, double lr, double momentum) {
  const auto m = static_cast<Real>(momentum);
  const auto rate = static_cast<Real>(lr);
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    velocity[i] = m * velocity[i] + grad[i];
    value[i] -= rate * velocity[i];
  }
}

void adam_step(std::span<Real> value, std::span<const Real> grad, std::span<const std::uint8_t> trainable,
               std::span<Real> m, std::span<Real> v, double lr, double beta1, double beta2, double eps,
               long step_index) {
  if (step_index < 1) throw ContractError("adam_step: step index starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_index));
  const auto b1 = static_cast<Real>(beta1), b2 = static_cast<Real>(beta2);
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    const Real g = grad[i];
    m[i] = b1 * m[i] + (Real(1) - b1) * g;
    v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    value[i] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + eps));
  }
}

void Optimizer::add_group(OptimGroup g) {
  State s{g, std::vector<Real>(g.value.size(), Real(0)), {}};
  if (cfg_.optimizer == OptimizerKind::Adam) s.second.assign(g.value.size(), Real(0));
  states_.push_back(std::move(s));
}

void Optimizer::step(double lr) {
  ++steps_;
  for (auto& s : states_) {
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      sgd_step(s.group.value, s.group.grad, s.group.trainable, s.first, lr, cfg_.momentum);
    } else {
      adam_step(s.group.value, s.group.grad, s.group.trainable, s.first, s.second, lr, cfg_.beta1,
                cfg_.beta2, cfg_.adam_eps, steps_);
    }
  }
}

ECGCL_NAMESPACE_END
