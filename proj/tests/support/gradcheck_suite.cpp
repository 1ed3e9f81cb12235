#include "gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <functional>
#include <random>

#include "bank.hpp"
#include "ecgcl/network.hpp"
#include "ecgcl/ops.hpp"

static_assert(ecgcl::kDoublePrecision, "gradient checks need the 64-bit build");

namespace gradcheck {

using namespace ecgcl;
using Rng = std::mt19937_64;
using Builder = std::function<Var(Graph&)>;

namespace {

struct Probe {
  Real* value;
  const Real* grad;
  bool trainable;
};

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Tensor random_tensor(Rng& rng, int n, int c, int l, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(n, c, l);
  for (auto& v : t.data) v = d(rng);
  return t;
}

Parameter random_param(Rng& rng, int n, int c, int l, double lo = -1.0, double hi = 1.0) {
  return Parameter(random_tensor(rng, n, c, l, lo, hi));
}

/// Scalar loss sum(y * r) with r drawn once per trial.
struct Projection {
  Tensor r;
  Var operator()(Graph& g, Var y) {
    if (!r.same_shape(y.value())) throw ShapeError("projection shape changed between evaluations");
    return sum(mul(y, g.constant(r)));
  }
};

Projection projection_for(Rng& rng, const Builder& output) {
  Graph g;
  const Tensor& y = output(g).value();
  return {random_tensor(rng, y.n, y.c, y.l)};
}

double loss_value(const Builder& build, std::uint64_t* signature) {
  Graph g;
  g.set_track_kinks(true);
  const Var loss = build(g);
  if (signature) *signature = g.kink_signature();
  return loss.value().data[0];
}

void sample_param(Rng& rng, Parameter& p, int count, std::vector<Probe>& probes) {
  const int n = static_cast<int>(p.value.size());
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (int i = 0; i < std::min(n, count); ++i)
    probes.push_back({&p.value.data[idx[i]], &p.grad.data[idx[i]], p.trainable[idx[i]] != 0});
}

/// Analytic gradients from one backward pass, then central differences
/// for every probe. `reset` clears the accumulated gradients.
Trial compare(const std::string& op, const Builder& loss, const std::function<void()>& reset,
              const std::vector<Probe>& probes) {
  Trial t;
  t.op = op;
  reset();
  std::uint64_t base_sig = 0;
  {
    Graph g;
    g.set_track_kinks(true);
    Var l = loss(g);
    base_sig = g.kink_signature();
    g.backward(l);
  }
  for (const Probe& p : probes) {
    const double analytic = *p.grad;
    if (!p.trainable) {
      if (analytic != 0.0) t.frozen_exact = false;
      continue;
    }
    const Real saved = *p.value;
    std::uint64_t sig_plus = 0, sig_minus = 0;
    *p.value = saved + kEps;
    const double plus = loss_value(loss, &sig_plus);
    *p.value = saved - kEps;
    const double minus = loss_value(loss, &sig_minus);
    *p.value = saved;
    if (sig_plus != base_sig || sig_minus != base_sig) {
      ++t.kink_skips;
      continue;
    }
    const double numeric = (plus - minus) / (2 * kEps);
    t.max_rel_err = std::max(t.max_rel_err, rel_err(analytic, numeric));
    ++t.checked;
  }
  return t;
}

/// Single-operator trial over plain parameters.
Trial param_trial(const std::string& op, Rng& rng, std::vector<Parameter*> params, const Builder& output,
                  bool scalar_output = false) {
  Builder loss = output;
  if (!scalar_output) {
    auto proj = std::make_shared<Projection>(projection_for(rng, output));
    loss = [output, proj](Graph& g) { return (*proj)(g, output(g)); };
  }
  std::vector<Probe> probes;
  for (Parameter* p : params) sample_param(rng, *p, 8, probes);
  return compare(op, loss, [&] { for (Parameter* p : params) p->zero_grad(); }, probes);
}

void freeze_some(Rng& rng, Parameter& p) {
  for (auto& f : p.trainable) f = std::bernoulli_distribution(0.3)(rng) ? 0 : 1;
}

Trial op_trial(int which, Rng& rng) {
  const int n = uniform(rng, 1, 3), c = uniform(rng, 1, 4), l = uniform(rng, 3, 12);
  Parameter x = random_param(rng, n, c, l);
  switch (which) {
    case 0: {  // conv1d with partly frozen kernel
      const int out = uniform(rng, 1, 4), k = uniform(rng, 1, std::min(4, l)), stride = uniform(rng, 1, 3);
      const int pad = uniform(rng, 0, 2);
      Parameter w = random_param(rng, out, c, k), b = random_param(rng, 1, out, 1);
      freeze_some(rng, w);
      return param_trial("conv1d", rng, {&x, &w, &b}, [&](Graph& g) {
        return conv1d(g.parameter(x), g.parameter(w), g.parameter(b), stride, pad);
      });
    }
    case 1: {  // conv1d through a gated shared weight
      const int out = uniform(rng, 1, 4), k = uniform(rng, 1, std::min(4, l)), stride = uniform(rng, 1, 2);
      const std::size_t size = static_cast<std::size_t>(out) * c * k;
      std::vector<Real> value(size), gate(size), grad(size);
      std::vector<std::uint8_t> trainable(size);
      std::uniform_real_distribution<double> d(-1, 1);
      for (std::size_t i = 0; i < size; ++i) {
        value[i] = d(rng);
        gate[i] = std::bernoulli_distribution(0.7)(rng) ? 1 : 0;
        trainable[i] = std::bernoulli_distribution(0.7)(rng);
      }
      GatedWeight gw;
      gw.value = value;
      gw.out = out;
      gw.in = c;
      gw.taps = k;
      gw.gate = gate;
      gw.grad = grad;
      gw.trainable = trainable;
      Builder output = [&](Graph& g) { return conv1d(g.parameter(x), g.weight(gw), Var{}, stride, k / 2); };
      auto proj = std::make_shared<Projection>(projection_for(rng, output));
      Builder loss = [&, proj](Graph& g) { return (*proj)(g, output(g)); };
      std::vector<Probe> probes;
      for (std::size_t i = 0; i < size; ++i) probes.push_back({&value[i], &grad[i], trainable[i] != 0});
      sample_param(rng, x, 4, probes);
      return compare("gated_weight", loss, [&] { std::fill(grad.begin(), grad.end(), 0.0); x.zero_grad(); }, probes);
    }
    case 2: {
      const int out = uniform(rng, 1, 4), k = uniform(rng, 1, 4), stride = uniform(rng, 1, 3);
      Parameter w = random_param(rng, c, out, k), b = random_param(rng, 1, out, 1);
      return param_trial("conv_transpose1d", rng, {&x, &w, &b}, [&](Graph& g) {
        return conv_transpose1d(g.parameter(x), g.parameter(w), g.parameter(b), stride);
      });
    }
    case 3: {
      const int target = uniform(rng, 1, 2 * l);
      return param_trial("linear_interpolate", rng, {&x},
                         [&](Graph& g) { return linear_interpolate(g.parameter(x), target); });
    }
    case 4:
    case 5: {
      const bool train = which == 4;
      if (train && n * l < 2) x = random_param(rng, 2, c, l);
      Parameter gamma = random_param(rng, 1, c, 1, 0.5, 1.5), beta = random_param(rng, 1, c, 1);
      NormStats stats(c);
      for (int i = 0; i < c; ++i) {
        stats.mean[i] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        stats.var[i] = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
      }
      return param_trial(train ? "batchnorm1d_train" : "batchnorm1d_eval", rng, {&x, &gamma, &beta},
                         [&, train](Graph& g) {
                           return batchnorm1d(g.parameter(x), g.parameter(gamma), g.parameter(beta), stats,
                                              train ? NormMode::Train : NormMode::Eval);
                         });
    }
    case 6:
      return param_trial("relu", rng, {&x}, [&](Graph& g) { return relu(g.parameter(x)); });
    case 7:
      return param_trial("sigmoid", rng, {&x}, [&](Graph& g) { return sigmoid(g.parameter(x)); });
    case 8:
      return param_trial("global_avg_pool", rng, {&x}, [&](Graph& g) { return global_avg_pool(g.parameter(x)); });
    case 9: {
      const int out = uniform(rng, 1, l);
      return param_trial("adaptive_avg_pool", rng, {&x},
                         [&](Graph& g) { return adaptive_avg_pool(g.parameter(x), out); });
    }
    case 10: {
      Parameter y = random_param(rng, n, c, l);
      return param_trial("add", rng, {&x, &y}, [&](Graph& g) { return add(g.parameter(x), g.parameter(y)); });
    }
    case 11: {
      Parameter y = random_param(rng, n, c, l);
      return param_trial("mul", rng, {&x, &y}, [&](Graph& g) { return mul(g.parameter(x), g.parameter(y)); });
    }
    case 12: {
      Parameter s = random_param(rng, n, c, 1);
      return param_trial("scale_channels", rng, {&x, &s},
                         [&](Graph& g) { return scale_channels(g.parameter(x), g.parameter(s)); });
    }
    case 13: {
      Parameter y = random_param(rng, n, uniform(rng, 1, 3), l), z = random_param(rng, n, uniform(rng, 1, 3), l);
      return param_trial("concat_channels", rng, {&x, &y, &z}, [&](Graph& g) {
        const Var parts[] = {g.parameter(x), g.parameter(y), g.parameter(z)};
        return concat_channels(parts);
      });
    }
    case 14: {
      const int target = uniform(rng, 1, 2 * l);
      return param_trial("fit_length", rng, {&x}, [&](Graph& g) { return fit_length(g.parameter(x), target); });
    }
    default: {
      Tensor targets(n, c, l);
      for (auto& v : targets.data) v = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
      return param_trial(
          "bce_loss", rng, {&x}, [&](Graph& g) { return bce_loss(sigmoid(g.parameter(x)), targets); }, true);
    }
  }
}

Trial net_trial(bool seg, Rng& rng) {
  EncoderConfig cfg;
  cfg.base_channels = 4;
  cfg.blocks_per_stage = 1;
  const int leads = uniform(rng, 1, 3), classes = seg ? 0 : uniform(rng, 1, 3);
  const int length = uniform(rng, 32, 72);
  const Mode mode = seg ? Mode::Seg : Mode::Cls;
  testing_support::ParamBank bank(cfg, mode, leads, classes, rng(), 0.3);
  Parameter x = random_param(rng, 2, leads, length);
  const int out_len = seg ? (length + 3) / 4 : 1;
  Tensor targets(2, seg ? 1 : classes, out_len);
  for (auto& v : targets.data) v = std::bernoulli_distribution(0.3)(rng) ? 1 : 0;

  Builder loss = [&](Graph& g) {
    NetContext ctx(g, bank, NormMode::Train);
    return bce_loss(network_forward(ctx, cfg, mode, g.parameter(x)), targets);
  };
  std::vector<Probe> probes;
  std::vector<Parameter*> all{&x};
  for (auto& [_, p] : bank.params()) all.push_back(&p);
  for (int i = 0; i < 24; ++i) sample_param(rng, *all[uniform(rng, 0, static_cast<int>(all.size()) - 1)], 1, probes);
  return compare(seg ? "network_seg" : "network_cls", loss, [&] {
    x.zero_grad();
    bank.zero_grads();
  }, probes);
}

constexpr int kOps = 16;

}  // namespace

double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

bool Summary::passed(double tol) const { return frozen_exact && checked > 0 && worst_rel_err <= tol; }

std::vector<std::string> operator_names() {
  return {"conv1d",  "gated_weight",   "conv_transpose1d", "linear_interpolate", "batchnorm1d_train",
          "batchnorm1d_eval", "relu", "sigmoid", "global_avg_pool", "adaptive_avg_pool",
          "add", "mul", "scale_channels", "concat_channels", "fit_length", "bce_loss"};
}

Summary run_suite(int op_trials, int net_trials, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  Summary s;
  for (int i = 0; i < op_trials; ++i) s.trials.push_back(op_trial(i % kOps, rng));
  for (int i = 0; i < net_trials; ++i) s.trials.push_back(net_trial(i % 2 == 0, rng));
  for (const Trial& t : s.trials) {
    s.worst_rel_err = std::max(s.worst_rel_err, t.max_rel_err);
    s.checked += t.checked;
    s.frozen_exact = s.frozen_exact && t.frozen_exact;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

}  // namespace gradcheck
