#include "oracle_suite.hpp"

#include <algorithm>
#include <random>

#include "ecgcl/metrics.hpp"
#include "ecgcl/ops.hpp"
#include "oracles.hpp"

namespace oracle_suite {

using namespace ecgcl;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int n, int c, int l) {
  std::uniform_real_distribution<double> d(-1, 1);
  Tensor t(n, c, l);
  for (auto& v : t.data) v = static_cast<Real>(d(rng));
  return t;
}

}  // namespace

Summary run(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Summary s;
  for (int trial = 0; trial < trials; ++trial) {
    ++s.trials;
    {
      const int n = uni(1, 3), c = uni(1, 5), l = uni(4, 24), out = uni(1, 6), k = uni(1, 5);
      const int stride = uni(1, 3), pad = uni(0, 2);
      if (l + 2 * pad >= k) {
        const Tensor x = random_tensor(rng, n, c, l), w = random_tensor(rng, out, c, k), b = random_tensor(rng, 1, out, 1);
        Graph g;
        const Tensor y = conv1d(g.constant(x), g.constant(w), g.constant(b), stride, pad).value();
        s.conv_max_rel = std::max(s.conv_max_rel, oracle::max_rel_diff(y, oracle::conv1d(x, w, &b, stride, pad)));
      }
    }
    {
      const int n = uni(1, 3), c = uni(1, 5), l = uni(1, 16), out = uni(1, 6), k = uni(1, 5), stride = uni(1, 4);
      const Tensor x = random_tensor(rng, n, c, l), w = random_tensor(rng, c, out, k), b = random_tensor(rng, 1, out, 1);
      Graph g;
      const Tensor y = conv_transpose1d(g.constant(x), g.constant(w), g.constant(b), stride).value();
      s.deconv_max_rel =
          std::max(s.deconv_max_rel, oracle::max_rel_diff(y, oracle::conv_transpose1d(x, w, &b, stride)));
    }
    {
      const int classes = uni(1, 4), samples = uni(2, 200);
      std::vector<std::vector<double>> scores(classes, std::vector<double>(samples));
      std::vector<std::vector<int>> labels(classes, std::vector<int>(samples));
      for (int k = 0; k < classes; ++k)
        for (int i = 0; i < samples; ++i) {
          scores[k][i] = uni(0, 20) / 20.0;  // coarse grid so ties occur
          labels[k][i] = uni(0, 1);
        }
      const AucResult r = macro_auc(scores, labels);
      double total = 0;
      int included = 0;
      for (int k = 0; k < classes; ++k) {
        const long pos = std::count(labels[k].begin(), labels[k].end(), 1);
        if (pos == 0 || pos == samples) {
          if (r.per_class[k].has_value()) ++s.auc_mismatches;
          continue;
        }
        const double o = oracle::pairwise_auc(scores[k], labels[k]);
        if (!r.per_class[k] || *r.per_class[k] != o) ++s.auc_mismatches;
        total += o;
        ++included;
      }
      if (included > 0 && r.macro != total / included) ++s.auc_mismatches;
    }
    {
      auto positions = [&](int count) {
        std::vector<int> v(count);
        for (auto& p : v) p = uni(0, 60);
        std::sort(v.begin(), v.end());
        return v;
      };
      const auto pred = positions(uni(0, 7)), truth = positions(uni(0, 7));
      const int tol = uni(0, 6);
      const MatchCounts m = qrs_match(pred, truth, tol);
      const long best = oracle::max_matching(pred, truth, tol);
      if (m.tp != best || m.fp != static_cast<long>(pred.size()) - best ||
          m.fn != static_cast<long>(truth.size()) - best)
        ++s.match_mismatches;
    }
  }
  return s;
}

}  // namespace oracle_suite
