#include "ecgcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "ecgcl/error.hpp"
#include "ecgcl/filter.hpp"

ECGCL_NAMESPACE_BEGIN

void EcgRecord::validate() const {
  if (!(fs > 0)) throw ConfigError("record '" + patient_id + "': sampling rate must be positive");
  if (leads < 1) throw ConfigError("record '" + patient_id + "': lead count must be positive");
  if (signal.size() % static_cast<std::size_t>(leads) != 0)
    throw ConfigError("record '" + patient_id + "': signal size is not a multiple of the lead count");
  for (std::size_t i = 0; i < qrs.size(); ++i) {
    if (qrs[i] < 0 || qrs[i] >= samples())
      throw ConfigError("record '" + patient_id + "': QRS index " + std::to_string(qrs[i]) + " out of range");
    if (i > 0 && qrs[i] <= qrs[i - 1])
      throw ConfigError("record '" + patient_id + "': QRS indices must be strictly increasing");
  }
}

std::vector<EcgWindow> window_and_normalize(const EcgRecord& record, double seconds) {
  record.validate();
  const int len = static_cast<int>(std::lround(seconds * record.fs));
  if (len < 1) throw ConfigError("window length must be at least one sample");
  const int count = record.samples() / len;
  std::vector<EcgWindow> windows;
  windows.reserve(count);
  for (int w = 0; w < count; ++w) {
    EcgWindow win;
    win.fs = record.fs;
    win.leads = record.leads;
    win.labels = record.labels;
    win.patient_id = record.patient_id;
    win.signal.resize(static_cast<std::size_t>(record.leads) * len);
    const int begin = w * len;
    for (int ld = 0; ld < record.leads; ++ld) {
      auto src = record.lead(ld).subspan(begin, len);
      double* dst = win.signal.data() + static_cast<std::size_t>(ld) * len;
      const double mean = std::accumulate(src.begin(), src.end(), 0.0) / len;
      double var = 0;
      for (double v : src) var += (v - mean) * (v - mean);
      var /= len;
      const double sd = std::sqrt(var);
      // a lead whose spread is at rounding level is treated as constant
      const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
      for (int t = 0; t < len; ++t) dst[t] = flat ? 0.0 : (src[t] - mean) / sd;
    }
    for (int q : record.qrs)
      if (q >= begin && q < begin + len) win.qrs.push_back(q - begin);
    windows.push_back(std::move(win));
  }
  return windows;
}

std::vector<EcgWindow> preprocess(const EcgRecord& record, double seconds, double lo, double hi) {
  record.validate();
  EcgRecord filtered = record;
  for (int ld = 0; ld < record.leads; ++ld) {
    const auto out = bandpass(record.lead(ld), record.fs, lo, hi);
    std::copy(out.begin(), out.end(), filtered.lead(ld).begin());
  }
  return window_and_normalize(filtered, seconds);
}

namespace {

struct FoldSizes {
  std::size_t train, val, test;
};

FoldSizes fold_sizes(std::size_t n, const SplitFractions& f, const char* unit) {
  const auto train = static_cast<std::size_t>(std::lround(f.train * static_cast<double>(n)));
  const auto val = static_cast<std::size_t>(std::lround(f.val * static_cast<double>(n)));
  if (train + val > n) throw ConfigError(std::string("split: too few ") + unit + " for the requested fractions");
  const FoldSizes s{train, val, n - train - val};
  if ((f.train > 0 && s.train == 0) || (f.val > 0 && s.val == 0) || (f.test > 0 && s.test == 0))
    throw ConfigError(std::string("split: ") + std::to_string(n) + " " + unit +
                      " are too few to give every non-empty fold at least one");
  return s;
}

}  // namespace

Split split(const std::vector<EcgRecord>& records, SplitFractions fractions, bool stratify_by_patient,
            std::uint64_t seed) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  std::mt19937_64 rng(seed);
  Split out;
  auto assign = [&](std::size_t rank, const FoldSizes& s) -> std::vector<EcgRecord>& {
    if (rank < s.train) return out.train;
    if (rank < s.train + s.val) return out.val;
    return out.test;
  };
  if (!stratify_by_patient) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const FoldSizes s = fold_sizes(records.size(), fractions, "records");
    for (std::size_t rank = 0; rank < order.size(); ++rank) assign(rank, s).push_back(records[order[rank]]);
    return out;
  }
  std::vector<std::string> patients;
  for (const auto& r : records) patients.push_back(r.patient_id);
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  std::shuffle(patients.begin(), patients.end(), rng);
  const FoldSizes s = fold_sizes(patients.size(), fractions, "patients");
  std::map<std::string, std::size_t> rank_of;
  for (std::size_t i = 0; i < patients.size(); ++i) rank_of[patients[i]] = i;
  for (const auto& r : records) assign(rank_of.at(r.patient_id), s).push_back(r);
  return out;
}

int seg_target_halfwidth(double fs) { return static_cast<int>(std::floor(0.075 * fs)); }

std::vector<Real> seg_targets(const EcgWindow& window) {
  const int len = (window.samples() + 3) / 4;
  const int half = seg_target_halfwidth(window.fs);
  std::vector<Real> y(len, Real(0));
  for (int q : window.qrs) {
    // positions p with |4p - q| <= half
    const int lo = std::max(0, (q - half + 3) / 4);
    const int hi = std::min(len - 1, (q + half) / 4);
    for (int p = lo; p <= hi; ++p) y[p] = Real(1);
  }
  return y;
}

TaskData TaskData::subset(std::span<const int> idx) const {
  TaskData out;
  out.mode = mode;
  out.fs = fs;
  out.classes = classes;
  out.x = Tensor(static_cast<int>(idx.size()), x.c, x.l);
  out.y = Tensor(static_cast<int>(idx.size()), y.c, y.l);
  const std::size_t xs = static_cast<std::size_t>(x.c) * x.l, ys = static_cast<std::size_t>(y.c) * y.l;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(x.data.begin() + idx[i] * xs, xs, out.x.data.begin() + i * xs);
    std::copy_n(y.data.begin() + idx[i] * ys, ys, out.y.data.begin() + i * ys);
    if (!qrs.empty()) out.qrs.push_back(qrs[idx[i]]);
  }
  return out;
}

TaskData make_task_data(std::span<const EcgWindow> windows, Mode mode, int classes) {
  if (windows.empty()) throw ConfigError("no windows to build a dataset from");
  if (mode == Mode::Cls && classes < 1) throw ConfigError("classification data needs a positive class count");
  const auto& first = windows.front();
  const int n = static_cast<int>(windows.size()), leads = first.leads, len = first.samples();
  TaskData d;
  d.mode = mode;
  d.fs = first.fs;
  d.classes = mode == Mode::Cls ? classes : 0;
  d.x = Tensor(n, leads, len);
  d.y = mode == Mode::Seg ? Tensor(n, 1, (len + 3) / 4) : Tensor(n, classes, 1);
  for (int i = 0; i < n; ++i) {
    const auto& w = windows[i];
    if (w.leads != leads || w.samples() != len || w.fs != first.fs)
      throw ShapeError("windows differ in lead count, length or sampling rate");
    std::transform(w.signal.begin(), w.signal.end(), d.x.row(i, 0), [](double v) { return static_cast<Real>(v); });
    if (mode == Mode::Seg) {
      const auto t = seg_targets(w);
      std::copy(t.begin(), t.end(), d.y.row(i, 0));
      d.qrs.push_back(w.qrs);
    } else {
      for (int c : w.labels) {
        if (c < 0 || c >= classes)
          throw ConfigError("class ID " + std::to_string(c) + " outside [0, " + std::to_string(classes) + ")");
        d.y(i, c, 0) = Real(1);
      }
    }
  }
  return d;
}

ECGCL_NAMESPACE_END
