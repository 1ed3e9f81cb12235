#include "ecgcl/ops.hpp"

#include <algorithm>
#include <cmath>

#include "ecgcl/error.hpp"
#include "ecgcl/parallel.hpp"

ECGCL_NAMESPACE_BEGIN

namespace {

Graph& graph_of(Var v) {
  if (!v) throw ContractError("operation on an absent Var");
  return *v.graph;
}

// Valid output positions t for tap kk: 0 <= t*stride + kk - pad < in_len.
struct TapRange {
  int begin;
  int end;
};

TapRange tap_range(int in_len, int out_len, int kk, int stride, int pad) {
  const int lo = pad - kk;
  const int begin = lo > 0 ? (lo + stride - 1) / stride : 0;
  const int hi = in_len - 1 + pad - kk;
  if (hi < 0) return {0, 0};
  const int end = std::min(out_len, hi / stride + 1);
  return {begin, std::max(begin, end)};
}

void check_bias(const Tensor* bias, int channels) {
  if (bias != nullptr && (bias->size() != static_cast<std::size_t>(channels)))
    throw ShapeError("bias has " + std::to_string(bias->size()) + " entries, expected " +
                     std::to_string(channels));
}

}  // namespace

int conv_out_len(int in_len, int taps, int stride, int padding) {
  if (stride < 1) throw ShapeError("conv stride must be >= 1");
  if (padding < 0) throw ShapeError("conv padding must be >= 0");
  const int span = in_len + 2 * padding - taps;
  if (span < 0) return 0;
  return span / stride + 1;
}

Var conv1d(Var x, Var kernel, Var bias, int stride, int padding) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(kernel);
  if (W.c != X.c)
    throw ShapeError("conv1d: input has " + std::to_string(X.c) + " channels, kernel expects " +
                     std::to_string(W.c));
  const Tensor* B = bias ? &g.value(bias) : nullptr;
  check_bias(B, W.n);
  const int out_len = conv_out_len(X.l, W.l, stride, padding);
  if (out_len <= 0) throw ShapeError("conv1d: non-positive output length for input " + X.shape_str());

  const int n = X.n, cin = X.c, cout = W.n, taps = W.l, in_len = X.l;
  Tensor Y(n, cout, out_len);
  parallel_for(n, [&](int b) {
    for (int o = 0; o < cout; ++o) {
      Real* y = Y.row(b, o);
      if (B != nullptr) std::fill(y, y + out_len, B->data[o]);
      for (int i = 0; i < cin; ++i) {
        const Real* xr = X.row(b, i);
        const Real* wr = W.row(o, i);
        for (int kk = 0; kk < taps; ++kk) {
          const Real wv = wr[kk];
          const auto [t0, t1] = tap_range(in_len, out_len, kk, stride, padding);
          const Real* xs = xr + kk - padding;
          if (stride == 1) {
            for (int t = t0; t < t1; ++t) y[t] += wv * xs[t];
          } else {
            for (int t = t0; t < t1; ++t) y[t] += wv * xs[t * stride];
          }
        }
      }
    }
  });

  const int xid = x.id, wid = kernel.id, bid = bias ? bias.id : -1;
  return g.add_node(std::move(Y), bias ? std::vector<int>{xid, wid, bid} : std::vector<int>{xid, wid},
                    [=](Graph& gr, int self) {
                      const Tensor& gy = gr.grad(self);
                      const Tensor& Xv = gr.value(xid);
                      const Tensor& Wv = gr.value(wid);
                      if (gr.requires_grad(xid)) {
                        Tensor& gx = gr.grad(xid);
                        parallel_for(n, [&](int b) {
                          for (int o = 0; o < cout; ++o) {
                            const Real* dy = gy.row(b, o);
                            for (int i = 0; i < cin; ++i) {
                              Real* dx = gx.row(b, i) + 0;
                              const Real* wr = Wv.row(o, i);
                              for (int kk = 0; kk < taps; ++kk) {
                                const Real wv = wr[kk];
                                const auto [t0, t1] = tap_range(in_len, out_len, kk, stride, padding);
                                Real* dxs = dx + kk - padding;
                                for (int t = t0; t < t1; ++t) dxs[t * stride] += wv * dy[t];
                              }
                            }
                          }
                        });
                      }
                      if (gr.requires_grad(wid)) {
                        Tensor& gw = gr.grad(wid);
                        parallel_for(cout, [&](int o) {
                          for (int i = 0; i < cin; ++i) {
                            Real* dw = gw.row(o, i);
                            for (int kk = 0; kk < taps; ++kk) {
                              const auto [t0, t1] = tap_range(in_len, out_len, kk, stride, padding);
                              Real acc = 0;
                              for (int b = 0; b < n; ++b) {
                                const Real* dy = gy.row(b, o);
                                const Real* xs = Xv.row(b, i) + kk - padding;
                                for (int t = t0; t < t1; ++t) acc += dy[t] * xs[t * stride];
                              }
                              dw[kk] += acc;
                            }
                          }
                        });
                      }
                      if (bid >= 0 && gr.requires_grad(bid)) {
                        Tensor& gb = gr.grad(bid);
                        for (int o = 0; o < cout; ++o) {
                          Real acc = 0;
                          for (int b = 0; b < n; ++b) {
                            const Real* dy = gy.row(b, o);
                            for (int t = 0; t < out_len; ++t) acc += dy[t];
                          }
                          gb.data[o] += acc;
                        }
                      }
                    });
}

Var conv_transpose1d(Var x, Var kernel, Var bias, int stride) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(kernel);
  if (stride < 1) throw ShapeError("conv_transpose1d: stride must be >= 1");
  if (W.n != X.c)
    throw ShapeError("conv_transpose1d: input has " + std::to_string(X.c) +
                     " channels, kernel expects " + std::to_string(W.n));
  const Tensor* B = bias ? &g.value(bias) : nullptr;
  check_bias(B, W.c);
  const int n = X.n, cin = X.c, cout = W.c, taps = W.l, in_len = X.l;
  const int out_len = (in_len - 1) * stride + taps;
  if (in_len <= 0 || out_len <= 0) throw ShapeError("conv_transpose1d: empty input");

  Tensor Y(n, cout, out_len);
  parallel_for(n, [&](int b) {
    for (int o = 0; o < cout; ++o) {
      Real* y = Y.row(b, o);
      if (B != nullptr) std::fill(y, y + out_len, B->data[o]);
      for (int i = 0; i < cin; ++i) {
        const Real* xr = X.row(b, i);
        const Real* wr = W.row(i, o);
        for (int kk = 0; kk < taps; ++kk) {
          const Real wv = wr[kk];
          Real* ys = y + kk;
          for (int t = 0; t < in_len; ++t) ys[t * stride] += wv * xr[t];
        }
      }
    }
  });

  const int xid = x.id, wid = kernel.id, bid = bias ? bias.id : -1;
  return g.add_node(std::move(Y), bias ? std::vector<int>{xid, wid, bid} : std::vector<int>{xid, wid},
                    [=](Graph& gr, int self) {
                      const Tensor& gy = gr.grad(self);
                      const Tensor& Xv = gr.value(xid);
                      const Tensor& Wv = gr.value(wid);
                      if (gr.requires_grad(xid)) {
                        Tensor& gx = gr.grad(xid);
                        parallel_for(n, [&](int b) {
                          for (int i = 0; i < cin; ++i) {
                            Real* dx = gx.row(b, i);
                            for (int o = 0; o < cout; ++o) {
                              const Real* dy = gy.row(b, o);
                              const Real* wr = Wv.row(i, o);
                              for (int kk = 0; kk < taps; ++kk) {
                                const Real wv = wr[kk];
                                const Real* dys = dy + kk;
                                for (int t = 0; t < in_len; ++t) dx[t] += wv * dys[t * stride];
                              }
                            }
                          }
                        });
                      }
                      if (gr.requires_grad(wid)) {
                        Tensor& gw = gr.grad(wid);
                        parallel_for(cin, [&](int i) {
                          for (int o = 0; o < cout; ++o) {
                            Real* dw = gw.row(i, o);
                            for (int kk = 0; kk < taps; ++kk) {
                              Real acc = 0;
                              for (int b = 0; b < n; ++b) {
                                const Real* xr = Xv.row(b, i);
                                const Real* dys = gy.row(b, o) + kk;
                                for (int t = 0; t < in_len; ++t) acc += xr[t] * dys[t * stride];
                              }
                              dw[kk] += acc;
                            }
                          }
                        });
                      }
                      if (bid >= 0 && gr.requires_grad(bid)) {
                        Tensor& gb = gr.grad(bid);
                        for (int o = 0; o < cout; ++o) {
                          Real acc = 0;
                          for (int b = 0; b < n; ++b) {
                            const Real* dy = gy.row(b, o);
                            for (int t = 0; t < out_len; ++t) acc += dy[t];
                          }
                          gb.data[o] += acc;
                        }
                      }
                    });
}

Var linear_interpolate(Var x, int target_len) {
  Graph& g = graph_of(x);
  if (target_len < 1) throw ShapeError("linear_interpolate: target length must be >= 1");
  const Tensor& X = g.value(x);
  const int in_len = X.l;
  std::vector<int> lo(target_len), hi(target_len);
  std::vector<Real> frac(target_len);
  for (int t = 0; t < target_len; ++t) {
    const double pos =
        target_len == 1 ? 0.0 : static_cast<double>(t) * (in_len - 1) / (target_len - 1);
    const int i0 = std::min(static_cast<int>(std::floor(pos)), in_len - 1);
    lo[t] = i0;
    hi[t] = std::min(i0 + 1, in_len - 1);
    frac[t] = static_cast<Real>(pos - i0);
  }
  Tensor Y(X.n, X.c, target_len);
  for (int b = 0; b < X.n; ++b)
    for (int ch = 0; ch < X.c; ++ch) {
      const Real* xr = X.row(b, ch);
      Real* y = Y.row(b, ch);
      for (int t = 0; t < target_len; ++t)
        y[t] = xr[lo[t]] * (Real(1) - frac[t]) + xr[hi[t]] * frac[t];
    }
  const int xid = x.id;
  return g.add_node(std::move(Y), {xid},
                    [=, lo = std::move(lo), hi = std::move(hi), frac = std::move(frac)](Graph& gr,
                                                                                        int self) {
                      const Tensor& gy = gr.grad(self);
                      Tensor& gx = gr.grad(xid);
                      for (int b = 0; b < gy.n; ++b)
                        for (int ch = 0; ch < gy.c; ++ch) {
                          const Real* dy = gy.row(b, ch);
                          Real* dx = gx.row(b, ch);
                          for (int t = 0; t < target_len; ++t) {
                            dx[lo[t]] += dy[t] * (Real(1) - frac[t]);
                            dx[hi[t]] += dy[t] * frac[t];
                          }
                        }
                    });
}

Var batchnorm1d(Var x, Var gamma, Var beta, NormStats& stats, NormMode mode) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& G = g.value(gamma);
  const Tensor& Bt = g.value(beta);
  const int n = X.n, c = X.c, len = X.l;
  if (stats.channels() != c || G.size() != static_cast<std::size_t>(c) ||
      Bt.size() != static_cast<std::size_t>(c))
    throw ShapeError("batchnorm1d: " + std::to_string(c) + " channels vs stats/affine of " +
                     std::to_string(stats.channels()));
  const int count = n * len;
  std::vector<Real> mean(c), invstd(c);
  if (mode == NormMode::Train) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int b = 0; b < n; ++b) {
        const Real* xr = X.row(b, ch);
        for (int t = 0; t < len; ++t) s += xr[t];
      }
      const double m = s / count;
      double v = 0;
      for (int b = 0; b < n; ++b) {
        const Real* xr = X.row(b, ch);
        for (int t = 0; t < len; ++t) v += (xr[t] - m) * (xr[t] - m);
      }
      v /= count;
      mean[ch] = static_cast<Real>(m);
      invstd[ch] = static_cast<Real>(1.0 / std::sqrt(v + kNormEps));
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      stats.mean[ch] = (Real(1) - kNormMomentum) * stats.mean[ch] + kNormMomentum * mean[ch];
      stats.var[ch] = (Real(1) - kNormMomentum) * stats.var[ch] +
                      kNormMomentum * static_cast<Real>(unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean[ch];
      invstd[ch] = Real(1) / std::sqrt(stats.var[ch] + kNormEps);
    }
  }
  Tensor Y(n, c, len);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const Real* xr = X.row(b, ch);
      Real* y = Y.row(b, ch);
      const Real m = mean[ch], is = invstd[ch], gm = G.data[ch], bt = Bt.data[ch];
      for (int t = 0; t < len; ++t) y[t] = (xr[t] - m) * is * gm + bt;
    }
  const int xid = x.id, gid = gamma.id, bid = beta.id;
  const bool train = mode == NormMode::Train;
  return g.add_node(
      std::move(Y), {xid, gid, bid},
      [=, mean = std::move(mean), invstd = std::move(invstd)](Graph& gr, int self) {
        const Tensor& gy = gr.grad(self);
        const Tensor& Xv = gr.value(xid);
        const Tensor& Gv = gr.value(gid);
        std::vector<Real> sum_dy(c, 0), sum_dy_xhat(c, 0);
        for (int ch = 0; ch < c; ++ch) {
          Real s1 = 0, s2 = 0;
          for (int b = 0; b < n; ++b) {
            const Real* dy = gy.row(b, ch);
            const Real* xr = Xv.row(b, ch);
            for (int t = 0; t < len; ++t) {
              s1 += dy[t];
              s2 += dy[t] * (xr[t] - mean[ch]) * invstd[ch];
            }
          }
          sum_dy[ch] = s1;
          sum_dy_xhat[ch] = s2;
        }
        if (gr.requires_grad(gid)) {
          Tensor& gg = gr.grad(gid);
          for (int ch = 0; ch < c; ++ch) gg.data[ch] += sum_dy_xhat[ch];
        }
        if (gr.requires_grad(bid)) {
          Tensor& gb = gr.grad(bid);
          for (int ch = 0; ch < c; ++ch) gb.data[ch] += sum_dy[ch];
        }
        if (gr.requires_grad(xid)) {
          Tensor& gx = gr.grad(xid);
          for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
              const Real* dy = gy.row(b, ch);
              const Real* xr = Xv.row(b, ch);
              Real* dx = gx.row(b, ch);
              const Real scale = Gv.data[ch] * invstd[ch];
              if (train) {
                const Real inv_count = Real(1) / static_cast<Real>(count);
                for (int t = 0; t < len; ++t) {
                  const Real xhat = (xr[t] - mean[ch]) * invstd[ch];
                  dx[t] += scale * (dy[t] - inv_count * sum_dy[ch] - xhat * inv_count * sum_dy_xhat[ch]);
                }
              } else {
                for (int t = 0; t < len; ++t) dx[t] += scale * dy[t];
              }
            }
        }
      });
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  Tensor Y(X.n, X.c, X.l);
  for (std::size_t i = 0; i < X.size(); ++i) Y.data[i] = X.data[i] > Real(0) ? X.data[i] : Real(0);
  if (g.track_kinks()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (Real v : X.data) h = (h ^ static_cast<std::uint64_t>(v > Real(0))) * 1099511628211ULL;
    g.mix_kink_signature(h);
  }
  const int xid = x.id;
  return g.add_node(std::move(Y), {xid}, [xid](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& Xv = gr.value(xid);
    Tensor& gx = gr.grad(xid);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (Xv.data[i] > Real(0)) gx.data[i] += gy.data[i];
  });
}

Var sigmoid(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  Tensor Y(X.n, X.c, X.l);
  for (std::size_t i = 0; i < X.size(); ++i) {
    const Real v = X.data[i];
    if (v >= Real(0)) {
      Y.data[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      Y.data[i] = e / (Real(1) + e);
    }
  }
  const int xid = x.id;
  return g.add_node(std::move(Y), {xid}, [xid](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad(xid);
    for (std::size_t i = 0; i < gy.size(); ++i)
      gx.data[i] += gy.data[i] * y.data[i] * (Real(1) - y.data[i]);
  });
}

Var global_avg_pool(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  Tensor Y(X.n, X.c, 1);
  for (int b = 0; b < X.n; ++b)
    for (int ch = 0; ch < X.c; ++ch) {
      const Real* xr = X.row(b, ch);
      Real s = 0;
      for (int t = 0; t < X.l; ++t) s += xr[t];
      Y(b, ch, 0) = s / static_cast<Real>(X.l);
    }
  const int xid = x.id, len = X.l;
  return g.add_node(std::move(Y), {xid}, [xid, len](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    Tensor& gx = gr.grad(xid);
    const Real inv = Real(1) / static_cast<Real>(len);
    for (int b = 0; b < gx.n; ++b)
      for (int ch = 0; ch < gx.c; ++ch) {
        const Real d = gy(b, ch, 0) * inv;
        Real* dx = gx.row(b, ch);
        for (int t = 0; t < len; ++t) dx[t] += d;
      }
  });
}

Var adaptive_avg_pool(Var x, int out_len) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  if (out_len < 1 || out_len > X.l)
    throw ShapeError("adaptive_avg_pool: output length " + std::to_string(out_len) +
                     " not in [1, " + std::to_string(X.l) + "]");
  const int len = X.l;
  std::vector<int> start(out_len), stop(out_len);
  for (int i = 0; i < out_len; ++i) {
    start[i] = static_cast<int>(static_cast<long long>(i) * len / out_len);
    stop[i] = static_cast<int>(static_cast<long long>(i + 1) * len / out_len);
  }
  Tensor Y(X.n, X.c, out_len);
  for (int b = 0; b < X.n; ++b)
    for (int ch = 0; ch < X.c; ++ch) {
      const Real* xr = X.row(b, ch);
      Real* y = Y.row(b, ch);
      for (int i = 0; i < out_len; ++i) {
        if (stop[i] - start[i] == 1) {
          y[i] = xr[start[i]];
          continue;
        }
        Real s = 0;
        for (int t = start[i]; t < stop[i]; ++t) s += xr[t];
        y[i] = s / static_cast<Real>(stop[i] - start[i]);
      }
    }
  const int xid = x.id;
  return g.add_node(std::move(Y), {xid},
                    [=, start = std::move(start), stop = std::move(stop)](Graph& gr, int self) {
                      const Tensor& gy = gr.grad(self);
                      Tensor& gx = gr.grad(xid);
                      for (int b = 0; b < gx.n; ++b)
                        for (int ch = 0; ch < gx.c; ++ch) {
                          const Real* dy = gy.row(b, ch);
                          Real* dx = gx.row(b, ch);
                          for (int i = 0; i < out_len; ++i) {
                            const Real d = dy[i] / static_cast<Real>(stop[i] - start[i]);
                            for (int t = start[i]; t < stop[i]; ++t) dx[t] += d;
                          }
                        }
                    });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (!A.same_shape(B)) throw ShapeError("add: " + A.shape_str() + " vs " + B.shape_str());
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] += B.data[i];
  const int aid = a.id, bid = b.id;
  return g.add_node(std::move(Y), {aid, bid}, [aid, bid](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    for (int id : {aid, bid}) {
      if (!gr.requires_grad(id)) continue;
      Tensor& gx = gr.grad(id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx.data[i] += gy.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (!A.same_shape(B)) throw ShapeError("mul: " + A.shape_str() + " vs " + B.shape_str());
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] *= B.data[i];
  const int aid = a.id, bid = b.id;
  return g.add_node(std::move(Y), {aid, bid}, [aid, bid](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& Av = gr.value(aid);
    const Tensor& Bv = gr.value(bid);
    if (gr.requires_grad(aid)) {
      Tensor& ga = gr.grad(aid);
      for (std::size_t i = 0; i < gy.size(); ++i) ga.data[i] += gy.data[i] * Bv.data[i];
    }
    if (gr.requires_grad(bid)) {
      Tensor& gb = gr.grad(bid);
      for (std::size_t i = 0; i < gy.size(); ++i) gb.data[i] += gy.data[i] * Av.data[i];
    }
  });
}

Var scale_channels(Var x, Var s) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  const Tensor& S = g.value(s);
  if (S.n != X.n || S.c != X.c || S.l != 1)
    throw ShapeError("scale_channels: " + X.shape_str() + " by " + S.shape_str());
  Tensor Y(X.n, X.c, X.l);
  for (int b = 0; b < X.n; ++b)
    for (int ch = 0; ch < X.c; ++ch) {
      const Real k = S(b, ch, 0);
      const Real* xr = X.row(b, ch);
      Real* y = Y.row(b, ch);
      for (int t = 0; t < X.l; ++t) y[t] = xr[t] * k;
    }
  const int xid = x.id, sid = s.id;
  return g.add_node(std::move(Y), {xid, sid}, [xid, sid](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    const Tensor& Xv = gr.value(xid);
    const Tensor& Sv = gr.value(sid);
    const bool need_x = gr.requires_grad(xid), need_s = gr.requires_grad(sid);
    for (int b = 0; b < gy.n; ++b)
      for (int ch = 0; ch < gy.c; ++ch) {
        const Real* dy = gy.row(b, ch);
        if (need_x) {
          Real* dx = gr.grad(xid).row(b, ch);
          const Real k = Sv(b, ch, 0);
          for (int t = 0; t < gy.l; ++t) dx[t] += dy[t] * k;
        }
        if (need_s) {
          const Real* xr = Xv.row(b, ch);
          Real acc = 0;
          for (int t = 0; t < gy.l; ++t) acc += dy[t] * xr[t];
          gr.grad(sid)(b, ch, 0) += acc;
        }
      }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Graph& g = graph_of(parts.front());
  const Tensor& first = g.value(parts.front());
  int total = 0;
  std::vector<int> ids, offsets;
  for (const Var& p : parts) {
    const Tensor& t = g.value(p);
    if (t.n != first.n || t.l != first.l)
      throw ShapeError("concat_channels: " + t.shape_str() + " vs " + first.shape_str());
    ids.push_back(p.id);
    offsets.push_back(total);
    total += t.c;
  }
  Tensor Y(first.n, total, first.l);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Tensor& t = g.value(ids[k]);
    for (int b = 0; b < t.n; ++b)
      for (int ch = 0; ch < t.c; ++ch)
        std::copy_n(t.row(b, ch), t.l, Y.row(b, offsets[k] + ch));
  }
  std::vector<int> inputs = ids;
  return g.add_node(std::move(Y), std::move(inputs),
                    [ids = std::move(ids), offsets = std::move(offsets)](Graph& gr, int self) {
                      const Tensor& gy = gr.grad(self);
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                        if (!gr.requires_grad(ids[k])) continue;
                        Tensor& gx = gr.grad(ids[k]);
                        for (int b = 0; b < gx.n; ++b)
                          for (int ch = 0; ch < gx.c; ++ch) {
                            const Real* dy = gy.row(b, offsets[k] + ch);
                            Real* dx = gx.row(b, ch);
                            for (int t = 0; t < gx.l; ++t) dx[t] += dy[t];
                          }
                      }
                    });
}

Var fit_length(Var x, int target_len) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  if (target_len < 1) throw ShapeError("fit_length: target length must be >= 1");
  if (target_len == X.l) return x;
  const int keep = std::min(target_len, X.l);
  Tensor Y(X.n, X.c, target_len);
  for (int b = 0; b < X.n; ++b)
    for (int ch = 0; ch < X.c; ++ch) std::copy_n(X.row(b, ch), keep, Y.row(b, ch));
  const int xid = x.id;
  return g.add_node(std::move(Y), {xid}, [xid, keep](Graph& gr, int self) {
    const Tensor& gy = gr.grad(self);
    Tensor& gx = gr.grad(xid);
    for (int b = 0; b < gx.n; ++b)
      for (int ch = 0; ch < gx.c; ++ch) {
        const Real* dy = gy.row(b, ch);
        Real* dx = gx.row(b, ch);
        for (int t = 0; t < keep; ++t) dx[t] += dy[t];
      }
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = g.value(x);
  Real s = 0;
  for (Real v : X.data) s += v;
  const int xid = x.id;
  return g.add_node(Tensor(1, 1, 1, s), {xid}, [xid](Graph& gr, int self) {
    const Real d = gr.grad(self).data[0];
    Tensor& gx = gr.grad(xid);
    for (auto& v : gx.data) v += d;
  });
}

Var bce_loss(Var probs, const Tensor& targets) {
  Graph& g = graph_of(probs);
  const Tensor& P = g.value(probs);
  if (!P.same_shape(targets))
    throw ShapeError("bce_loss: probabilities " + P.shape_str() + " vs targets " +
                     targets.shape_str());
  const auto count = static_cast<double>(P.size());
  double loss = 0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double p = std::clamp<double>(P.data[i], kBceClamp, 1.0 - kBceClamp);
    const double t = targets.data[i];
    loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  loss /= count;
  const int pid = probs.id;
  return g.add_node(Tensor(1, 1, 1, static_cast<Real>(loss)), {pid},
                    [pid, targets, count](Graph& gr, int self) {
                      const Real d = gr.grad(self).data[0];
                      const Tensor& Pv = gr.value(pid);
                      Tensor& gp = gr.grad(pid);
                      for (std::size_t i = 0; i < Pv.size(); ++i) {
                        const double p = Pv.data[i];
                        if (p < kBceClamp || p > 1.0 - kBceClamp) continue;
                        const double t = targets.data[i];
                        gp.data[i] += static_cast<Real>(d * (-(t / p) + (1.0 - t) / (1.0 - p)) / count);
                      }
                    });
}

ECGCL_NAMESPACE_END
