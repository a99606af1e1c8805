#pragma once

#include "voxrf/tensor.hpp"

namespace voxrf {

// ---------------------------------------------------------------------------
// conv3d: x [Cin,D,H,W], w [Cout,Cin,k,k,k] with odd k, "same" padding k/2,
// stride 1, optional bias [Cout]. Gradients are computed in gather form so
// parallel loops write disjoint outputs (deterministic for any schedule).
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 5 || sw[1] != sx[0] || sw[2] != sw[3] || sw[3] != sw[4] ||
      sw[2] % 2 == 0)
    throw ValidationError("conv3d: bad shapes " + shape_str(sx) + " and " + shape_str(sw));
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != sw[0]))
    throw ValidationError("conv3d: bias shape " + shape_str(bias->shape()) + " != [" + std::to_string(sw[0]) + "]");
  const int Cin = sx[0], D = sx[1], H = sx[2], W = sx[3];
  const int Cout = sw[0], k = sw[2], pad = k / 2;
  const long long chan = static_cast<long long>(D) * H * W;
  std::vector<T> out(static_cast<size_t>(Cout) * chan);
  const T* xv = x.data();
  const T* wv = w.data();
  const T* bv = bias ? bias->data() : nullptr;

#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < Cout; ++oc) {
    T* och = out.data() + oc * chan;
    std::fill(och, och + chan, bv ? bv[oc] : T(0));
    for (int ic = 0; ic < Cin; ++ic) {
      const T* ich = xv + ic * chan;
      const T* wk = wv + ((static_cast<long long>(oc) * Cin + ic) * k * k * k);
      for (int kz = 0; kz < k; ++kz) {
        const int oz = kz - pad;
        for (int ky = 0; ky < k; ++ky) {
          const int oy = ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const int ox = kx - pad;
            const T wval = wk[(kz * k + ky) * k + kx];
            if (wval == T(0)) continue;
            const int z0 = std::max(0, -oz), z1 = std::min(D, D - oz);
            const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
            const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
            for (int z = z0; z < z1; ++z)
              for (int y = y0; y < y1; ++y) {
                T* drow = och + (static_cast<long long>(z) * H + y) * W;
                const T* srow = ich + (static_cast<long long>(z + oz) * H + (y + oy)) * W + ox;
                for (int xx = x0; xx < x1; ++xx) drow[xx] += wval * srow[xx];
              }
          }
        }
      }
    }
  }

  Tape<T>* tape = detail::joint_tape("conv3d", x, w);
  if (bias && bias->tracked()) {
    if (tape && bias->tape() != tape)
      throw ValidationError("conv3d: bias recorded on a different tape");
    tape = bias->tape();
  }
  auto xdata = x.storage();
  auto wdata = w.storage();
  const int xnode = x.tracked() ? x.node() : -1;
  const int wnode = w.tracked() ? w.node() : -1;
  const int bnode = (bias && bias->tracked()) ? bias->node() : -1;
  return detail::finish_op<T>(tape, {Cout, D, H, W}, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      const std::vector<T>& g = tp.grad_buf(id);
      if (xnode >= 0) {
        std::vector<T>& gx = tp.grad_buf(xnode);
        const T* wd = wdata->data();
#pragma omp parallel for schedule(static)
        for (int ic = 0; ic < Cin; ++ic) {
          T* gich = gx.data() + ic * chan;
          for (int oc = 0; oc < Cout; ++oc) {
            const T* goch = g.data() + oc * chan;
            const T* wk = wd + ((static_cast<long long>(oc) * Cin + ic) * k * k * k);
            for (int kz = 0; kz < k; ++kz) {
              const int oz = kz - pad;  // input z reads gout at z - oz
              for (int ky = 0; ky < k; ++ky) {
                const int oy = ky - pad;
                for (int kx = 0; kx < k; ++kx) {
                  const int ox = kx - pad;
                  const T wval = wk[(kz * k + ky) * k + kx];
                  if (wval == T(0)) continue;
                  const int z0 = std::max(0, oz), z1 = std::min(D, D + oz);
                  const int y0 = std::max(0, oy), y1 = std::min(H, H + oy);
                  const int x0 = std::max(0, ox), x1 = std::min(W, W + ox);
                  for (int z = z0; z < z1; ++z)
                    for (int y = y0; y < y1; ++y) {
                      T* drow = gich + (static_cast<long long>(z) * H + y) * W;
                      const T* srow = goch + (static_cast<long long>(z - oz) * H + (y - oy)) * W - ox;
                      for (int xx = x0; xx < x1; ++xx) drow[xx] += wval * srow[xx];
                    }
                }
              }
            }
          }
        }
      }
      if (wnode >= 0) {
        std::vector<T>& gw = tp.grad_buf(wnode);
        const T* xd = xdata->data();
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < Cout; ++oc) {
          const T* goch = g.data() + oc * chan;
          for (int ic = 0; ic < Cin; ++ic) {
            const T* ich = xd + ic * chan;
            T* gwk = gw.data() + ((static_cast<long long>(oc) * Cin + ic) * k * k * k);
            for (int kz = 0; kz < k; ++kz) {
              const int oz = kz - pad;
              for (int ky = 0; ky < k; ++ky) {
                const int oy = ky - pad;
                for (int kx = 0; kx < k; ++kx) {
                  const int ox = kx - pad;
                  const int z0 = std::max(0, -oz), z1 = std::min(D, D - oz);
                  const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
                  const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
                  T acc = 0;
                  for (int z = z0; z < z1; ++z)
                    for (int y = y0; y < y1; ++y) {
                      const T* grow = goch + (static_cast<long long>(z) * H + y) * W;
                      const T* srow = ich + (static_cast<long long>(z + oz) * H + (y + oy)) * W + ox;
                      for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * srow[xx];
                    }
                  gwk[(kz * k + ky) * k + kx] += acc;
                }
              }
            }
          }
        }
      }
      if (bnode >= 0) {
        std::vector<T>& gb = tp.grad_buf(bnode);
        for (int oc = 0; oc < Cout; ++oc) {
          const T* goch = g.data() + oc * chan;
          T acc = 0;
          for (long long i = 0; i < chan; ++i) acc += goch[i];
          gb[oc] += acc;
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// 2x average pooling / nearest-neighbor upsampling on [C,D,H,W]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> avg_pool3d(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] % 2 || s[2] % 2 || s[3] % 2)
    throw ValidationError("avg_pool3d: need even [C,D,H,W], got " + shape_str(s));
  const int C = s[0], D = s[1], H = s[2], W = s[3];
  const int d = D / 2, h = H / 2, w = W / 2;
  std::vector<T> out(static_cast<size_t>(C) * d * h * w);
  const T* xv = x.data();
  auto xat = [&](int c, int z, int y, int xx) -> T {
    return xv[((static_cast<long long>(c) * D + z) * H + y) * W + xx];
  };
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          T acc = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) acc += xat(c, 2 * z + dz, 2 * y + dy, 2 * xx + dx);
          out[((static_cast<long long>(c) * d + z) * h + y) * w + xx] = acc * T(0.125);
        }
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), {C, d, h, w}, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              const T gv = g[((static_cast<long long>(c) * d + z) * h + y) * w + xx] * T(0.125);
              for (int dz = 0; dz < 2; ++dz)
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx)
                    gx[((static_cast<long long>(c) * D + 2 * z + dz) * H + 2 * y + dy) * W + 2 * xx + dx] += gv;
            }
    };
  });
}

template <class T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ValidationError("upsample_nearest3d: need [C,D,H,W], got " + shape_str(s));
  const int C = s[0], D = s[1], H = s[2], W = s[3];
  const int d = D * 2, h = H * 2, w = W * 2;
  std::vector<T> out(static_cast<size_t>(C) * d * h * w);
  const T* xv = x.data();
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y) {
        const T* srow = xv + ((static_cast<long long>(c) * D + z / 2) * H + y / 2) * W;
        T* drow = out.data() + ((static_cast<long long>(c) * d + z) * h + y) * w;
        for (int xx = 0; xx < w; ++xx) drow[xx] = srow[xx / 2];
      }
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), {C, d, h, w}, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < h; ++y) {
            const T* grow = g.data() + ((static_cast<long long>(c) * d + z) * h + y) * w;
            T* drow = gx.data() + ((static_cast<long long>(c) * D + z / 2) * H + y / 2) * W;
            for (int xx = 0; xx < w; ++xx) drow[xx / 2] += grow[xx];
          }
    };
  });
}

// ---------------------------------------------------------------------------
// group normalization over [C, spatial...]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int groups,
                     T eps = T(1e-5)) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ValidationError("group_norm: need rank >= 2, got " + shape_str(s));
  const int C = s[0];
  const long long S = x.size() / C;
  if (groups <= 0 || C % groups != 0)
    throw ValidationError("group_norm: groups " + std::to_string(groups) + " does not divide channels " +
                          std::to_string(C));
  if (gamma.size() != C || beta.size() != C)
    throw ValidationError("group_norm: gamma/beta must have " + std::to_string(C) + " channels");
  const int cpg = C / groups;
  const long long m = cpg * S;
  const T* xv = x.data();
  const T* gm = gamma.data();
  const T* bt = beta.data();
  std::vector<T> out(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(groups);
  for (int gi = 0; gi < groups; ++gi) {
    const long long base = static_cast<long long>(gi) * cpg * S;
    T mu = 0;
    for (long long i = 0; i < m; ++i) mu += xv[base + i];
    mu /= T(m);
    T var = 0;
    for (long long i = 0; i < m; ++i) {
      T dv = xv[base + i] - mu;
      var += dv * dv;
    }
    var /= T(m);
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[gi] = istd;
    for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
      for (long long i = 0; i < S; ++i) {
        const long long idx = c * S + i;
        const T xh = (xv[idx] - mu) * istd;
        (*xhat)[idx] = xh;
        out[idx] = gm[c] * xh + bt[c];
      }
  }
  Tape<T>* tape = detail::joint_tape("group_norm", x, gamma);
  if (!tape && beta.tracked()) tape = beta.tape();
  auto gdata = gamma.storage();
  const int xnode = x.tracked() ? x.node() : -1;
  const int gnode = gamma.tracked() ? gamma.node() : -1;
  const int bnode = beta.tracked() ? beta.node() : -1;
  return detail::finish_op<T>(tape, s, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      const std::vector<T>& g = tp.grad_buf(id);
      const T* gmv = gdata->data();
      if (gnode >= 0) {
        std::vector<T>& gg = tp.grad_buf(gnode);
        for (int c = 0; c < C; ++c) {
          T acc = 0;
          for (long long i = 0; i < S; ++i) acc += g[c * S + i] * (*xhat)[c * S + i];
          gg[c] += acc;
        }
      }
      if (bnode >= 0) {
        std::vector<T>& gb = tp.grad_buf(bnode);
        for (int c = 0; c < C; ++c) {
          T acc = 0;
          for (long long i = 0; i < S; ++i) acc += g[c * S + i];
          gb[c] += acc;
        }
      }
      if (xnode >= 0) {
        std::vector<T>& gx = tp.grad_buf(xnode);
        for (int gi = 0; gi < groups; ++gi) {
          const long long base = static_cast<long long>(gi) * cpg * S;
          T mean_gw = 0, mean_gwx = 0;
          for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
            for (long long i = 0; i < S; ++i) {
              const long long idx = c * S + i;
              const T gw = g[idx] * gmv[c];
              mean_gw += gw;
              mean_gwx += gw * (*xhat)[idx];
            }
          mean_gw /= T(m);
          mean_gwx /= T(m);
          const T istd = (*inv_std)[gi];
          for (int c = gi * cpg; c < (gi + 1) * cpg; ++c)
            for (long long i = 0; i < S; ++i) {
              const long long idx = c * S + i;
              const T gw = g[idx] * gmv[c];
              gx[idx] += istd * (gw - mean_gw - (*xhat)[idx] * mean_gwx);
            }
          (void)base;
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const auto& s = x.shape();
  const int V = s.back();
  const long long rows = x.size() / V;
  std::vector<T> out(x.size());
  const T* xv = x.data();
  for (long long r = 0; r < rows; ++r) {
    const T* row = xv + r * V;
    T* orow = out.data() + r * V;
    T mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (int j = 0; j < V; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    const T inv = T(1) / denom;
    for (int j = 0; j < V; ++j) orow[j] *= inv;
  }
  auto ydata = std::make_shared<std::vector<T>>(out);
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), s, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (long long r = 0; r < rows; ++r) {
        const T* yrow = ydata->data() + r * V;
        const T* grow = g.data() + r * V;
        T dotv = 0;
        for (int j = 0; j < V; ++j) dotv += grow[j] * yrow[j];
        for (int j = 0; j < V; ++j) gx[r * V + j] += yrow[j] * (grow[j] - dotv);
      }
    };
  });
}

// ---------------------------------------------------------------------------
// channel concat / slice / per-channel bias on [C, spatial...]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || sa.size() < 2 ||
      !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
    throw ValidationError("concat_channels: incompatible " + shape_str(sa) + " vs " + shape_str(sb));
  std::vector<int> out_shape = sa;
  out_shape[0] = sa[0] + sb[0];
  std::vector<T> out(a.size() + b.size());
  std::copy(a.data(), a.data() + a.size(), out.begin());
  std::copy(b.data(), b.data() + b.size(), out.begin() + a.size());
  Tape<T>* tape = detail::joint_tape("concat_channels", a, b);
  const int anode = a.tracked() ? a.node() : -1;
  const int bnode = b.tracked() ? b.node() : -1;
  const int na = a.size(), nb = b.size();
  return detail::finish_op<T>(tape, std::move(out_shape), std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      const std::vector<T>& g = tp.grad_buf(id);
      if (anode >= 0) {
        std::vector<T>& ga = tp.grad_buf(anode);
        for (int i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (bnode >= 0) {
        std::vector<T>& gb = tp.grad_buf(bnode);
        for (int i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    };
  });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  const auto& s = x.shape();
  if (s.size() < 2 || c0 < 0 || c1 > s[0] || c0 >= c1)
    throw ValidationError("slice_channels: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") for " + shape_str(s));
  const long long S = x.size() / s[0];
  std::vector<int> out_shape = s;
  out_shape[0] = c1 - c0;
  std::vector<T> out(x.data() + c0 * S, x.data() + c1 * S);
  const int xnode = x.tracked() ? x.node() : -1;
  const long long n = out.size();
  return detail::finish_op<T>(x.tape(), std::move(out_shape), std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (long long i = 0; i < n; ++i) gx[c0 * S + i] += g[i];
    };
  });
}

template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const auto& s = x.shape();
  if (s.size() < 2 || b.size() != s[0])
    throw ValidationError("add_channel_bias: " + shape_str(s) + " with bias " + shape_str(b.shape()));
  const int C = s[0];
  const long long S = x.size() / C;
  std::vector<T> out(x.size());
  const T* xv = x.data();
  const T* bv = b.data();
  for (int c = 0; c < C; ++c)
    for (long long i = 0; i < S; ++i) out[c * S + i] = xv[c * S + i] + bv[c];
  Tape<T>* tape = detail::joint_tape("add_channel_bias", x, b);
  const int xnode = x.tracked() ? x.node() : -1;
  const int bnode = b.tracked() ? b.node() : -1;
  return detail::finish_op<T>(tape, s, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      const std::vector<T>& g = tp.grad_buf(id);
      if (xnode >= 0) {
        std::vector<T>& gx = tp.grad_buf(xnode);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bnode >= 0) {
        std::vector<T>& gb = tp.grad_buf(bnode);
        for (int c = 0; c < C; ++c) {
          T acc = 0;
          for (long long i = 0; i < S; ++i) acc += g[c * S + i];
          gb[c] += acc;
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// total variation: mean squared forward difference over the three spatial
// axes of [C,N,N,N]
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> tv3d(const Tensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ValidationError("tv3d: need [C,D,H,W], got " + shape_str(s));
  const int C = s[0], D = s[1], H = s[2], W = s[3];
  const T* xv = x.data();
  auto at = [&](int c, int z, int y, int xx) -> long long {
    return ((static_cast<long long>(c) * D + z) * H + y) * W + xx;
  };
  long long pairs = static_cast<long long>(C) * ((D - 1) * H * W + D * (H - 1) * W + D * H * (W - 1));
  if (pairs == 0) pairs = 1;
  T acc = 0;
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const T v = xv[at(c, z, y, xx)];
          if (z + 1 < D) {
            T dv = xv[at(c, z + 1, y, xx)] - v;
            acc += dv * dv;
          }
          if (y + 1 < H) {
            T dv = xv[at(c, z, y + 1, xx)] - v;
            acc += dv * dv;
          }
          if (xx + 1 < W) {
            T dv = xv[at(c, z, y, xx + 1)] - v;
            acc += dv * dv;
          }
        }
  acc /= T(pairs);
  auto xdata = x.storage();
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), {1}, {acc}, [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const T g = tp.grad_buf(id)[0] * T(2) / T(pairs);
      std::vector<T>& gx = tp.grad_buf(xnode);
      const T* xd = xdata->data();
      for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
              const long long i = at(c, z, y, xx);
              if (z + 1 < D) {
                const long long j = at(c, z + 1, y, xx);
                const T dv = (xd[j] - xd[i]) * g;
                gx[j] += dv;
                gx[i] -= dv;
              }
              if (y + 1 < H) {
                const long long j = at(c, z, y + 1, xx);
                const T dv = (xd[j] - xd[i]) * g;
                gx[j] += dv;
                gx[i] -= dv;
              }
              if (xx + 1 < W) {
                const long long j = at(c, z, y, xx + 1);
                const T dv = (xd[j] - xd[i]) * g;
                gx[j] += dv;
                gx[i] -= dv;
              }
            }
    };
  });
}

}  // namespace voxrf
