#pragma once

#include "voxrf/tensor.hpp"

namespace voxrf {

// Density/color activations applied at render time. The grid itself stores
// pre-activations so additive Gaussian noise keeps fields valid.
struct ActivationConfig {
  double density_scale = 25.0;     // density per scene unit at softplus ~= 1
  double density_sharpness = 10.0; // slope of the softplus argument
};

inline double activate_density(double pre, const ActivationConfig& cfg) {
  return cfg.density_scale * softplus_val(cfg.density_sharpness * pre);
}
inline double activate_density_grad(double pre, const ActivationConfig& cfg) {
  return cfg.density_scale * cfg.density_sharpness * sigmoid_val(cfg.density_sharpness * pre);
}
// clamped-linear color: pure black/white reachable at bounded pre-activations
inline double activate_color(double pre) { return std::min(1.0, std::max(0.0, (pre + 1.0) * 0.5)); }
inline double activate_color_grad(double pre) { return (pre > -1.0 && pre < 1.0) ? 0.5 : 0.0; }

// Explicit voxel radiance field over X = [-1,1]^3: a [4,N,N,N] tensor of
// pre-activated (density, R, G, B) values. Vertices sit at voxel centers,
// spacing 2/N.
template <class T>
struct RadianceField {
  int n = 0;
  Tensor<T> values;  // [4, N, N, N], index order [c][z][y][x]

  RadianceField() = default;
  explicit RadianceField(int resolution)
      : n(resolution), values(Tensor<T>({4, resolution, resolution, resolution})) {}
  RadianceField(int resolution, Tensor<T> v) : n(resolution), values(std::move(v)) {
    std::vector<int> want{4, n, n, n};
    if (values.shape() != want)
      throw ValidationError("radiance field: expected shape " + shape_str(want) + ", got " +
                            shape_str(values.shape()));
  }

  T at(int c, int z, int y, int x) const {
    return values[((static_cast<long long>(c) * n + z) * n + y) * n + x];
  }
  T& at(int c, int z, int y, int x) {
    return values.mutable_data()[((static_cast<long long>(c) * n + z) * n + y) * n + x];
  }
};

using FieldF = RadianceField<float>;
using FieldD = RadianceField<double>;

namespace detail {

// 8-corner stencil of a trilinear query. Border queries clamp to the outer
// vertex layer so the interpolant covers all of [-1,1].
struct TrilinearStencil {
  int idx[8];     // flat [z][y][x] offsets into an N^3 channel
  double wgt[8];
  bool inside;
};

inline TrilinearStencil trilinear_stencil(int n, const Vec3& p) {
  TrilinearStencil st{};
  st.inside = p[0] >= -1.0 && p[0] <= 1.0 && p[1] >= -1.0 && p[1] <= 1.0 && p[2] >= -1.0 && p[2] <= 1.0;
  if (!st.inside) return st;
  const double h = 2.0 / n;
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    double u = (p[a] + 1.0) / h - 0.5;
    double fl = std::floor(u);
    int i = static_cast<int>(fl);
    double fr = u - fl;
    if (i < 0) {
      i = 0;
      fr = 0.0;
    } else if (i >= n - 1) {
      i = n - 1;
      fr = 0.0;
    }
    i0[a] = i;
    f[a] = fr;
  }
  int c = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx, ++c) {
        const int zi = std::min(i0[2] + dz, n - 1);
        const int yi = std::min(i0[1] + dy, n - 1);
        const int xi = std::min(i0[0] + dx, n - 1);
        st.idx[c] = (zi * n + yi) * n + xi;
        st.wgt[c] = (dz ? f[2] : 1.0 - f[2]) * (dy ? f[1] : 1.0 - f[1]) * (dx ? f[0] : 1.0 - f[0]);
      }
  return st;
}

}  // namespace detail

struct FieldSample {
  double pre_density = 0.0;
  Vec3 pre_color{0.0, 0.0, 0.0};
  bool inside = false;
};

// Continuous trilinear query of the pre-activated field.
template <class T>
FieldSample sample_field(const RadianceField<T>& f, const Vec3& p) {
  FieldSample out;
  auto st = detail::trilinear_stencil(f.n, p);
  out.inside = st.inside;
  if (!st.inside) return out;
  const long long chan = static_cast<long long>(f.n) * f.n * f.n;
  const T* v = f.values.data();
  for (int c = 0; c < 8; ++c) {
    out.pre_density += st.wgt[c] * v[st.idx[c]];
    out.pre_color[0] += st.wgt[c] * v[chan + st.idx[c]];
    out.pre_color[1] += st.wgt[c] * v[2 * chan + st.idx[c]];
    out.pre_color[2] += st.wgt[c] * v[3 * chan + st.idx[c]];
  }
  return out;
}

// Activated query with the out-of-domain vacuum convention.
template <class T>
void sample_density_color(const RadianceField<T>& f, const Vec3& p, const ActivationConfig& cfg,
                          double* sigma, Vec3* rgb) {
  FieldSample s = sample_field(f, p);
  if (!s.inside) {
    *sigma = 0.0;
    *rgb = {0.0, 0.0, 0.0};
    return;
  }
  *sigma = activate_density(s.pre_density, cfg);
  *rgb = {activate_color(s.pre_color[0]), activate_color(s.pre_color[1]), activate_color(s.pre_color[2])};
}

// Differentiable batched trilinear query: values [4,N,N,N], K points -> [K,4].
// Out-of-domain rows are zero with no gradient.
template <class T>
Tensor<T> sample_trilinear(const Tensor<T>& values, const std::vector<Vec3>& points) {
  const auto& s = values.shape();
  if (s.size() != 4 || s[0] != 4 || s[1] != s[2] || s[2] != s[3])
    throw ValidationError("sample_trilinear: expected [4,N,N,N], got " + shape_str(s));
  const int n = s[1];
  const long long chan = static_cast<long long>(n) * n * n;
  const int K = static_cast<int>(points.size());
  std::vector<T> out(static_cast<size_t>(K) * 4, T(0));
  auto stencils = std::make_shared<std::vector<detail::TrilinearStencil>>(K);
  const T* v = values.data();
  for (int i = 0; i < K; ++i) {
    (*stencils)[i] = detail::trilinear_stencil(n, points[i]);
    const auto& st = (*stencils)[i];
    if (!st.inside) continue;
    for (int ch = 0; ch < 4; ++ch) {
      T acc = 0;
      for (int c = 0; c < 8; ++c) acc += static_cast<T>(st.wgt[c]) * v[ch * chan + st.idx[c]];
      out[static_cast<size_t>(i) * 4 + ch] = acc;
    }
  }
  const int vnode = values.tracked() ? values.node() : -1;
  return detail::finish_op<T>(values.tape(), {K, 4}, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (vnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gv = tp.grad_buf(vnode);
      for (int i = 0; i < K; ++i) {
        const auto& st = (*stencils)[i];
        if (!st.inside) continue;
        for (int ch = 0; ch < 4; ++ch) {
          const T gval = g[static_cast<size_t>(i) * 4 + ch];
          for (int c = 0; c < 8; ++c) gv[ch * chan + st.idx[c]] += gval * static_cast<T>(st.wgt[c]);
        }
      }
    };
  });
}

// Clamp every pre-activation into [-1,1]; applied after fitting and as an
// optional sampler post-process.
template <class T>
RadianceField<T> clamp_field(const RadianceField<T>& f) {
  RadianceField<T> out(f.n);
  const T* src = f.values.data();
  T* dst = out.values.mutable_data();
  for (int i = 0; i < f.values.size(); ++i) dst[i] = std::min(T(1), std::max(T(-1), src[i]));
  return out;
}

}  // namespace voxrf
