#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "voxrf/common.hpp"
#include "voxrf/random.hpp"

namespace voxrf {

template <class T>
class Tape;

// Dense row-major tensor. Values are treated as immutable once an op has
// consumed them; mutable_data() exists for initializers and the optimizer,
// which own their tensors between steps.
template <class T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<T>>()) {}
  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(count(shape_), T(0))) {}
  Tensor(std::vector<int> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<size_t>(count(shape_)) != data_->size())
      throw ValidationError("tensor: shape " + shape_str(shape_) + " does not match " +
                            std::to_string(data_->size()) + " values");
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }
  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int size() const { return static_cast<int>(data_->size()); }
  const T* data() const { return data_->data(); }
  T* mutable_data() { return data_->data(); }
  const std::shared_ptr<std::vector<T>>& storage() const { return data_; }
  T operator[](int i) const { return (*data_)[i]; }
  T item() const {
    if (size() != 1) throw ValidationError("item(): tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool tracked() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }

  static int count(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw ValidationError("tensor: nonpositive extent in shape " + shape_str(s));
      n *= d;
    }
    return static_cast<int>(n);
  }

  static Tensor tracked_view(Tape<T>* tape, int node, std::vector<int> shape,
                             std::shared_ptr<std::vector<T>> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order; backward() walks it once in reverse. Gradients exist
// only for tensors recorded on the tape - untracked inputs have none.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> watch(const Tensor<T>& x) {
    if (x.tracked() && x.tape() == this) return x;
    int id = add_node(x.shape());
    return Tensor<T>::tracked_view(this, id, x.shape(), x.storage());
  }

  int add_node(const std::vector<int>& shape) {
    nodes_.push_back(Node{shape, {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_back(int node, std::function<void(Tape&)> fn) { nodes_[node].back = std::move(fn); }

  std::vector<T>& grad_buf(int node) { return nodes_[node].grad; }

  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ValidationError("backward: loss is not scalar, shape " + shape_str(loss.shape()));
    if (!loss.tracked() || loss.tape() != this)
      throw ValidationError("backward: loss was not recorded on this tape");
    for (auto& n : nodes_) n.grad.assign(Tensor<T>::count(n.shape), T(0));
    nodes_[loss.node()].grad[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this);
  }

  bool has_grad(const Tensor<T>& x) const {
    return x.tracked() && x.tape() == this && !nodes_[x.node()].grad.empty();
  }

  Tensor<T> grad(const Tensor<T>& x) const {
    if (!x.tracked() || x.tape() != this)
      throw ValidationError("grad: tensor is not tracked on this tape");
    const Node& n = nodes_[x.node()];
    if (n.grad.empty()) throw ValidationError("grad: backward() has not been run");
    return Tensor<T>(n.shape, n.grad);
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<T> grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
};

namespace detail {

// Finish an op: wrap computed values, register the node and its adjoint.
// make_back receives the fresh node id so the closure can read its own grad.
template <class T, class MakeBack>
Tensor<T> finish_op(Tape<T>* tape, std::vector<int> shape, std::vector<T> values, MakeBack make_back) {
  auto data = std::make_shared<std::vector<T>>(std::move(values));
  if (!tape) return Tensor<T>::tracked_view(nullptr, -1, std::move(shape), std::move(data));
  int id = tape->add_node(shape);
  tape->set_back(id, make_back(id));
  return Tensor<T>::tracked_view(tape, id, std::move(shape), std::move(data));
}

template <class T>
Tape<T>* joint_tape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tracked() && b.tracked() && a.tape() != b.tape())
    throw ValidationError(std::string(op) + ": operands recorded on different tapes");
  return a.tracked() ? a.tape() : (b.tracked() ? b.tape() : nullptr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops (exact-shape match or scalar broadcast on either side)
// ---------------------------------------------------------------------------

template <class T, class F, class DA, class DB>
Tensor<T> binary_ew(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA dfda, DB dfdb) {
  const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  const std::vector<int>& out_shape = (b_scalar && !a_scalar) ? a.shape() : (a_scalar && !b_scalar) ? b.shape() : a.shape();
  const int n = Tensor<T>::count(out_shape);
  std::vector<T> out(n);
  const T* av = a.data();
  const T* bv = b.data();
  for (int i = 0; i < n; ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);

  Tape<T>* tape = detail::joint_tape(op, a, b);
  auto adata = a.storage();
  auto bdata = b.storage();
  const int anode = (a.tracked() && a.tape() == tape) ? a.node() : -1;
  const int bnode = (b.tracked() && b.tape() == tape) ? b.node() : -1;
  return detail::finish_op<T>(tape, out_shape, std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      const std::vector<T>& g = tp.grad_buf(id);
      const T* ad = adata->data();
      const T* bd = bdata->data();
      if (anode >= 0) {
        std::vector<T>& ga = tp.grad_buf(anode);
        if (a_scalar && n > 1) {
          T acc = 0;
          for (int i = 0; i < n; ++i) acc += g[i] * dfda(ad[0], bd[b_scalar ? 0 : i]);
          ga[0] += acc;
        } else {
          for (int i = 0; i < n; ++i) ga[i] += g[i] * dfda(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
        }
      }
      if (bnode >= 0) {
        std::vector<T>& gb = tp.grad_buf(bnode);
        if (b_scalar && n > 1) {
          T acc = 0;
          for (int i = 0; i < n; ++i) acc += g[i] * dfdb(ad[a_scalar ? 0 : i], bd[0]);
          gb[0] += acc;
        } else {
          for (int i = 0; i < n; ++i) gb[i] += g[i] * dfdb(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
        }
      }
    };
  });
}

template <class T, class F, class DF>
Tensor<T> unary_ew(const Tensor<T>& x, F f, DF dfdx) {
  const int n = x.size();
  std::vector<T> out(n);
  const T* xv = x.data();
  for (int i = 0; i < n; ++i) out[i] = f(xv[i]);
  Tape<T>* tape = x.tape();
  auto xdata = x.storage();
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(tape, x.shape(), std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      const T* xd = xdata->data();
      for (int i = 0; i < n; ++i) gx[i] += g[i] * dfdx(xd[i]);
    };
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_ew(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, T c) {
  return unary_ew(a, [=](T x) { return x + c; }, [](T) { return T(1); });
}
template <class T>
Tensor<T> sub(T c, const Tensor<T>& a) {
  return unary_ew(a, [=](T x) { return c - x; }, [](T) { return T(-1); });
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, T c) {
  return unary_ew(a, [=](T x) { return x * c; }, [=](T) { return c; });
}
template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul(a, T(-1));
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_ew(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}
template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_ew(x, [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}
template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_ew(x, [](T v) { return std::sqrt(v); },
                  [](T v) { return T(0.5) / std::sqrt(v); });
}

template <class T>
T softplus_val(T v) {
  if (v > T(20)) return v;
  if (v < T(-20)) return std::exp(v);
  return std::log1p(std::exp(v));
}
template <class T>
T sigmoid_val(T v) {
  if (v >= 0) {
    T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary_ew(x, [](T v) { return softplus_val(v); }, [](T v) { return sigmoid_val(v); });
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_ew(x, [](T v) { return sigmoid_val(v); },
                  [](T v) {
                    T s = sigmoid_val(v);
                    return s * (T(1) - s);
                  });
}
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  // subgradient at 0 is 0
  return unary_ew(x, [](T v) { return v > 0 ? v : T(0); }, [](T v) { return v > 0 ? T(1) : T(0); });
}
template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary_ew(x, [](T v) { return v * sigmoid_val(v); },
                  [](T v) {
                    T s = sigmoid_val(v);
                    return s + v * s * (T(1) - s);
                  });
}
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  // pass-through gradient strictly inside (lo, hi), zero at/outside the clamp
  return unary_ew(x, [=](T v) { return std::min(hi, std::max(lo, v)); },
                  [=](T v) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  const int n = x.size();
  const T* xv = x.data();
  T acc = 0;
  for (int i = 0; i < n; ++i) acc += xv[i];
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), {1}, {acc}, [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const T g = tp.grad_buf(id)[0];
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (int i = 0; i < n; ++i) gx[i] += g;
    };
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul(sum(x), T(1) / T(x.size()));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
  if (Tensor<T>::count(new_shape) != x.size())
    throw ValidationError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  const int n = x.size();
  std::vector<T> out(x.data(), x.data() + n);
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), std::move(new_shape), std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (int i = 0; i < n; ++i) gx[i] += g[i];
    };
  });
}

// [B,M,N] -> [B,N,M] (or [M,N] -> [N,M])
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  auto s = x.shape();
  if (s.size() != 2 && s.size() != 3)
    throw ValidationError("transpose_last2: need rank 2 or 3, got " + shape_str(s));
  const int B = s.size() == 3 ? s[0] : 1;
  const int M = s[s.size() - 2], N = s[s.size() - 1];
  std::vector<int> out_shape = s;
  out_shape[s.size() - 2] = N;
  out_shape[s.size() - 1] = M;
  std::vector<T> out(x.size());
  const T* xv = x.data();
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) out[(static_cast<long long>(b) * N + j) * M + i] = xv[(static_cast<long long>(b) * M + i) * N + j];
  const int xnode = x.tracked() ? x.node() : -1;
  return detail::finish_op<T>(x.tape(), std::move(out_shape), std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      if (xnode < 0) return;
      const std::vector<T>& g = tp.grad_buf(id);
      std::vector<T>& gx = tp.grad_buf(xnode);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            gx[(static_cast<long long>(b) * M + i) * N + j] += g[(static_cast<long long>(b) * N + j) * M + i];
    };
  });
}

// ---------------------------------------------------------------------------
// matmul: [M,K]x[K,N], [M,K]x[K], or batched [B,M,K]x[B,K,N]
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void gemm(const T* A, const T* B, T* C, int M, int K, int N, bool accumulate) {
  if (!accumulate) std::fill(C, C + static_cast<long long>(M) * N, T(0));
  for (int i = 0; i < M; ++i) {
    const T* arow = A + static_cast<long long>(i) * K;
    T* crow = C + static_cast<long long>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* brow = B + static_cast<long long>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}
// gA[i,k] += sum_j gC[i,j] * B[k,j]   (B stored [K,N])
template <class T>
void gemm_grad_a(const T* gC, const T* B, T* gA, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* grow = gC + static_cast<long long>(i) * N;
    T* garow = gA + static_cast<long long>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T* brow = B + static_cast<long long>(k) * N;
      T acc = 0;
      for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
      garow[k] += acc;
    }
  }
}
// gB[k,j] += sum_i A[i,k] * gC[i,j]   (A stored [M,K])
template <class T>
void gemm_grad_b(const T* A, const T* gC, T* gB, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = A + static_cast<long long>(i) * K;
    const T* grow = gC + static_cast<long long>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      T* brow = gB + static_cast<long long>(k) * N;
      for (int j = 0; j < N; ++j) brow[j] += a * grow[j];
    }
  }
}
}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  int B = 1, M, K, N;
  std::vector<int> out_shape;
  bool b_is_vec = false;
  if (sa.size() == 2 && sb.size() == 2) {
    M = sa[0], K = sa[1], N = sb[1];
    if (sb[0] != K) throw ValidationError("matmul: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    out_shape = {M, N};
  } else if (sa.size() == 2 && sb.size() == 1) {
    M = sa[0], K = sa[1], N = 1;
    if (sb[0] != K) throw ValidationError("matmul: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    out_shape = {M};
    b_is_vec = true;
  } else if (sa.size() == 3 && sb.size() == 3) {
    B = sa[0], M = sa[1], K = sa[2], N = sb[2];
    if (sb[0] != B || sb[1] != K)
      throw ValidationError("matmul: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    out_shape = {B, M, N};
  } else {
    throw ValidationError("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
  }
  std::vector<T> out(static_cast<size_t>(B) * M * N);
  for (int bi = 0; bi < B; ++bi)
    detail::gemm(a.data() + static_cast<long long>(bi) * M * K, b.data() + static_cast<long long>(bi) * K * N,
                 out.data() + static_cast<long long>(bi) * M * N, M, K, N, false);

  Tape<T>* tape = detail::joint_tape("matmul", a, b);
  auto adata = a.storage();
  auto bdata = b.storage();
  const int anode = a.tracked() ? a.node() : -1;
  const int bnode = b.tracked() ? b.node() : -1;
  (void)b_is_vec;
  return detail::finish_op<T>(tape, std::move(out_shape), std::move(out), [=](int id) {
    return [=](Tape<T>& tp) {
      const std::vector<T>& g = tp.grad_buf(id);
      for (int bi = 0; bi < B; ++bi) {
        const T* gv = g.data() + static_cast<long long>(bi) * M * N;
        if (anode >= 0)
          detail::gemm_grad_a(gv, bdata->data() + static_cast<long long>(bi) * K * N,
                              tp.grad_buf(anode).data() + static_cast<long long>(bi) * M * K, M, K, N);
        if (bnode >= 0)
          detail::gemm_grad_b(adata->data() + static_cast<long long>(bi) * M * K, gv,
                              tp.grad_buf(bnode).data() + static_cast<long long>(bi) * K * N, M, K, N);
      }
    };
  });
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> randn(std::vector<int> shape, RandomStream& rng) {
  Tensor<T> t(std::move(shape));
  T* d = t.mutable_data();
  for (int i = 0; i < t.size(); ++i) d[i] = static_cast<T>(rng.normal());
  return t;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ValidationError("max_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T m = 0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace voxrf
