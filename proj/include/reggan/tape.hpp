// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// Minimal reverse-mode automatic differentiation over dense tensors: the
// handful of ops the registration networks need (convolution, batch
// normalization, dense layers, pointwise activations, channel concat,
// bilinear warping and a few scalar reductions), recorded on a per-step
// graph and differentiated by walking the tape backwards.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "reggan/errors.hpp"
#include "reggan/image.hpp"

namespace reggan::tape {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw DimensionError("tensor data does not match shape");
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive");
      n *= std::size_t(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }
};

template <class T>
class Graph {
 public:
  using Tens = Tensor<T>;

  int leaf(Tens value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  const Tens& val(int id) const { return nodes_[std::size_t(id)].value; }
  bool requires_grad(int id) const { return nodes_[std::size_t(id)].requires_grad; }

  // Gradient buffer, allocated on first touch.
  Tens& grad(int id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.data.empty()) n.grad = Tens(n.value.shape);
    return n.grad;
  }
  bool has_grad(int id) const { return !nodes_[std::size_t(id)].grad.data.empty(); }

  // ---- ops -----------------------------------------------------------

  int conv2d(int x, int w, int b, int stride, int pad);
  int dense(int x, int w, int b);
  int batchnorm(int x, int gamma, int beta, Tens* run_mean, Tens* run_var, bool training,
                T momentum, T eps);
  int relu(int x) {
    return pointwise(x, [](T v) { return v > 0 ? v : T(0); },
                     [](T v, T) { return v > 0 ? T(1) : T(0); });
  }
  int leaky_relu(int x, T alpha) {
    return pointwise(x, [alpha](T v) { return v > 0 ? v : alpha * v; },
                     [alpha](T v, T) { return v > 0 ? T(1) : alpha; });
  }
  int tanh_op(int x) {
    return pointwise(x, [](T v) { return std::tanh(v); },
                     [](T, T y) { return T(1) - y * y; });
  }
  int sigmoid_op(int x) {
    return pointwise(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                     [](T, T y) { return y * (T(1) - y); });
  }
  int square(int x) {
    return pointwise(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
  }
  int scale(int x, T s);
  int add(int a, int b);
  int reshape(int x, std::vector<int> new_shape);
  int concat_c(int a, int b);
  int slice_c(int x, int c0, int c1);  // channels [c0, c1)
  int warp_nchw(int img, int field);
  int mean_all(int x);
  int mse_vs(int x, const Tens& target);
  int l1_vs(int x, const Tens& target);
  int weighted_sum(const std::vector<std::pair<int, T>>& terms);

  // Custom scalar-valued node; `fn` receives the input value and must fill
  // the gradient tensor, returning the loss value. The gradient is computed
  // eagerly during the forward pass.
  int unary_custom(int x, const std::function<T(const Tens&, Tens&)>& fn);
  int binary_custom(int a, int b,
                    const std::function<T(const Tens&, const Tens&, Tens&, Tens&)>& fn);

  // ---- reverse pass ----------------------------------------------------

  void backward(int node) {
    if (val(node).numel() != 1) throw std::invalid_argument("backward: node must be scalar");
    grad(node).data[0] = T(1);
    for (int id = node; id >= 0; --id) {
      Node& n = nodes_[std::size_t(id)];
      if (n.backward && !n.grad.data.empty() && n.requires_grad) n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tens value;
    Tens grad;
    bool requires_grad = false;
    std::function<void(Graph&, int)> backward;
  };
  std::vector<Node> nodes_;

  int pointwise(int x, std::function<T(T)> f, std::function<T(T, T)> df);

  int push(Tens value, bool requires_grad, std::function<void(Graph&, int)> bwd) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }
};

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

namespace detail {

inline void conv_bounds(int in_size, int out_size, int k, int stride, int pad, int& lo, int& hi) {
  // valid output coordinates o with 0 <= o*stride + k - pad < in_size
  int lo_num = pad - k;
  lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  int hi_num = in_size - 1 - k + pad;  // largest o*stride
  hi = hi_num < 0 ? -1 : std::min(out_size - 1, hi_num / stride);
}

// axpy / dot kernels on disjoint rows; restrict + explicit partial sums let
// the compiler vectorize without reassociating a single accumulator chain
template <class T>
inline void row_axpy(T* __restrict__ out, const T* __restrict__ in, T w, int len, int stride) {
  if (stride == 1) {
    for (int i = 0; i < len; ++i) out[i] += w * in[i];
  } else {
    for (int i = 0; i < len; ++i) out[std::size_t(i)] += w * in[std::size_t(i) * stride];
  }
}

template <class T>
inline void row_axpy_scatter(T* __restrict__ out, const T* __restrict__ in, T w, int len,
                             int stride) {
  if (stride == 1) {
    for (int i = 0; i < len; ++i) out[i] += w * in[i];
  } else {
    for (int i = 0; i < len; ++i) out[std::size_t(i) * stride] += w * in[std::size_t(i)];
  }
}

template <class T>
inline T row_dot(const T* __restrict__ a, const T* __restrict__ b, int len, int stride) {
  if (stride == 1) {
    T acc[8] = {};
    int i = 0;
    for (; i + 8 <= len; i += 8)
      for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    T total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < len; ++i) total += a[i] * b[i];
    return total;
  }
  T total = T(0);
  for (int i = 0; i < len; ++i) total += a[std::size_t(i)] * b[std::size_t(i) * stride];
  return total;
}

template <class T>
inline T row_sum(const T* __restrict__ a, std::size_t len) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j];
  T total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < len; ++i) total += a[i];
  return total;
}

}  // namespace detail

template <class T>
int Graph<T>::conv2d(int x, int w, int b, int stride, int pad) {
  const Tens& X = val(x);
  const Tens& W = val(w);
  const Tens& B = val(b);
  if (X.shape.size() != 4 || W.shape.size() != 4 || B.shape.size() != 1)
    throw DimensionError("conv2d: expected x[N,C,H,W], w[Co,Ci,kh,kw], b[Co]");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const int Co = W.dim(0), Ci = W.dim(1), kh = W.dim(2), kw = W.dim(3);
  if (Ci != C || B.dim(0) != Co) throw DimensionError("conv2d: channel mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (Wd + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw DimensionError("conv2d: output would be empty");

  Tens out({N, Co, Ho, Wo});
  const std::size_t in_plane = std::size_t(H) * Wd;
  const std::size_t out_plane = std::size_t(Ho) * Wo;
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* op = &out.data[(std::size_t(n) * Co + co) * out_plane];
      const T bias = B.data[std::size_t(co)];
      for (std::size_t i = 0; i < out_plane; ++i) op[i] = bias;
      for (int ci = 0; ci < C; ++ci) {
        const T* ip = &X.data[(std::size_t(n) * C + ci) * in_plane];
        const T* wp = &W.data[((std::size_t(co) * C + ci) * kh) * kw];
        for (int ky = 0; ky < kh; ++ky) {
          int oy_lo, oy_hi;
          detail::conv_bounds(H, Ho, ky, stride, pad, oy_lo, oy_hi);
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wp[std::size_t(ky) * kw + kx];
            if (wv == T(0)) continue;
            int ox_lo, ox_hi;
            detail::conv_bounds(Wd, Wo, kx, stride, pad, ox_lo, ox_hi);
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const int iy = oy * stride + ky - pad;
              const T* irow = ip + std::size_t(iy) * Wd + (std::size_t(ox_lo) * stride + kx - pad);
              T* orow = op + std::size_t(oy) * Wo + ox_lo;
              detail::row_axpy(orow, irow, wv, ox_hi - ox_lo + 1, stride);
            }
          }
        }
      }
    }
  }

  bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  auto bwd = [x, w, b, stride, pad, N, C, H, Wd, Co, kh, kw, Ho, Wo](Graph& g, int self) {
    const Tens& G = g.grad(self);
    const Tens& X = g.val(x);
    const Tens& W = g.val(w);
    const std::size_t in_plane = std::size_t(H) * Wd;
    const std::size_t out_plane = std::size_t(Ho) * Wo;

    if (g.requires_grad(b)) {
      Tens& dB = g.grad(b);
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
          dB.data[std::size_t(co)] +=
              detail::row_sum(&G.data[(std::size_t(n) * Co + co) * out_plane], out_plane);
    }
    if (g.requires_grad(w)) {
      Tens& dW = g.grad(w);
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
          const T* gp = &G.data[(std::size_t(n) * Co + co) * out_plane];
          for (int ci = 0; ci < C; ++ci) {
            const T* ip = &X.data[(std::size_t(n) * C + ci) * in_plane];
            T* dwp = &dW.data[((std::size_t(co) * C + ci) * kh) * kw];
            for (int ky = 0; ky < kh; ++ky) {
              int oy_lo, oy_hi;
              detail::conv_bounds(H, Ho, ky, stride, pad, oy_lo, oy_hi);
              for (int kx = 0; kx < kw; ++kx) {
                int ox_lo, ox_hi;
                detail::conv_bounds(Wd, Wo, kx, stride, pad, ox_lo, ox_hi);
                T acc = T(0);
                for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  const T* irow =
                      ip + std::size_t(iy) * Wd + (std::size_t(ox_lo) * stride + kx - pad);
                  const T* grow = gp + std::size_t(oy) * Wo + ox_lo;
                  acc += detail::row_dot(grow, irow, ox_hi - ox_lo + 1, stride);
                }
                dwp[std::size_t(ky) * kw + kx] += acc;
              }
            }
          }
        }
    }
    if (g.requires_grad(x)) {
      Tens& dX = g.grad(x);
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
          const T* gp = &G.data[(std::size_t(n) * Co + co) * out_plane];
          for (int ci = 0; ci < C; ++ci) {
            T* dxp = &dX.data[(std::size_t(n) * C + ci) * in_plane];
            const T* wp = &W.data[((std::size_t(co) * C + ci) * kh) * kw];
            for (int ky = 0; ky < kh; ++ky) {
              int oy_lo, oy_hi;
              detail::conv_bounds(H, Ho, ky, stride, pad, oy_lo, oy_hi);
              for (int kx = 0; kx < kw; ++kx) {
                const T wv = wp[std::size_t(ky) * kw + kx];
                if (wv == T(0)) continue;
                int ox_lo, ox_hi;
                detail::conv_bounds(Wd, Wo, kx, stride, pad, ox_lo, ox_hi);
                for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  T* dxrow =
                      dxp + std::size_t(iy) * Wd + (std::size_t(ox_lo) * stride + kx - pad);
                  const T* grow = gp + std::size_t(oy) * Wo + ox_lo;
                  detail::row_axpy_scatter(dxrow, grow, wv, ox_hi - ox_lo + 1, stride);
                }
              }
            }
          }
        }
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::dense(int x, int w, int b) {
  const Tens& X = val(x);
  const Tens& W = val(w);
  const Tens& B = val(b);
  if (X.shape.size() != 2 || W.shape.size() != 2 || B.shape.size() != 1)
    throw DimensionError("dense: expected x[N,F], w[O,F], b[O]");
  const int N = X.dim(0), F = X.dim(1), O = W.dim(0);
  if (W.dim(1) != F || B.dim(0) != O) throw DimensionError("dense: size mismatch");
  Tens out({N, O});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      const T* xr = &X.data[std::size_t(n) * F];
      const T* wr = &W.data[std::size_t(o) * F];
      T acc = B.data[std::size_t(o)];
      for (int f = 0; f < F; ++f) acc += xr[f] * wr[f];
      out.data[std::size_t(n) * O + o] = acc;
    }
  bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  auto bwd = [x, w, b, N, F, O](Graph& g, int self) {
    const Tens& G = g.grad(self);
    const Tens& X = g.val(x);
    const Tens& W = g.val(w);
    if (g.requires_grad(b)) {
      Tens& dB = g.grad(b);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) dB.data[std::size_t(o)] += G.data[std::size_t(n) * O + o];
    }
    if (g.requires_grad(w)) {
      Tens& dW = g.grad(w);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
          const T gv = G.data[std::size_t(n) * O + o];
          const T* xr = &X.data[std::size_t(n) * F];
          T* dwr = &dW.data[std::size_t(o) * F];
          for (int f = 0; f < F; ++f) dwr[f] += gv * xr[f];
        }
    }
    if (g.requires_grad(x)) {
      Tens& dX = g.grad(x);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
          const T gv = G.data[std::size_t(n) * O + o];
          const T* wr = &W.data[std::size_t(o) * F];
          T* dxr = &dX.data[std::size_t(n) * F];
          for (int f = 0; f < F; ++f) dxr[f] += gv * wr[f];
        }
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::batchnorm(int x, int gamma, int beta, Tens* run_mean, Tens* run_var, bool training,
                        T momentum, T eps) {
  const Tens& X = val(x);
  if (X.shape.size() != 4) throw DimensionError("batchnorm: expected x[N,C,H,W]");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  if (val(gamma).shape != std::vector<int>{C} || val(beta).shape != std::vector<int>{C})
    throw DimensionError("batchnorm: gamma/beta size mismatch");
  if (!run_mean || !run_var || run_mean->shape != std::vector<int>{C} ||
      run_var->shape != std::vector<int>{C})
    throw DimensionError("batchnorm: running statistics size mismatch");
  const std::size_t plane = std::size_t(H) * Wd;
  const std::size_t per_c = std::size_t(N) * plane;

  auto mean_c = std::make_shared<std::vector<T>>(std::size_t(C));
  auto var_c = std::make_shared<std::vector<T>>(std::size_t(C));
  for (int c = 0; c < C; ++c) {
    if (training) {
      T s = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = &X.data[(std::size_t(n) * C + c) * plane];
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const T mu = s / T(per_c);
      T v = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = &X.data[(std::size_t(n) * C + c) * plane];
        for (std::size_t i = 0; i < plane; ++i) {
          T e = p[i] - mu;
          v += e * e;
        }
      }
      v /= T(per_c);
      (*mean_c)[std::size_t(c)] = mu;
      (*var_c)[std::size_t(c)] = v;
      run_mean->data[std::size_t(c)] =
          (T(1) - momentum) * run_mean->data[std::size_t(c)] + momentum * mu;
      run_var->data[std::size_t(c)] =
          (T(1) - momentum) * run_var->data[std::size_t(c)] + momentum * v;
    } else {
      (*mean_c)[std::size_t(c)] = run_mean->data[std::size_t(c)];
      (*var_c)[std::size_t(c)] = run_var->data[std::size_t(c)];
    }
  }

  Tens out(X.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T mu = (*mean_c)[std::size_t(c)];
      const T inv = T(1) / std::sqrt((*var_c)[std::size_t(c)] + eps);
      const T gm = val(gamma).data[std::size_t(c)];
      const T bt = val(beta).data[std::size_t(c)];
      const T* p = &X.data[(std::size_t(n) * C + c) * plane];
      T* o = &out.data[(std::size_t(n) * C + c) * plane];
      for (std::size_t i = 0; i < plane; ++i) o[i] = gm * ((p[i] - mu) * inv) + bt;
    }

  bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  auto bwd = [x, gamma, beta, mean_c, var_c, training, eps, N, C, plane, per_c](Graph& g,
                                                                                int self) {
    const Tens& G = g.grad(self);
    const Tens& X = g.val(x);
    for (int c = 0; c < C; ++c) {
      const T mu = (*mean_c)[std::size_t(c)];
      const T inv = T(1) / std::sqrt((*var_c)[std::size_t(c)] + eps);
      const T gm = g.val(gamma).data[std::size_t(c)];
      // accumulate sums over the channel
      T sum_g = T(0), sum_gx = T(0);
      for (int n = 0; n < N; ++n) {
        const T* gp = &G.data[(std::size_t(n) * C + c) * plane];
        const T* xp = &X.data[(std::size_t(n) * C + c) * plane];
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * (xp[i] - mu) * inv;
        }
      }
      if (g.requires_grad(beta)) g.grad(beta).data[std::size_t(c)] += sum_g;
      if (g.requires_grad(gamma)) g.grad(gamma).data[std::size_t(c)] += sum_gx;
      if (g.requires_grad(x)) {
        Tens& dX = g.grad(x);
        const T m = T(per_c);
        for (int n = 0; n < N; ++n) {
          const T* gp = &G.data[(std::size_t(n) * C + c) * plane];
          const T* xp = &X.data[(std::size_t(n) * C + c) * plane];
          T* dp = &dX.data[(std::size_t(n) * C + c) * plane];
          if (training) {
            for (std::size_t i = 0; i < plane; ++i) {
              const T xh = (xp[i] - mu) * inv;
              dp[i] += gm * inv * (gp[i] - sum_g / m - xh * sum_gx / m);
            }
          } else {
            for (std::size_t i = 0; i < plane; ++i) dp[i] += gm * inv * gp[i];
          }
        }
      }
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::pointwise(int x, std::function<T(T)> f, std::function<T(T, T)> df) {
  const Tens& X = val(x);
  Tens out(X.shape);
  for (std::size_t i = 0; i < X.numel(); ++i) out.data[i] = f(X.data[i]);
  bool rg = requires_grad(x);
  auto bwd = [x, df](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const Tens& G = g.grad(self);
    const Tens& X = g.val(x);
    const Tens& Y = g.val(self);
    Tens& dX = g.grad(x);
    for (std::size_t i = 0; i < X.numel(); ++i) dX.data[i] += G.data[i] * df(X.data[i], Y.data[i]);
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::scale(int x, T s) {
  const Tens& X = val(x);
  Tens out(X.shape);
  for (std::size_t i = 0; i < X.numel(); ++i) out.data[i] = s * X.data[i];
  bool rg = requires_grad(x);
  auto bwd = [x, s](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const Tens& G = g.grad(self);
    Tens& dX = g.grad(x);
    for (std::size_t i = 0; i < G.numel(); ++i) dX.data[i] += s * G.data[i];
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::reshape(int x, std::vector<int> new_shape) {
  const Tens& X = val(x);
  if (Tens::numel_of(new_shape) != X.numel()) throw DimensionError("reshape: element count differs");
  Tens out(std::move(new_shape), X.data);
  bool rg = requires_grad(x);
  auto bwd = [x](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const Tens& G = g.grad(self);
    Tens& dX = g.grad(x);
    for (std::size_t i = 0; i < G.numel(); ++i) dX.data[i] += G.data[i];
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::add(int a, int b) {
  const Tens& A = val(a);
  const Tens& B = val(b);
  if (!A.same_shape(B)) throw DimensionError("add: shape mismatch");
  Tens out(A.shape);
  for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
  bool rg = requires_grad(a) || requires_grad(b);
  auto bwd = [a, b](Graph& g, int self) {
    const Tens& G = g.grad(self);
    if (g.requires_grad(a)) {
      Tens& dA = g.grad(a);
      for (std::size_t i = 0; i < G.numel(); ++i) dA.data[i] += G.data[i];
    }
    if (g.requires_grad(b)) {
      Tens& dB = g.grad(b);
      for (std::size_t i = 0; i < G.numel(); ++i) dB.data[i] += G.data[i];
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::concat_c(int a, int b) {
  const Tens& A = val(a);
  const Tens& B = val(b);
  if (A.shape.size() != 4 || B.shape.size() != 4 || A.dim(0) != B.dim(0) ||
      A.dim(2) != B.dim(2) || A.dim(3) != B.dim(3))
    throw DimensionError("concat_c: incompatible shapes");
  const int N = A.dim(0), Ca = A.dim(1), Cb = B.dim(1), H = A.dim(2), W = A.dim(3);
  const std::size_t plane = std::size_t(H) * W;
  Tens out({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::copy_n(&A.data[std::size_t(n) * Ca * plane], std::size_t(Ca) * plane,
                &out.data[std::size_t(n) * (Ca + Cb) * plane]);
    std::copy_n(&B.data[std::size_t(n) * Cb * plane], std::size_t(Cb) * plane,
                &out.data[(std::size_t(n) * (Ca + Cb) + Ca) * plane]);
  }
  bool rg = requires_grad(a) || requires_grad(b);
  auto bwd = [a, b, N, Ca, Cb, plane](Graph& g, int self) {
    const Tens& G = g.grad(self);
    if (g.requires_grad(a)) {
      Tens& dA = g.grad(a);
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < std::size_t(Ca) * plane; ++i)
          dA.data[std::size_t(n) * Ca * plane + i] +=
              G.data[std::size_t(n) * (Ca + Cb) * plane + i];
    }
    if (g.requires_grad(b)) {
      Tens& dB = g.grad(b);
      for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < std::size_t(Cb) * plane; ++i)
          dB.data[std::size_t(n) * Cb * plane + i] +=
              G.data[(std::size_t(n) * (Ca + Cb) + Ca) * plane + i];
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::slice_c(int x, int c0, int c1) {
  const Tens& X = val(x);
  if (X.shape.size() != 4 || c0 < 0 || c1 <= c0 || c1 > X.dim(1))
    throw DimensionError("slice_c: bad channel range");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int Cs = c1 - c0;
  const std::size_t plane = std::size_t(H) * W;
  Tens out({N, Cs, H, W});
  for (int n = 0; n < N; ++n)
    std::copy_n(&X.data[(std::size_t(n) * C + c0) * plane], std::size_t(Cs) * plane,
                &out.data[std::size_t(n) * Cs * plane]);
  bool rg = requires_grad(x);
  auto bwd = [x, c0, N, C, Cs, plane](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const Tens& G = g.grad(self);
    Tens& dX = g.grad(x);
    for (int n = 0; n < N; ++n)
      for (std::size_t i = 0; i < std::size_t(Cs) * plane; ++i)
        dX.data[(std::size_t(n) * C + c0) * plane + i] += G.data[std::size_t(n) * Cs * plane + i];
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::warp_nchw(int img, int field) {
  const Tens& I = val(img);
  const Tens& F = val(field);
  if (I.shape.size() != 4 || I.dim(1) != 1) throw DimensionError("warp: image must be [N,1,H,W]");
  if (F.shape.size() != 4 || F.dim(1) != 2) throw DimensionError("warp: field must be [N,2,H,W]");
  if (I.dim(0) != F.dim(0) || I.dim(2) != F.dim(2) || I.dim(3) != F.dim(3))
    throw DimensionError("warp: image/field dimensions differ");
  const int N = I.dim(0), H = I.dim(2), W = I.dim(3);
  const std::size_t plane = std::size_t(H) * W;
  Tens out({N, 1, H, W});
  for (int n = 0; n < N; ++n) {
    const T* src = &I.data[std::size_t(n) * plane];
    const T* dx = &F.data[std::size_t(n) * 2 * plane];
    const T* dy = dx + plane;
    T* o = &out.data[std::size_t(n) * plane];
    std::size_t i = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++i)
        o[i] = imaging::detail::sample_value(src, W, H, T(x) + dx[i], T(y) + dy[i],
                                             imaging::Border::Clamp);
  }
  bool rg = requires_grad(img) || requires_grad(field);
  auto bwd = [img, field, N, H, W, plane](Graph& g, int self) {
    const Tens& G = g.grad(self);
    const Tens& I = g.val(img);
    const Tens& F = g.val(field);
    const bool need_img = g.requires_grad(img);
    const bool need_field = g.requires_grad(field);
    for (int n = 0; n < N; ++n) {
      const T* src = &I.data[std::size_t(n) * plane];
      const T* dx = &F.data[std::size_t(n) * 2 * plane];
      const T* dy = dx + plane;
      const T* gp = &G.data[std::size_t(n) * plane];
      T* dimg = need_img ? &g.grad(img).data[std::size_t(n) * plane] : nullptr;
      T* ddx = need_field ? &g.grad(field).data[std::size_t(n) * 2 * plane] : nullptr;
      T* ddy = need_field ? ddx + plane : nullptr;
      std::size_t i = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x, ++i) {
          auto s = imaging::detail::sample_plane(src, W, H, T(x) + dx[i], T(y) + dy[i],
                                                 imaging::Border::Clamp);
          const T u = gp[i];
          if (need_img)
            for (int k = 0; k < 4; ++k)
              if (s.idx[k] >= 0) dimg[std::size_t(s.idx[k])] += u * s.w[k];
          if (need_field) {
            ddx[i] += u * s.dvdx;
            ddy[i] += u * s.dvdy;
          }
        }
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::mean_all(int x) {
  const Tens& X = val(x);
  T acc = T(0);
  for (T v : X.data) acc += v;
  Tens out({1});
  out.data[0] = acc / T(X.numel());
  bool rg = requires_grad(x);
  auto bwd = [x](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const T u = g.grad(self).data[0];
    Tens& dX = g.grad(x);
    const T s = u / T(dX.numel());
    for (std::size_t i = 0; i < dX.numel(); ++i) dX.data[i] += s;
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::mse_vs(int x, const Tens& target) {
  const Tens& X = val(x);
  if (!X.same_shape(target)) throw DimensionError("mse_vs: shape mismatch");
  auto tgt = std::make_shared<Tens>(target);
  T acc = T(0);
  for (std::size_t i = 0; i < X.numel(); ++i) {
    T d = X.data[i] - tgt->data[i];
    acc += d * d;
  }
  Tens out({1});
  out.data[0] = acc / T(X.numel());
  bool rg = requires_grad(x);
  auto bwd = [x, tgt](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const T u = g.grad(self).data[0];
    const Tens& X = g.val(x);
    Tens& dX = g.grad(x);
    const T s = u * T(2) / T(X.numel());
    for (std::size_t i = 0; i < X.numel(); ++i) dX.data[i] += s * (X.data[i] - tgt->data[i]);
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::l1_vs(int x, const Tens& target) {
  const Tens& X = val(x);
  if (!X.same_shape(target)) throw DimensionError("l1_vs: shape mismatch");
  auto tgt = std::make_shared<Tens>(target);
  T acc = T(0);
  for (std::size_t i = 0; i < X.numel(); ++i) acc += std::abs(X.data[i] - tgt->data[i]);
  Tens out({1});
  out.data[0] = acc / T(X.numel());
  bool rg = requires_grad(x);
  auto bwd = [x, tgt](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const T u = g.grad(self).data[0];
    const Tens& X = g.val(x);
    Tens& dX = g.grad(x);
    const T s = u / T(X.numel());
    for (std::size_t i = 0; i < X.numel(); ++i) {
      T d = X.data[i] - tgt->data[i];
      dX.data[i] += s * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
    }
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::weighted_sum(const std::vector<std::pair<int, T>>& terms) {
  Tens out({1});
  bool rg = false;
  for (auto& [id, wgt] : terms) {
    if (val(id).numel() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    out.data[0] += wgt * val(id).data[0];
    rg = rg || requires_grad(id);
  }
  auto terms_copy = terms;
  auto bwd = [terms_copy](Graph& g, int self) {
    const T u = g.grad(self).data[0];
    for (auto& [id, wgt] : terms_copy)
      if (g.requires_grad(id)) g.grad(id).data[0] += wgt * u;
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::unary_custom(int x, const std::function<T(const Tens&, Tens&)>& fn) {
  const Tens& X = val(x);
  auto dx = std::make_shared<Tens>(X.shape);
  Tens out({1});
  out.data[0] = fn(X, *dx);
  bool rg = requires_grad(x);
  auto bwd = [x, dx](Graph& g, int self) {
    if (!g.requires_grad(x)) return;
    const T u = g.grad(self).data[0];
    Tens& dX = g.grad(x);
    for (std::size_t i = 0; i < dX.numel(); ++i) dX.data[i] += u * dx->data[i];
  };
  return push(std::move(out), rg, bwd);
}

template <class T>
int Graph<T>::binary_custom(int a, int b,
                            const std::function<T(const Tens&, const Tens&, Tens&, Tens&)>& fn) {
  const Tens& A = val(a);
  const Tens& B = val(b);
  auto da = std::make_shared<Tens>(A.shape);
  auto db = std::make_shared<Tens>(B.shape);
  Tens out({1});
  out.data[0] = fn(A, B, *da, *db);
  bool rg = requires_grad(a) || requires_grad(b);
  auto bwd = [a, b, da, db](Graph& g, int self) {
    const T u = g.grad(self).data[0];
    if (g.requires_grad(a)) {
      Tens& dA = g.grad(a);
      for (std::size_t i = 0; i < dA.numel(); ++i) dA.data[i] += u * da->data[i];
    }
    if (g.requires_grad(b)) {
      Tens& dB = g.grad(b);
      for (std::size_t i = 0; i < dB.numel(); ++i) dB.data[i] += u * db->data[i];
    }
  };
  return push(std::move(out), rg, bwd);
}

}  // namespace reggan::tape
