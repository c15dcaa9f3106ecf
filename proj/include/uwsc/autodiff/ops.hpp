#pragma once

#include <cmath>
#include <limits>
#include <span>

#include "uwsc/autodiff/tensor.hpp"

namespace uwsc::ad {

namespace detail {

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
}

template <class T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected rank-4 tensor, got " + shape_str(x.shape()));
}

/// y = f(x) with dy/dx = df(x, y).
template <class T, class F, class DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.size());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  auto xp = x.ptr();
  return make_result<T>(op, x.shape(), std::move(out), {xp}, [xp, df](Node<T>& self) {
    auto& g = xp->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xp->value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ap = a.ptr(), bp = b.ptr();
  return make_result<T>("add", a.shape(), std::move(out), {ap, bp}, [ap, bp](Node<T>& self) {
    for (auto* p : {ap.get(), bp.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ap = a.ptr(), bp = b.ptr();
  return make_result<T>("sub", a.shape(), std::move(out), {ap, bp}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) {
      auto& g = ap->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      auto& g = bp->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ap = a.ptr(), bp = b.ptr();
  return make_result<T>("mul", a.shape(), std::move(out), {ap, bp}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) {
      auto& g = ap->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bp->value[i];
    }
    if (bp->requires_grad) {
      auto& g = bp->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ap->value[i];
    }
  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "div");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  auto ap = a.ptr(), bp = b.ptr();
  return make_result<T>("div", a.shape(), std::move(out), {ap, bp}, [ap, bp](Node<T>& self) {
    if (ap->requires_grad) {
      auto& g = ap->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bp->value[i];
    }
    if (bp->requires_grad) {
      auto& g = bp->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / bp->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double s) {
  const T st = static_cast<T>(s);
  return detail::unary<T>("scale", x, [st](T v) { return v * st; }, [st](T, T) { return st; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, double s) {
  const T st = static_cast<T>(s);
  return detail::unary<T>("add_scalar", x, [st](T v) { return v + st; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary<T>("sqrt", x, [](T v) { return std::sqrt(v); },
                          [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

/// log(1 + e^x), evaluated without overflow.
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary<T>(
      "softplus", x, [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

/// max(x, bound). The gradient passes where x >= bound, and also below the
/// bound when it points towards increasing x, so parameters stuck under the
/// floor can still recover.
template <class T>
Tensor<T> lower_bound(const Tensor<T>& x, double bound) {
  const T b = static_cast<T>(bound);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], b);
  auto xp = x.ptr();
  return make_result<T>("lower_bound", x.shape(), std::move(out), {xp}, [xp, b](Node<T>& self) {
    auto& g = xp->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xp->value[i] >= b || self.grad[i] < T(0)) g[i] += self.grad[i];
  });
}

/// Parametric ReLU with one slope per channel (dim 1). The gradient at exactly
/// zero takes the positive branch.
template <class T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  if (x.rank() < 2 || slope.size() != static_cast<std::size_t>(x.dim(1)))
    throw ShapeError("prelu: slope length must equal channel count");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = x.size() / (static_cast<std::size_t>(N) * C);
  std::vector<T> out(x.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T a = slope.data()[static_cast<std::size_t>(c)];
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T v = x.data()[base + i];
        out[base + i] = v >= T(0) ? v : a * v;
      }
    }
  auto xp = x.ptr(), sp = slope.ptr();
  return make_result<T>("prelu", x.shape(), std::move(out), {xp, sp}, [xp, sp, N, C, plane](Node<T>& self) {
    std::vector<T>* gx = xp->requires_grad ? &xp->grad_buffer() : nullptr;
    std::vector<T>* gs = sp->requires_grad ? &sp->grad_buffer() : nullptr;
    for (int c = 0; c < C; ++c) {
      const T a = sp->value[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (int n = 0; n < N; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T v = xp->value[base + i];
          const T g = self.grad[base + i];
          if (v >= T(0)) {
            if (gx) (*gx)[base + i] += g;
          } else {
            if (gx) (*gx)[base + i] += a * g;
            acc += static_cast<double>(g) * static_cast<double>(v);
          }
        }
      }
      if (gs) (*gs)[static_cast<std::size_t>(c)] += static_cast<T>(acc);
    }
  });
}

// ---------------------------------------------------------------- channel ops

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& x : xs) detail::require_rank4(x, "concat_channels");
  const int N = xs[0].n(), H = xs[0].h(), W = xs[0].w();
  int C = 0;
  for (const auto& x : xs) {
    if (x.n() != N || x.h() != H || x.w() != W) throw ShapeError("concat_channels: batch/spatial dims differ");
    C += x.c();
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(N) * C * plane);
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int> offsets;
  int off = 0;
  for (const auto& x : xs) {
    for (int n = 0; n < N; ++n)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(n) * x.c() * plane, x.c() * plane,
                  out.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(n) * C + off) * plane));
    parents.push_back(x.ptr());
    offsets.push_back(off);
    off += x.c();
  }
  auto ps = parents;
  return make_result<T>("concat", {N, C, H, W}, std::move(out), std::move(parents),
                        [ps, offsets, N, C, plane](Node<T>& self) {
                          for (std::size_t k = 0; k < ps.size(); ++k) {
                            auto& p = ps[k];
                            if (!p->requires_grad) continue;
                            auto& g = p->grad_buffer();
                            const int pc = p->shape[1];
                            for (int n = 0; n < N; ++n) {
                              const T* src = self.grad.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * plane;
                              T* dst = g.data() + static_cast<std::size_t>(n) * pc * plane;
                              for (std::size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

/// Channels [start, start + count) of a rank-4 tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int start, int count) {
  detail::require_rank4(x, "slice_channels");
  if (start < 0 || count < 1 || start + count > x.c()) throw ShapeError("slice_channels: range out of bounds");
  const int N = x.n(), C = x.c();
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  std::vector<T> out(static_cast<std::size_t>(N) * count * plane);
  for (int n = 0; n < N; ++n)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(n) * C + start) * plane),
                count * plane, out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(n) * count * plane));
  auto xp = x.ptr();
  return make_result<T>("slice", {N, count, x.h(), x.w()}, std::move(out), {xp},
                        [xp, N, C, start, count, plane](Node<T>& self) {
                          auto& g = xp->grad_buffer();
                          for (int n = 0; n < N; ++n) {
                            T* dst = g.data() + (static_cast<std::size_t>(n) * C + start) * plane;
                            const T* src = self.grad.data() + static_cast<std::size_t>(n) * count * plane;
                            for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                          }
                        });
}

/// Softmax over dim 1 independently at each (batch, y, x), max-subtracted.
template <class T>
Tensor<T> channel_softmax(const Tensor<T>& x) {
  detail::require_rank4(x, "channel_softmax");
  const int N = x.n(), C = x.c();
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  std::vector<T> out(x.size());
  for (int n = 0; n < N; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * C * plane + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(x.data()[base + c * plane]));
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += std::exp(static_cast<double>(x.data()[base + c * plane]) - mx);
      for (int c = 0; c < C; ++c)
        out[base + c * plane] = static_cast<T>(std::exp(static_cast<double>(x.data()[base + c * plane]) - mx) / s);
    }
  auto xp = x.ptr();
  return make_result<T>("channel_softmax", x.shape(), std::move(out), {xp}, [xp, N, C, plane](Node<T>& self) {
    auto& g = xp->grad_buffer();
    for (int n = 0; n < N; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t base = static_cast<std::size_t>(n) * C * plane + i;
        double dot = 0.0;
        for (int c = 0; c < C; ++c)
          dot += static_cast<double>(self.grad[base + c * plane]) * static_cast<double>(self.value[base + c * plane]);
        for (int c = 0; c < C; ++c) {
          const std::size_t k = base + c * plane;
          g[k] += static_cast<T>(static_cast<double>(self.value[k]) * (static_cast<double>(self.grad[k]) - dot));
        }
      }
  });
}

/// Per-channel vector (length C) expanded to `shape` (N, C, H, W).
template <class T>
Tensor<T> broadcast_channel(const Tensor<T>& v, const Shape& shape) {
  if (shape.size() != 4 || v.size() != static_cast<std::size_t>(shape[1]))
    throw ShapeError("broadcast_channel: vector length must equal channel count");
  const int N = shape[0], C = shape[1];
  const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
  std::vector<T> out(numel(shape));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(n) * C + c) * plane), plane,
                  v.data()[static_cast<std::size_t>(c)]);
  auto vp = v.ptr();
  return make_result<T>("broadcast_channel", shape, std::move(out), {vp}, [vp, N, C, plane](Node<T>& self) {
    auto& g = vp->grad_buffer();
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* src = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      }
      g[static_cast<std::size_t>(c)] += static_cast<T>(acc);
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += v;
  auto xp = x.ptr();
  return make_result<T>("sum", {1}, {static_cast<T>(s)}, {xp}, [xp](Node<T>& self) {
    auto& g = xp->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

/// Mean squared difference, accumulated in double.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(a.size());
  auto ap = a.ptr(), bp = b.ptr();
  return make_result<T>("mse", {1}, {static_cast<T>(s * inv)}, {ap, bp}, [ap, bp, inv](Node<T>& self) {
    const double g0 = 2.0 * inv * static_cast<double>(self.grad[0]);
    for (std::size_t i = 0; i < ap->value.size(); ++i) {
      const double d = g0 * (static_cast<double>(ap->value[i]) - static_cast<double>(bp->value[i]));
      if (ap->requires_grad) ap->grad_buffer()[i] += static_cast<T>(d);
      if (bp->requires_grad) bp->grad_buffer()[i] -= static_cast<T>(d);
    }
  });
}

/// Weighted sum of scalars: sum_i w_i * s_i.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size() || scalars.empty()) throw ShapeError("weighted_sum: size mismatch");
  double s = 0.0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    s += weights[i] * static_cast<double>(scalars[i].item());
    parents.push_back(scalars[i].ptr());
  }
  auto ps = parents;
  return make_result<T>("weighted_sum", {1}, {static_cast<T>(s)}, std::move(parents), [ps, weights](Node<T>& self) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (ps[i]->requires_grad) ps[i]->grad_buffer()[0] += static_cast<T>(weights[i] * self.grad[0]);
  });
}

// ---------------------------------------------------------------- quantization

/// Round half to even, with identity (straight-through) gradient.
template <class T>
Tensor<T> round_ste(const Tensor<T>& x) {
  return detail::unary<T>("round", x, [](T v) { return std::nearbyint(v); }, [](T, T) { return T(1); });
}

/// x + u, u ~ U[-0.5, 0.5) drawn from `rng`; identity gradient.
template <class T>
Tensor<T> add_uniform_noise(const Tensor<T>& x, Rng& rng) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + static_cast<T>(rng.uniform() - 0.5);
  auto xp = x.ptr();
  return make_result<T>("noise", x.shape(), std::move(out), {xp}, [xp](Node<T>& self) {
    auto& g = xp->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace uwsc::ad
