#pragma once

#include "uwsc/autodiff/ops.hpp"

namespace uwsc::ad {

namespace detail {

/// Indices i in [0, count) with i * stride + offset in [0, limit), as [lo, hi).
inline std::pair<int, int> valid_range(int count, int stride, int offset, int limit) {
  auto ceil_div = [](int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); };
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  const int lo = std::max(0, ceil_div(-offset, stride));
  const int hi = std::min(count, floor_div(limit - 1 - offset, stride) + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace detail

/// Cross-correlation. x: (N, Ci, H, W), w: (Co, Ci, k, k), b: (Co) or empty.
/// Accumulates in double in the fixed order (ci, ky, kx) per output sample.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding) {
  detail::require_rank4(x, "conv2d");
  if (w.rank() != 4 || w.dim(1) != x.c() || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
  const int N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
  const int Co = w.dim(0), K = w.dim(2), S = stride, P = padding;
  if (b.defined() && b.size() != static_cast<std::size_t>(Co)) throw ShapeError("conv2d: bias length mismatch");
  if (S < 1 || H + 2 * P < K || W + 2 * P < K) throw ShapeError("conv2d: kernel larger than padded input");
  const int OH = (H + 2 * P - K) / S + 1, OW = (W + 2 * P - K) / S + 1;
  const std::size_t in_plane = static_cast<std::size_t>(H) * W, out_plane = static_cast<std::size_t>(OH) * OW;

  std::vector<T> out(static_cast<std::size_t>(N) * Co * out_plane);
  std::vector<double> acc(out_plane);
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co) {
      std::fill(acc.begin(), acc.end(), b.defined() ? static_cast<double>(b.data()[static_cast<std::size_t>(co)]) : 0.0);
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xp = xv + (static_cast<std::size_t>(n) * Ci + ci) * in_plane;
        for (int ky = 0; ky < K; ++ky) {
          const auto [oy0, oy1] = detail::valid_range(OH, S, ky - P, H);
          for (int kx = 0; kx < K; ++kx) {
            const double wk = wv[((static_cast<std::size_t>(co) * Ci + ci) * K + ky) * K + kx];
            const auto [ox0, ox1] = detail::valid_range(OW, S, kx - P, W);
            for (int oy = oy0; oy < oy1; ++oy) {
              const T* row = xp + static_cast<std::size_t>(oy * S + ky - P) * W + (kx - P);
              double* arow = acc.data() + static_cast<std::size_t>(oy) * OW;
              if (S == 1) {
                for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wk * static_cast<double>(row[ox]);
              } else {
                for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wk * static_cast<double>(row[ox * S]);
              }
            }
          }
        }
      }
      T* dst = out.data() + (static_cast<std::size_t>(n) * Co + co) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) dst[i] = static_cast<T>(acc[i]);
    }

  auto xp_ = x.ptr(), wp_ = w.ptr();
  std::vector<std::shared_ptr<Node<T>>> parents{xp_, wp_};
  std::shared_ptr<Node<T>> bp_;
  if (b.defined()) {
    bp_ = b.ptr();
    parents.push_back(bp_);
  }
  return make_result<T>(
      "conv2d", {N, Co, OH, OW}, std::move(out), std::move(parents),
      [xp_, wp_, bp_, N, Ci, H, W, Co, K, S, P, OH, OW, in_plane, out_plane](Node<T>& self) {
        const T* g = self.grad.data();
        const T* xv = xp_->value.data();
        const T* wv = wp_->value.data();
        if (xp_->requires_grad) {
          auto& gx = xp_->grad_buffer();
          std::vector<double> acc(in_plane);
          for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < Ci; ++ci) {
              std::fill(acc.begin(), acc.end(), 0.0);
              for (int co = 0; co < Co; ++co) {
                const T* gp = g + (static_cast<std::size_t>(n) * Co + co) * out_plane;
                for (int ky = 0; ky < K; ++ky) {
                  const auto [oy0, oy1] = detail::valid_range(OH, S, ky - P, H);
                  for (int kx = 0; kx < K; ++kx) {
                    const double wk = wv[((static_cast<std::size_t>(co) * Ci + ci) * K + ky) * K + kx];
                    const auto [ox0, ox1] = detail::valid_range(OW, S, kx - P, W);
                    for (int oy = oy0; oy < oy1; ++oy) {
                      double* arow = acc.data() + static_cast<std::size_t>(oy * S + ky - P) * W + (kx - P);
                      const T* grow = gp + static_cast<std::size_t>(oy) * OW;
                      if (S == 1) {
                        for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wk * static_cast<double>(grow[ox]);
                      } else {
                        for (int ox = ox0; ox < ox1; ++ox) arow[ox * S] += wk * static_cast<double>(grow[ox]);
                      }
                    }
                  }
                }
              }
              T* dst = gx.data() + (static_cast<std::size_t>(n) * Ci + ci) * in_plane;
              for (std::size_t i = 0; i < in_plane; ++i) dst[i] += static_cast<T>(acc[i]);
            }
        }
        if (wp_->requires_grad) {
          auto& gw = wp_->grad_buffer();
          // Column-wise partial sums keep the inner loop vectorizable.
          std::vector<double> part(static_cast<std::size_t>(OW));
          for (int co = 0; co < Co; ++co)
            for (int ci = 0; ci < Ci; ++ci)
              for (int ky = 0; ky < K; ++ky) {
                const auto [oy0, oy1] = detail::valid_range(OH, S, ky - P, H);
                for (int kx = 0; kx < K; ++kx) {
                  const auto [ox0, ox1] = detail::valid_range(OW, S, kx - P, W);
                  std::fill(part.begin(), part.end(), 0.0);
                  for (int n = 0; n < N; ++n) {
                    const T* gp = g + (static_cast<std::size_t>(n) * Co + co) * out_plane;
                    const T* xp = xv + (static_cast<std::size_t>(n) * Ci + ci) * in_plane;
                    for (int oy = oy0; oy < oy1; ++oy) {
                      const T* row = xp + static_cast<std::size_t>(oy * S + ky - P) * W + (kx - P);
                      const T* grow = gp + static_cast<std::size_t>(oy) * OW;
                      if (S == 1) {
                        for (int ox = ox0; ox < ox1; ++ox)
                          part[ox] += static_cast<double>(grow[ox]) * static_cast<double>(row[ox]);
                      } else {
                        for (int ox = ox0; ox < ox1; ++ox)
                          part[ox] += static_cast<double>(grow[ox]) * static_cast<double>(row[ox * S]);
                      }
                    }
                  }
                  double s = 0.0;
                  for (int ox = ox0; ox < ox1; ++ox) s += part[ox];
                  gw[((static_cast<std::size_t>(co) * Ci + ci) * K + ky) * K + kx] += static_cast<T>(s);
                }
              }
        }
        if (bp_ && bp_->requires_grad) {
          auto& gb = bp_->grad_buffer();
          for (int co = 0; co < Co; ++co) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
              const T* gp = g + (static_cast<std::size_t>(n) * Co + co) * out_plane;
              for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
            }
            gb[static_cast<std::size_t>(co)] += static_cast<T>(s);
          }
        }
      });
}

/// Transposed convolution. x: (N, Ci, H, W), w: (Ci, Co, k, k). Output size
/// (H - 1) * stride - 2 * padding + k + output_padding; the default
/// output_padding of stride - 1 makes k3 s2 p1 exactly double H and W.
template <class T>
Tensor<T> tconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding,
                  int output_padding = -1) {
  detail::require_rank4(x, "tconv2d");
  if (w.rank() != 4 || w.dim(0) != x.c() || w.dim(2) != w.dim(3))
    throw ShapeError("tconv2d: weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
  const int N = x.n(), Ci = x.c(), H = x.h(), W = x.w();
  const int Co = w.dim(1), K = w.dim(2), S = stride, P = padding;
  const int OP = output_padding < 0 ? S - 1 : output_padding;
  if (b.defined() && b.size() != static_cast<std::size_t>(Co)) throw ShapeError("tconv2d: bias length mismatch");
  const int OH = (H - 1) * S - 2 * P + K + OP, OW = (W - 1) * S - 2 * P + K + OP;
  if (S < 1 || OH < 1 || OW < 1) throw ShapeError("tconv2d: empty output");
  const std::size_t in_plane = static_cast<std::size_t>(H) * W, out_plane = static_cast<std::size_t>(OH) * OW;

  std::vector<T> out(static_cast<std::size_t>(N) * Co * out_plane);
  std::vector<double> acc(out_plane);
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co) {
      std::fill(acc.begin(), acc.end(), b.defined() ? static_cast<double>(b.data()[static_cast<std::size_t>(co)]) : 0.0);
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xp = xv + (static_cast<std::size_t>(n) * Ci + ci) * in_plane;
        for (int ky = 0; ky < K; ++ky) {
          const auto [iy0, iy1] = detail::valid_range(H, S, ky - P, OH);
          for (int kx = 0; kx < K; ++kx) {
            const double wk = wv[((static_cast<std::size_t>(ci) * Co + co) * K + ky) * K + kx];
            const auto [ix0, ix1] = detail::valid_range(W, S, kx - P, OW);
            for (int iy = iy0; iy < iy1; ++iy) {
              const T* row = xp + static_cast<std::size_t>(iy) * W;
              double* arow = acc.data() + static_cast<std::size_t>(iy * S + ky - P) * OW + (kx - P);
              for (int ix = ix0; ix < ix1; ++ix) arow[ix * S] += wk * static_cast<double>(row[ix]);
            }
          }
        }
      }
      T* dst = out.data() + (static_cast<std::size_t>(n) * Co + co) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) dst[i] = static_cast<T>(acc[i]);
    }

  auto xp_ = x.ptr(), wp_ = w.ptr();
  std::vector<std::shared_ptr<Node<T>>> parents{xp_, wp_};
  std::shared_ptr<Node<T>> bp_;
  if (b.defined()) {
    bp_ = b.ptr();
    parents.push_back(bp_);
  }
  return make_result<T>(
      "tconv2d", {N, Co, OH, OW}, std::move(out), std::move(parents),
      [xp_, wp_, bp_, N, Ci, H, W, Co, K, S, P, OH, OW, in_plane, out_plane](Node<T>& self) {
        const T* g = self.grad.data();
        const T* xv = xp_->value.data();
        const T* wv = wp_->value.data();
        if (xp_->requires_grad) {
          auto& gx = xp_->grad_buffer();
          std::vector<double> acc(in_plane);
          for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < Ci; ++ci) {
              std::fill(acc.begin(), acc.end(), 0.0);
              for (int co = 0; co < Co; ++co) {
                const T* gp = g + (static_cast<std::size_t>(n) * Co + co) * out_plane;
                for (int ky = 0; ky < K; ++ky) {
                  const auto [iy0, iy1] = detail::valid_range(H, S, ky - P, OH);
                  for (int kx = 0; kx < K; ++kx) {
                    const double wk = wv[((static_cast<std::size_t>(ci) * Co + co) * K + ky) * K + kx];
                    const auto [ix0, ix1] = detail::valid_range(W, S, kx - P, OW);
                    for (int iy = iy0; iy < iy1; ++iy) {
                      double* arow = acc.data() + static_cast<std::size_t>(iy) * W;
                      const T* grow = gp + static_cast<std::size_t>(iy * S + ky - P) * OW + (kx - P);
                      for (int ix = ix0; ix < ix1; ++ix) arow[ix] += wk * static_cast<double>(grow[ix * S]);
                    }
                  }
                }
              }
              T* dst = gx.data() + (static_cast<std::size_t>(n) * Ci + ci) * in_plane;
              for (std::size_t i = 0; i < in_plane; ++i) dst[i] += static_cast<T>(acc[i]);
            }
        }
        if (wp_->requires_grad) {
          auto& gw = wp_->grad_buffer();
          for (int ci = 0; ci < Ci; ++ci)
            for (int co = 0; co < Co; ++co)
              for (int ky = 0; ky < K; ++ky) {
                const auto [iy0, iy1] = detail::valid_range(H, S, ky - P, OH);
                for (int kx = 0; kx < K; ++kx) {
                  const auto [ix0, ix1] = detail::valid_range(W, S, kx - P, OW);
                  double s = 0.0;
                  for (int n = 0; n < N; ++n) {
                    const T* gp = g + (static_cast<std::size_t>(n) * Co + co) * out_plane;
                    const T* xp = xv + (static_cast<std::size_t>(n) * Ci + ci) * in_plane;
                    for (int iy = iy0; iy < iy1; ++iy) {
                      const T* row = xp + static_cast<std::size_t>(iy) * W;
                      const T* grow = gp + static_cast<std::size_t>(iy * S + ky - P) * OW + (kx - P);
                      for (int ix = ix0; ix < ix1; ++ix)
                        s += static_cast<double>(row[ix]) * static_cast<double>(grow[ix * S]);
                    }
                  }
                  gw[((static_cast<std::size_t>(ci) * Co + co) * K + ky) * K + kx] += static_cast<T>(s);
                }
              }
        }
        if (bp_ && bp_->requires_grad) {
          auto& gb = bp_->grad_buffer();
          for (int co = 0; co < Co; ++co) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
              const T* gp = g + (static_cast<std::size_t>(n) * Co + co) * out_plane;
              for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
            }
            gb[static_cast<std::size_t>(co)] += static_cast<T>(s);
          }
        }
      });
}

}  // namespace uwsc::ad
