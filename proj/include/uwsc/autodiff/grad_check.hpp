#pragma once

#include <functional>

#include "uwsc/autodiff/ops.hpp"

namespace uwsc::ad {

struct GradCheckOptions {
  double step = 1e-3;
  /// Elements perturbed per tensor; larger tensors are sampled (seeded).
  std::size_t max_elements = 64;
};

/// Compares reverse-mode gradients with central differences for the scalar
/// L = sum_i r_i * f()_i, where r is a fixed seeded projection. `f` must read
/// the current values of `wrt` on every call. Returns
/// max over tensors of ||analytic - numeric||_inf / (||numeric||_inf + 1e-8).
template <class T>
double grad_check_tensors(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> wrt, std::uint64_t seed,
                          const GradCheckOptions& opt = {}) {
  Rng rng(seed);
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<T> out = f();
  std::vector<double> r(out.size());
  for (auto& v : r) v = rng.uniform(-1.0, 1.0);

  auto project = [&r](const Tensor<T>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * static_cast<double>(y.data()[i]);
    return s;
  };
  {
    auto op = out.ptr();
    auto rr = r;
    Tensor<T> loss = make_result<T>("projection", {1}, {static_cast<T>(project(out))}, {op}, [op, rr](Node<T>& self) {
      auto& g = op->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(rr[i] * static_cast<double>(self.grad[0]));
    });
    backward(loss);
  }

  double worst = 0.0;
  for (auto& t : wrt) {
    const std::vector<T> analytic = t.has_grad() ? t.grad() : std::vector<T>(t.size(), T(0));
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opt.max_elements) {
      rng.shuffle(idx);
      idx.resize(opt.max_elements);
    }
    double max_diff = 0.0, max_num = 0.0;
    for (std::size_t i : idx) {
      const T orig = t.data()[i];
      const T plus = static_cast<T>(static_cast<double>(orig) + opt.step);
      const T minus = static_cast<T>(static_cast<double>(orig) - opt.step);
      t.data()[i] = plus;
      const double lp = project(f());
      t.data()[i] = minus;
      const double lm = project(f());
      t.data()[i] = orig;
      const double numeric = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
      max_diff = std::max(max_diff, std::abs(numeric - static_cast<double>(analytic[i])));
      max_num = std::max(max_num, std::abs(numeric));
    }
    worst = std::max(worst, max_diff / (max_num + 1e-8));
  }
  return worst;
}

/// Builds inputs of the given shapes with entries uniform in [lo, hi] and
/// checks `op` with respect to all of them.
template <class T, class Op>
double grad_check(Op&& op, const std::vector<Shape>& shapes, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                  const GradCheckOptions& opt = {}) {
  Rng rng(derive_seed(seed, 0x6772616443ULL));
  std::vector<Tensor<T>> inputs;
  for (const auto& s : shapes) {
    std::vector<T> v(numel(s));
    for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
    inputs.push_back(Tensor<T>::from(s, std::move(v), true));
  }
  std::function<Tensor<T>()> f = [&]() { return op(inputs); };
  return grad_check_tensors<T>(f, inputs, seed, opt);
}

}  // namespace uwsc::ad
