#pragma once

#include <set>

#include "uwsc/autodiff/conv.hpp"

namespace uwsc::ad {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<Parameter<T>>;

template <class T>
void check_unique_names(const ParamList<T>& params) {
  std::set<std::string> seen;
  for (const auto& p : params)
    if (!seen.insert(p.name).second) throw GraphError("duplicate parameter name '" + p.name + "'");
}

template <class T>
Tensor<T> uniform_param(const Shape& s, double bound, Rng& rng) {
  std::vector<T> v(numel(s));
  for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(s, std::move(v), true);
}

inline constexpr double kPreluInit = 0.25;

/// He-uniform bound for a leaky rectifier with the initial PReLU slope.
inline double he_bound(double fan_in) {
  return std::sqrt(6.0 / ((1.0 + kPreluInit * kPreluInit) * fan_in));
}

template <class T>
struct Conv2d {
  Tensor<T> weight, bias;
  int stride = 1, padding = 0;

  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int s, Rng& rng)
      : weight(uniform_param<T>({cout, cin, k, k}, he_bound(double(cin) * k * k), rng)),
        bias(Tensor<T>::zeros({cout}, true)), stride(s), padding(k / 2) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct TConv2d {
  Tensor<T> weight, bias;
  int stride = 1, padding = 0;

  TConv2d() = default;
  TConv2d(int cin, int cout, int k, int s, Rng& rng)
      : weight(uniform_param<T>({cin, cout, k, k}, he_bound(double(cin) * k * k / (s * s)), rng)),
        bias(Tensor<T>::zeros({cout}, true)), stride(s), padding(k / 2) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return tconv2d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct PRelu {
  Tensor<T> slope;

  PRelu() = default;
  explicit PRelu(int channels) : slope(Tensor<T>::full({channels}, static_cast<T>(kPreluInit), true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return prelu(x, slope); }
  void collect(const std::string& prefix, ParamList<T>& out) const { out.push_back({prefix + ".slope", slope}); }
};

/// Adaptive moment estimation; moments kept in double.
template <class T>
class Adam {
 public:
  Adam(ParamList<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& t = params_[k].tensor;
      if (!t.has_grad()) continue;
      auto& w = t.data();
      const auto& g = t.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * gi;
        v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * gi * gi;
        const double mh = m_[k][i] / c1, vh = v_[k][i] / c2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  ParamList<T> params_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Copies values between models of possibly different scalar types; names
/// and shapes must agree.
template <class Dst, class Src>
void copy_parameters(const ParamList<Dst>& dst, const ParamList<Src>& src) {
  if (dst.size() != src.size()) throw ShapeError("parameter lists differ in length");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].name != src[k].name || dst[k].tensor.shape() != src[k].tensor.shape())
      throw ShapeError("parameter '" + dst[k].name + "' does not match '" + src[k].name + "'");
    auto d = dst[k].tensor;
    std::transform(src[k].tensor.data().begin(), src[k].tensor.data().end(), d.data().begin(),
                   [](Src v) { return static_cast<Dst>(v); });
  }
}

}  // namespace uwsc::ad
