#include <gtest/gtest.h>

#include "grad_cases.hpp"
#include "test_util.hpp"
#include "uwsc/autodiff.hpp"

using namespace uwsc::ad;
using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

template <class T>
Tensor<T> random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = false) {
  uwsc::Rng rng(seed);
  std::vector<T> v(numel(s));
  for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(s, std::move(v), grad);
}

// Direct nested-loop convolution, written independently of the library.
std::vector<double> naive_conv(const TD& x, const TD& w, const TD& b, int s, int p) {
  const int N = x.n(), Ci = x.c(), H = x.h(), W = x.w(), Co = w.dim(0), K = w.dim(2);
  const int OH = (H + 2 * p - K) / s + 1, OW = (W + 2 * p - K) / s + 1;
  std::vector<double> out(static_cast<std::size_t>(N * Co * OH * OW));
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b.data()[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = oy * s - p + ky, ix = ox * s - p + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w.data()[((co * Ci + ci) * K + ky) * K + kx] * x.data()[((n * Ci + ci) * H + iy) * W + ix];
              }
          out[((n * Co + co) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

double inner(const TD& a, const TD& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------- conv2d

TEST(Conv2d, OneByOneIdentity) {
  const auto x = random_tensor<double>({1, 3, 5, 4}, 1);
  std::vector<double> w(9, 0.0);
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  const auto y = conv2d(x, TD::from({3, 3, 1, 1}, w), TD::zeros({3}), 1, 0);
  EXPECT_EQ(y.data(), x.data());
}

TEST(Conv2d, AveragingPreservesConstant) {
  const auto x = TD::full({1, 1, 6, 6}, 0.7);
  const auto y = conv2d(x, TD::full({1, 1, 3, 3}, 1.0 / 9.0), TD::zeros({1}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  const auto x = random_tensor<double>({2, 3, 5, 5}, 2);
  const auto w = random_tensor<double>({4, 3, 3, 3}, 3);
  const auto b = random_tensor<double>({4}, 4);
  for (auto [s, p] : {std::pair{2, 1}, {1, 1}, {2, 0}, {1, 0}}) {
    const auto y = conv2d(x, w, b, s, p);
    const auto ref = naive_conv(x, w, b, s, p);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
  const auto yf = conv2d(random_tensor<float>({2, 3, 5, 5}, 2), random_tensor<float>({4, 3, 3, 3}, 3),
                         random_tensor<float>({4}, 4), 2, 1);
  const auto ref = naive_conv(random_tensor<double>({2, 3, 5, 5}, 2), random_tensor<double>({4, 3, 3, 3}, 3),
                              random_tensor<double>({4}, 4), 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(yf.data()[i], ref[i], 1e-5);
}

TEST(Conv2d, OutputDimsAndShapeErrors) {
  const auto y = conv2d(TD::zeros({1, 2, 9, 7}), TD::zeros({3, 2, 3, 3}), TD::zeros({3}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 5, 4}));
  EXPECT_THROW(conv2d(TD::zeros({1, 2, 8, 8}), TD::zeros({3, 4, 3, 3}), TD::zeros({3}), 1, 1), uwsc::ShapeError);
  EXPECT_THROW(conv2d(TD::zeros({2, 8, 8}), TD::zeros({3, 2, 3, 3}), TD::zeros({3}), 1, 1), uwsc::ShapeError);
}

// ---------------------------------------------------------------- tconv2d

TEST(TConv2d, AdjointOfConv) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const int s = seed % 2 ? 2 : 1;
    const auto x = random_tensor<double>({2, 3, 8, 8}, seed * 3 + 1);
    const auto w = random_tensor<double>({5, 3, 3, 3}, seed * 3 + 2);
    const auto cx = conv2d(x, w, TD(), s, 1);
    const auto y = random_tensor<double>(cx.shape(), seed * 3 + 3);
    const auto ty = tconv2d(y, w, TD(), s, 1);
    ASSERT_EQ(ty.shape(), x.shape());
    const double l = inner(cx, y), r = inner(x, ty);
    EXPECT_NEAR(l, r, 1e-4 * std::abs(l) + 1e-12);
  }
}

TEST(TConv2d, DoublesSpatialDims) {
  const auto y = tconv2d(TD::zeros({1, 2, 8, 8}), TD::zeros({2, 3, 3, 3}), TD::zeros({3}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 16, 16}));
  const auto z = tconv2d(TD::zeros({1, 2, 8, 8}), TD::zeros({2, 3, 3, 3}), TD::zeros({3}), 1, 1);
  EXPECT_EQ(z.shape(), (Shape{1, 3, 8, 8}));
}

TEST(TConv2d, ZeroInputGivesBias) {
  const auto w = random_tensor<double>({2, 3, 3, 3}, 9);
  const auto y = tconv2d(TD::zeros({1, 2, 4, 4}), w, TD::from({3}, {0.5, -1.0, 2.0}), 2, 1);
  const double bias[3] = {0.5, -1.0, 2.0};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i) EXPECT_EQ(y.data()[c * 64 + i], bias[c]);
}

// ---------------------------------------------------------------- activations

TEST(Prelu, Definition) {
  const auto x = TD::from({1, 2, 1, 2}, {-2.0, 3.0, -2.0, 0.0});
  EXPECT_EQ(prelu(x, TD::full({2}, 1.0)).data(), x.data());
  EXPECT_EQ(prelu(x, TD::full({2}, 0.0)).data(), (std::vector<double>{0.0, 3.0, 0.0, 0.0}));
  EXPECT_EQ(prelu(x, TD::from({2}, {0.25, 0.5})).data(), (std::vector<double>{-0.5, 3.0, -1.0, 0.0}));
  EXPECT_THROW(prelu(x, TD::full({3}, 1.0)), uwsc::ShapeError);
}

TEST(Prelu, GradientAtZeroUsesPositiveBranch) {
  auto x = TD::from({1, 1, 1, 1}, {0.0}, true);
  auto a = TD::full({1}, 0.25, true);
  auto loss = sum(prelu(x, a));
  backward(loss);
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(a.grad()[0], 0.0);
}

TEST(ChannelSoftmax, Properties) {
  const auto half = channel_softmax(TD::zeros({1, 2, 1, 1}));
  EXPECT_EQ(half.data(), (std::vector<double>{0.5, 0.5}));
  const auto x = random_tensor<double>({2, 5, 3, 4}, 5, -5, 5);
  const auto y = channel_softmax(x);
  const auto y2 = channel_softmax(add_scalar(x, 7.5));
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_NEAR(y.data()[i], y2.data()[i], 1e-12);
    EXPECT_GT(y.data()[i], 0.0);
    EXPECT_LT(y.data()[i], 1.0);
  }
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 12; ++i) {
      double s = 0;
      for (int c = 0; c < 5; ++c) s += y.data()[(n * 5 + c) * 12 + i];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  const auto big = channel_softmax(TF::from({1, 2, 1, 1}, {1000.0f, 0.0f}));
  EXPECT_TRUE(std::isfinite(big.data()[0]) && std::isfinite(big.data()[1]));
}

TEST(Elementwise, IdentitiesAndConcatShape) {
  const auto x = random_tensor<double>({1, 3, 4, 4}, 6);
  EXPECT_EQ(add(x, TD::zeros(x.shape())).data(), x.data());
  EXPECT_EQ(mul(x, TD::full(x.shape(), 1.0)).data(), x.data());
  const auto c = concat_channels<double>({TD::zeros({2, 3, 4, 4}), TD::zeros({2, 5, 4, 4})});
  EXPECT_EQ(c.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_THROW(add(x, TD::zeros({1, 3, 4, 5})), uwsc::ShapeError);
  EXPECT_THROW(concat_channels<double>({TD::zeros({1, 3, 4, 4}), TD::zeros({1, 3, 4, 5})}), uwsc::ShapeError);
}

TEST(Elementwise, ConcatThenSliceRoundTrips) {
  const auto a = random_tensor<double>({2, 2, 3, 3}, 7), b = random_tensor<double>({2, 3, 3, 3}, 8);
  const auto c = concat_channels<double>({a, b});
  EXPECT_EQ(slice_channels(c, 0, 2).data(), a.data());
  EXPECT_EQ(slice_channels(c, 2, 3).data(), b.data());
}

// ---------------------------------------------------------------- backward

TEST(Backward, AnalyticCases) {
  auto x = random_tensor<double>({2, 3}, 10, -1, 1, true);
  auto l1 = sum(x);
  backward(l1);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  auto l2 = scale(sum(square(x)), 0.5);
  backward(l2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.data()[i]);
}

TEST(Backward, UnreachableGradsUntouched) {
  auto a = TD::full({3}, 1.0, true), b = TD::full({3}, 2.0, true);
  auto loss = sum(a);
  backward(loss);
  EXPECT_FALSE(b.has_grad());
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  auto x = TD::from({1}, {3.0}, true);
  auto y = mul(x, x);          // x^2
  auto z = add(y, y);          // 2 x^2
  auto loss = sum(mul(z, y));  // 2 x^4 -> 8 x^3
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0 * 27.0);
}

TEST(Backward, GraphErrors) {
  auto x = TD::full({2}, 1.0, true);
  auto v = scale(x, 2.0);
  EXPECT_THROW(backward(v), uwsc::GraphError);
  auto c = sum(TD::full({2}, 1.0));
  EXPECT_THROW(backward(c), uwsc::GraphError);
}

TEST(Forward, BitIdenticalRepeats) {
  const auto x = random_tensor<float>({2, 4, 16, 16}, 11);
  const auto w = random_tensor<float>({6, 4, 3, 3}, 12);
  const auto b = random_tensor<float>({6}, 13);
  EXPECT_EQ(conv2d(x, w, b, 2, 1).data(), conv2d(x, w, b, 2, 1).data());
  const auto tw = random_tensor<float>({4, 6, 3, 3}, 14);
  EXPECT_EQ(tconv2d(x, tw, b, 2, 1).data(), tconv2d(x, tw, b, 2, 1).data());
}

// ---------------------------------------------------------------- finite differences

using testutil::primitive_cases;

TEST(GradCheck, EveryPrimitiveWithinTolerance) {
  for (const auto& c : primitive_cases()) {
    const double err = grad_check<double>(c.op, c.shapes, 42, c.lo, c.hi);
    EXPECT_LE(err, 1e-4) << c.name;
  }
}

TEST(GradCheck, PreluAwayFromKink) {
  // Inputs with |x| >= 0.1.
  uwsc::Rng rng(5);
  std::vector<double> xv(2 * 3 * 4 * 4);
  for (auto& v : xv) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 1.0);
  auto x = TD::from({2, 3, 4, 4}, xv, true);
  auto a = TD::from({3}, {0.25, -0.1, 0.6}, true);
  const double err = grad_check_tensors<double>([&] { return prelu(x, a); }, {x, a}, 6);
  EXPECT_LE(err, 1e-5);
}

TEST(GradCheck, Float32PrimitivesWithinLooserTolerance) {
  const double conv = grad_check<float>([](auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); },
                                        {{1, 2, 5, 5}, {3, 2, 3, 3}, {3}}, 7);
  EXPECT_LE(conv, 1e-3);
  const double sm = grad_check<float>([](auto& v) { return channel_softmax(v[0]); }, {{1, 4, 3, 3}}, 8, -2, 2);
  EXPECT_LE(sm, 1e-3);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // An op whose backward is deliberately off by a factor of two.
  auto broken = [](std::vector<TD>& v) {
    auto xp = v[0].ptr();
    std::vector<double> out(v[0].data());
    return make_result<double>("broken", v[0].shape(), std::move(out), {xp}, [xp](Node<double>& self) {
      auto& g = xp->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * self.grad[i];
    });
  };
  EXPECT_GT(grad_check<double>(broken, {{5}}, 1), 0.4);
}

// ---------------------------------------------------------------- modules & checkpoints

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamList<double> params{{"w", TD::from({2}, {1.0, -2.0}, true)}};
  Adam<double> opt(params, 0.1);
  auto w = params[0].tensor;
  auto loss = sum(mul(w, w));
  backward(loss);
  opt.step();
  // Bias-corrected first step is lr * sign(g) (up to eps).
  EXPECT_NEAR(w.data()[0], 0.9, 1e-6);
  EXPECT_NEAR(w.data()[1], -1.9, 1e-6);
}

TEST(Checkpoint, RoundTripTamperAndMismatch) {
  uwsc::Rng rng(3);
  Conv2d<float> a(3, 4, 3, 2, rng);
  PRelu<float> p(4);
  ParamList<float> params;
  a.collect("enc.conv", params);
  p.collect("enc.act", params);
  const auto bytes = serialize_parameters(params);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "UWTEN01");

  uwsc::Rng rng2(99);
  Conv2d<float> b(3, 4, 3, 2, rng2);
  PRelu<float> q(4);
  ParamList<float> other;
  b.collect("enc.conv", other);
  q.collect("enc.act", other);
  deserialize_parameters(bytes, other);
  EXPECT_EQ(b.weight.data(), a.weight.data());
  EXPECT_EQ(serialize_parameters(other), bytes);

  auto tampered = bytes;
  tampered[bytes.size() - 10] ^= 0x01;
  EXPECT_THROW(deserialize_parameters(tampered, other), uwsc::HashMismatchError);

  Conv2d<float> wrong(3, 5, 3, 2, rng2);
  ParamList<float> mism;
  wrong.collect("enc.conv", mism);
  q.collect("enc.act", mism);
  try {
    deserialize_parameters(bytes, mism);
    FAIL() << "expected ShapeError";
  } catch (const uwsc::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.conv.weight"), std::string::npos);
  }
}

TEST(Checkpoint, DuplicateNamesRejected) {
  ParamList<float> params{{"x", TF::zeros({1})}, {"x", TF::zeros({1})}};
  EXPECT_THROW(serialize_parameters(params), uwsc::GraphError);
}

TEST(NoGrad, GuardSuppressesGraphAndRestores) {
  auto w = TD::full({3}, 2.0, true);
  {
    NoGradGuard guard;
    const auto y = mul(w, w);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(y.data(), (std::vector<double>{4, 4, 4}));
    EXPECT_THROW(backward(sum(y)), uwsc::GraphError);
  }
  const auto z = sum(mul(w, w));
  EXPECT_TRUE(z.requires_grad());
  backward(z);
  EXPECT_EQ(w.grad(), (std::vector<double>{4, 4, 4}));
}
