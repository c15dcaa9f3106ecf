#include <gtest/gtest.h>

#include "test_util.hpp"
#include "uwsc/enhance.hpp"
#include "uwsc/filter.hpp"
#include "uwsc/synthetic.hpp"

using namespace uwsc;
using ad::Tensor;
using testutil::check_module;
using testutil::params_of;
using testutil::uniform_tensor;
using TF = Tensor<float>;
using TD = Tensor<double>;

namespace {

constexpr int kW = 4;

TF image_tensor(const RgbImage& img) {
  const auto p = to_planes(img);
  std::vector<float> v(p.data.begin(), p.data.end());
  return TF::from({1, 3, p.height, p.width}, std::move(v));
}

}  // namespace

TEST(Mkcb, ShapeAndZeroWeights) {
  Rng rng(1);
  Mkcb<float> m(kW, rng);
  const auto x = uniform_tensor<float>({1, kW, 16, 16}, 2);
  EXPECT_EQ(m(x).shape(), x.shape());
  testutil::fill_parameters(params_of<float>(m), 0.0);
  for (float v : m(x).data()) EXPECT_EQ(v, 0.0f);
}

TEST(Attention, WeightsAreChannelDistributions) {
  Rng rng(3);
  const Attention<float> a(kW, rng);
  const auto x = uniform_tensor<float>({2, kW, 8, 8}, 4, 0.1, 1.0);
  const auto w = a.weights(x);
  const int hw = 64;
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < hw; ++i) {
      double s = 0;
      for (int c = 0; c < kW; ++c) {
        const float v = w.data()[static_cast<std::size_t>((n * kW + c) * hw + i)];
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  const auto y = a(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ratio = y.data()[i] / x.data()[i];
    EXPECT_GT(ratio, 1.0);
    EXPECT_LT(ratio, 2.0);
    EXPECT_FLOAT_EQ(y.data()[i], x.data()[i] * (1.0f + w.data()[i]));
  }
}

TEST(Drb, ShapesAndInternalResolution) {
  Rng rng(5);
  const Drb<float> d(kW, rng);
  const auto x = uniform_tensor<float>({1, kW, 64, 64}, 6);
  EXPECT_EQ(d(x).shape(), x.shape());
  EXPECT_EQ(d.down1(x).shape(), (ad::Shape{1, kW, 32, 32}));
  EXPECT_EQ(d.down2(d.down1(x)).shape(), (ad::Shape{1, kW, 16, 16}));
  EXPECT_EQ(d(uniform_tensor<float>({1, kW, 12, 20}, 7)).shape(), (ad::Shape{1, kW, 12, 20}));
  EXPECT_THROW(d(TF::zeros({1, kW, 18, 16})), ShapeError);
}

TEST(Rfb, ZeroWeightsLeaveTheInput) {
  Rng rng(8);
  Rfb<double> r(kW, rng);
  testutil::fill_parameters(params_of<double>(r), 0.0);
  const auto x = uniform_tensor<double>({1, kW, 8, 8}, 9);
  // With zero weights the attention map is uniform, so the head yields x(1 + 1/W).
  const auto head = r.head(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(head.data()[i], x.data()[i] * (1.0 + 1.0 / kW), 1e-15);
  EXPECT_EQ(r(x).data(), x.data());
}

TEST(Filter, ShapeAndDeterminism) {
  const FilterModel<float> f(FilterConfig::toy(), 10);
  const auto x = uniform_tensor<float>({1, 3, 128, 128}, 11, 0, 1);
  const auto a = f(x);
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_EQ(FilterModel<float>(FilterConfig::toy(), 10)(x).data(), a.data());
  EXPECT_THROW(f(TF::zeros({1, 4, 16, 16})), ShapeError);
}

TEST(FilterGradCheck, Mkcb) {
  Rng rng(12);
  const Mkcb<double> m(kW, rng);
  const auto x = uniform_tensor<double>({1, kW, 6, 6}, 13);
  EXPECT_LE(check_module([&] { return m(x); }, params_of<double>(m), x), 1e-3);
}

TEST(FilterGradCheck, Attention) {
  Rng rng(14);
  const Attention<double> a(kW, rng);
  const auto x = uniform_tensor<double>({1, kW, 6, 6}, 15);
  EXPECT_LE(check_module([&] { return a(x); }, params_of<double>(a), x), 1e-3);
}

TEST(FilterGradCheck, Drb) {
  Rng rng(16);
  const Drb<double> d(kW, rng);
  const auto x = uniform_tensor<double>({1, kW, 8, 8}, 17);
  EXPECT_LE(check_module([&] { return d(x); }, params_of<double>(d), x), 1e-3);
}

TEST(FilterGradCheck, Rfb) {
  Rng rng(18);
  const Rfb<double> r(kW, rng);
  const auto x = uniform_tensor<double>({1, kW, 6, 6}, 19);
  EXPECT_LE(check_module([&] { return r(x); }, params_of<double>(r), x), 1e-3);
}

TEST(FilterGradCheck, WholeFilter) {
  const FilterModel<double> f(FilterConfig::toy(), 20);
  const auto x = uniform_tensor<double>({1, 3, 8, 8}, 21, 0, 1);
  EXPECT_LE(check_module([&] { return f(x); }, params_of<double>(f), x), 1e-3);
}

TEST(Filter, EveryParameterReceivesGradient) {
  const FilterModel<float> f(FilterConfig::toy(), 22);
  const auto params = f.parameters();
  ad::check_unique_names(params);
  const auto x = uniform_tensor<float>({2, 3, 16, 16}, 23, 0, 1);
  ad::backward(ad::mse(f(x), uniform_tensor<float>({2, 3, 16, 16}, 24, 0, 1)));
  EXPECT_EQ(testutil::dead_parameters(params), std::vector<std::string>{});
}

TEST(Filter, TrainingImprovesHeldOutPairs) {
  // Degraded inputs are synthetic underwater scenes; targets come from the reference enhancer.
  auto pair_of = [](std::uint64_t seed) {
    const auto img = synthetic::underwater_scene(seed, 32, 32);
    return std::pair{image_tensor(img), image_tensor(reference_enhance(img))};
  };
  std::vector<std::pair<TF, TF>> train, held;
  for (std::uint64_t s = 0; s < 8; ++s) train.push_back(pair_of(100 + s));
  for (std::uint64_t s = 0; s < 3; ++s) held.push_back(pair_of(200 + s));
  auto held_mse = [&](const FilterModel<float>* f) {
    double total = 0;
    for (const auto& [x, g] : held) total += ad::mse(f ? (*f)(x) : x, g).item();
    return total / static_cast<double>(held.size());
  };
  FilterModel<float> f(FilterConfig::toy(), 25);
  ad::Adam<float> opt(f.parameters(), 5e-3);
  for (int step = 0; step < 300; ++step) {
    const auto& [x, g] = train[static_cast<std::size_t>(step) % train.size()];
    opt.zero_grad();
    ad::backward(ad::mse(f(x), g));
    opt.step();
  }
  const double before = held_mse(nullptr), after = held_mse(&f);
  EXPECT_LT(after, before) << "unfiltered " << before << " filtered " << after;
}
