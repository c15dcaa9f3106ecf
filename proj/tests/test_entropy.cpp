#include <gtest/gtest.h>

#include "uwsc/entropy.hpp"

using namespace uwsc;
using ad::Tensor;
using TD = Tensor<double>;

namespace {

// erf by its Maclaurin series in long double; independent of libm's erf.
long double erf_series(long double x) {
  long double term = x, sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    sum += term / (2 * n + 1);
  }
  return sum * 2.0L / std::sqrt(3.14159265358979323846264338327950288L);
}

long double phi_oracle(long double u) { return 0.5L * (1.0L + erf_series(u / std::sqrt(2.0L))); }

// Frozen from a 30-digit evaluation of -log2(Phi(0.5) - Phi(-0.5)).
constexpr double kBitsStdNormalAtMean = 1.38486653429098968;

std::vector<std::int32_t> gaussian_symbols(Rng& rng, std::size_t n, std::vector<double>& mu, std::vector<double>& sigma) {
  std::vector<std::int32_t> s(n);
  mu.resize(n);
  sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = rng.uniform(-20.0, 20.0);
    sigma[i] = std::exp(rng.uniform(std::log(0.05), std::log(30.0)));
    s[i] = static_cast<std::int32_t>(std::nearbyint(rng.normal(mu[i], std::max(sigma[i], kSigmaFloor))));
  }
  return s;
}

}  // namespace

TEST(Quantize, InferenceRoundsHalfToEven) {
  const auto y = TD::from({5}, {2.5, 3.5, -2.5, 4.0, -7.0});
  EXPECT_EQ(quantize(y, QuantMode::Inference).data(), (std::vector<double>{2, 4, -2, 4, -7}));
}

TEST(Quantize, TrainNoiseIsBoundedAndSeeded) {
  Rng a(5), b(5);
  const auto y = TD::full({1000}, 1.25);
  const auto qa = quantize(y, QuantMode::Train, &a);
  const auto qb = quantize(y, QuantMode::Train, &b);
  EXPECT_EQ(qa.data(), qb.data());
  for (double v : qa.data()) EXPECT_LT(std::abs(v - 1.25), 0.5);
  EXPECT_THROW(quantize(y, QuantMode::Train), PreconditionError);
}

TEST(GaussianRate, KnownValues) {
  const long double oracle = -std::log2(phi_oracle(0.5L) - phi_oracle(-0.5L));
  EXPECT_NEAR(static_cast<double>(oracle), kBitsStdNormalAtMean, 1e-12);
  EXPECT_NEAR(gaussian_bits(0, 0, 1), kBitsStdNormalAtMean, 1e-12);
  EXPECT_NEAR(gaussian_bits(4, 0, 1), 12.0909076650889228, 1e-9);  // mpmath, 40 digits
  const auto two = gaussian_rate(TD::zeros({2}), TD::zeros({2}), TD::full({2}, 1.0));
  EXPECT_DOUBLE_EQ(two.item(), 2.0 * gaussian_bits(0, 0, 1));
}

TEST(GaussianRate, SaturatesAtTableResolutionAndEscapeCost) {
  EXPECT_DOUBLE_EQ(gaussian_bits(10, 0, 1), 16.0);
  EXPECT_DOUBLE_EQ(gaussian_bits(32, 0, 1), 16.0);
  EXPECT_DOUBLE_EQ(gaussian_bits(33, 0, 1), 48.0);
  EXPECT_DOUBLE_EQ(gaussian_bits(-5, 0, 0.01), 48.0);  // floored support is [-4, 4]
  for (std::int64_t y : {10, 33, -5}) {
    const auto t = gaussian_cdf_table(0, y == -5 ? 0.01 : 1.0);
    EXPECT_DOUBLE_EQ(t.bits(y), gaussian_bits(static_cast<double>(y), 0, y == -5 ? 0.01 : 1.0));
  }
  const auto r = gaussian_rate(TD::full({2}, 40.0), TD::zeros({2}), TD::full({2}, 1.0));
  EXPECT_DOUBLE_EQ(r.item(), 96.0);

  // A saturated in-support symbol keeps the gradient of the unfloored rate.
  auto y = TD::full({1}, 10.0, true);
  ad::backward(gaussian_rate(y, TD::zeros({1}), TD::full({1}, 1.0)));
  const double h = 1e-5;
  auto unfloored = [](double v) {
    return -std::log2(0.5 * (std::erfc((v - 0.5) / std::numbers::sqrt2) - std::erfc((v + 0.5) / std::numbers::sqrt2)));
  };
  EXPECT_NEAR(y.grad()[0], (unfloored(10 + h) - unfloored(10 - h)) / (2 * h), 1e-4);
  EXPECT_GT(y.grad()[0], 0.0);

  // Far tail and escapes use the asymptotic tail gradient.
  // d/dv of -log2 P(cell v | N(0, 1)), mpmath at 60 digits.
  for (auto [v, exact] : {std::pair{12.5, 17.4309455364627600}, std::pair{40.0, 57.0229313714842786}}) {
    auto yt = TD::full({1}, v, true);
    auto st = TD::full({1}, 1.0, true);
    ad::backward(gaussian_rate(yt, TD::zeros({1}), st));
    EXPECT_NEAR(yt.grad()[0], exact, 1e-3 * exact) << v;
    EXPECT_LT(st.grad()[0], 0.0) << v;
  }
}

TEST(GaussianRate, SigmaIsFlooredAndRateMonotoneInDistance) {
  EXPECT_EQ(gaussian_bits(0.3, 0, 0.01), gaussian_bits(0.3, 0, kSigmaFloor));
  for (double s : {0.2, 1.0, 7.0}) {
    double prev = -1.0;
    for (double d = 0.0; d < 12.0 * s; d += 0.25) {
      const double b = gaussian_bits(1.5 + d, 1.5, s);
      EXPECT_GE(b, prev);
      prev = b;
    }
  }
}

TEST(GaussianRate, GradientMatchesFiniteDifferences) {
  const double err = ad::grad_check<double>(
      [](auto& v) {
        return gaussian_rate(v[0], v[1], ad::add_scalar(v[2], 0.6));  // sigma in [0.8, 2.6]
      },
      {{2, 3, 2, 2}, {2, 3, 2, 2}, {2, 3, 2, 2}}, 11, 0.2, 2.0);
  EXPECT_LE(err, 1e-4);
}

TEST(FactorizedRate, ValuesAndAdditivity) {
  FactorizedModel<double> m(3);
  const auto z = TD::zeros({1, 3, 2, 2});
  EXPECT_NEAR(factorized_rate(z, m).item(), 12 * kBitsStdNormalAtMean, 1e-9);
  for (auto& v : m.sigma_raw.data()) v = -30.0;  // softplus ~ 0, floored
  const double at_floor = factorized_rate(z, m).item() / 12.0;
  EXPECT_NEAR(at_floor, 7.90841805450185e-6, 1e-9);
  EXPECT_LT(at_floor, -std::log2(1.0 - 1.0 / 65536.0));  // below the escape-mass cost
  // Channel additivity
  FactorizedModel<double> m1(1);
  const auto one = TD::zeros({1, 1, 2, 2});
  EXPECT_NEAR(factorized_rate(TD::zeros({1, 3, 2, 2}), FactorizedModel<double>(3)).item(),
              3 * factorized_rate(one, m1).item(), 1e-12);
}

TEST(TotalRate, Arithmetic) {
  const auto r = total_rate(100, 50, 200, 50, 10000);
  EXPECT_EQ(r.bits_total, 400.0);
  EXPECT_DOUBLE_EQ(r.bpp, 0.04);
  EXPECT_EQ(r.bits_total, r.bits_y + r.bits_z);
  EXPECT_EQ(total_rate(0, 0, 0, 0, 10).bpp, 0.0);
  EXPECT_DOUBLE_EQ(total_rate(100, 50, 0, 0, 100).bpp, 1.5);
  EXPECT_THROW(total_rate(-1, 0, 0, 0, 10), PreconditionError);
}

TEST(CdfTable, StrictlyMonotoneWithFullMass) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto table = gaussian_cdf_table(rng.uniform(-100, 100), std::exp(rng.uniform(-4, 5)));
    EXPECT_EQ(table.cum.front(), 0u);
    EXPECT_EQ(table.cum.back(), kCdfTotal);
    for (std::size_t i = 1; i < table.cum.size(); ++i) EXPECT_GT(table.cum[i], table.cum[i - 1]);
    EXPECT_EQ(table.freq(table.escape_index()), 1u);
    EXPECT_LE(table.size(), kMaxSupport);
  }
}

TEST(CdfTable, SupportSpans32Sigma) {
  const auto t = gaussian_cdf_table(0.3, 1.0);
  EXPECT_EQ(t.offset, -32);
  EXPECT_EQ(t.size(), 65);
  const auto wide = gaussian_cdf_table(10.0, 1000.0);
  EXPECT_EQ(wide.size(), kMaxSupport);
  EXPECT_EQ(wide.offset, 10 - kMaxSupport / 2);
}

TEST(RangeCoder, FairCoinPayloadSize) {
  const std::vector<double> half = {0.5, 0.5};
  const auto table = make_cdf_table(0, half);
  Rng rng(1);
  std::vector<std::int32_t> s(1000);
  for (auto& v : s) v = static_cast<std::int32_t>(rng.uniform_int(0, 1));
  const auto payload = encode_symbols(s, [&](std::size_t) -> const CdfTable& { return table; });
  EXPECT_GE(payload.size(), 125u);
  EXPECT_LE(payload.size(), 135u);
  EXPECT_EQ(decode_symbols(payload, [&](std::size_t) -> const CdfTable& { return table; }, s.size()), s);
}

TEST(RangeCoder, EmptySequence) {
  const auto table = gaussian_cdf_table(0, 1);
  auto fn = [&](std::size_t) -> const CdfTable& { return table; };
  const auto payload = encode_symbols(std::span<const std::int32_t>(), fn);
  EXPECT_LE(payload.size(), 8u);
  EXPECT_TRUE(decode_symbols(payload, fn, 0).empty());
}

TEST(RangeCoder, GaussianRoundTripsAndTruncation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<double> mu, sigma;
    const auto s = gaussian_symbols(rng, 100000, mu, sigma);
    auto fn = [&](std::size_t i) { return gaussian_cdf_table(mu[i], sigma[i]); };
    const auto payload = encode_symbols(s, fn);
    EXPECT_EQ(decode_symbols(payload, fn, s.size()), s) << "seed " << seed;
    auto cut = payload;
    cut.pop_back();
    EXPECT_THROW(decode_symbols(cut, fn, s.size()), StreamError);
  }
}

TEST(RangeCoder, EscapesRoundTrip) {
  const auto table = gaussian_cdf_table(0.0, 0.5);
  auto fn = [&](std::size_t) -> const CdfTable& { return table; };
  const std::vector<std::int32_t> s = {0, 1000, -1, std::numeric_limits<std::int32_t>::min(),
                                       std::numeric_limits<std::int32_t>::max(), -70000, 0, 17};
  EXPECT_EQ(decode_symbols(encode_symbols(s, fn), fn, s.size()), s);
}

TEST(RangeCoder, RandomTablesRoundTrip) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CdfTable> tables;
    for (int t = 0; t < 8; ++t) {
      std::vector<double> p(static_cast<std::size_t>(rng.uniform_int(1, 300)));
      double total = 0;
      for (auto& v : p) total += (v = std::pow(rng.uniform(), 4.0));
      for (auto& v : p) v /= total;
      tables.push_back(make_cdf_table(static_cast<int>(rng.uniform_int(-50, 50)), p));
    }
    std::vector<std::int32_t> s(2000);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& t = tables[i % 8];
      s[i] = static_cast<std::int32_t>(rng.uniform_int(t.offset - 3, t.offset + t.size() + 2));
    }
    auto fn = [&](std::size_t i) -> const CdfTable& { return tables[i % 8]; };
    EXPECT_EQ(decode_symbols(encode_symbols(s, fn), fn, s.size()), s);
  }
}

TEST(RangeCoder, ActualBitsTrackEstimate) {
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    Rng rng(seed);
    std::vector<double> mu, sigma;
    const auto s = gaussian_symbols(rng, 20000, mu, sigma);
    double estimate = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) estimate += gaussian_bits(s[i], mu[i], sigma[i]);
    const auto payload = encode_symbols(s, [&](std::size_t i) { return gaussian_cdf_table(mu[i], sigma[i]); });
    const double actual = 8.0 * payload.size();
    EXPECT_GE(actual, estimate);
    EXPECT_LE(actual, 1.02 * estimate + 256.0);
  }
}

TEST(SymbolStream, LayoutAndCrc) {
  const std::vector<std::int32_t> s = {0, 1, -2, 3, 0, 0, 5};
  const auto table = gaussian_cdf_table(0, 2);
  auto fn = [&](std::size_t) -> const CdfTable& { return table; };
  ByteWriter w;
  write_symbol_stream(w, s, fn);
  const auto bytes = w.take();
  ByteReader r(bytes);
  const auto h = read_stream_header(r);
  EXPECT_EQ(h.count, s.size());
  EXPECT_EQ(bytes.size(), 8 + h.payload.size() + 4);
  EXPECT_EQ(decode_symbol_stream(h, s.size(), fn), s);
  EXPECT_THROW(decode_symbol_stream(h, s.size() + 1, fn), StreamError);
  // Decoding under a different model yields other symbols, caught by the CRC.
  const auto other = gaussian_cdf_table(3, 0.5);
  auto wrong = [&](std::size_t) -> const CdfTable& { return other; };
  EXPECT_THROW(decode_symbol_stream(h, s.size(), wrong), StreamError);
}
