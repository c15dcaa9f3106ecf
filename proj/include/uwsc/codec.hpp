#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "uwsc/autodiff.hpp"
#include "uwsc/entropy.hpp"

namespace uwsc {

struct CodecConfig {
  int n = 64;      ///< internal width
  int m = 96;      ///< latent channels
  int hyper = 64;  ///< hyper-latent channels

  static CodecConfig toy() { return {8, 8, 8}; }

  void validate() const {
    if (n <= 0 || m <= 0 || hyper <= 0) throw PreconditionError("codec widths must be positive");
  }
  bool operator==(const CodecConfig&) const = default;
};

/// conv k3s1 -> PReLU -> conv k3s1 with identity skip.
template <class T>
struct ResidualUnit {
  /// The branch output starts small so stacked units stay near identity.
  static constexpr double kBranchInitScale = 0.1;

  ad::Conv2d<T> a, b;
  ad::PRelu<T> act;

  ResidualUnit() = default;
  ResidualUnit(int ch, Rng& rng) : a(ch, ch, 3, 1, rng), b(ch, ch, 3, 1, rng), act(ch) {
    for (auto& v : b.weight.data()) v *= static_cast<T>(kBranchInitScale);
  }

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return ad::add(x, b(act(a(x)))); }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    a.collect(p + ".a", out);
    act.collect(p + ".act", out);
    b.collect(p + ".b", out);
  }
};

template <class T>
struct ResidualBlock {
  static constexpr int kUnits = 4;
  std::array<ResidualUnit<T>, kUnits> units;

  ResidualBlock() = default;
  ResidualBlock(int ch, Rng& rng) {
    for (auto& u : units) u = ResidualUnit<T>(ch, rng);
  }

  ad::Tensor<T> operator()(ad::Tensor<T> x) const {
    for (const auto& u : units) x = u(x);
    return x;
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    for (int i = 0; i < kUnits; ++i) units[static_cast<std::size_t>(i)].collect(p + ".unit" + std::to_string(i), out);
  }
};

namespace detail {

template <class T>
void require_image_like(const ad::Tensor<T>& x, int channels, int multiple, const char* what) {
  if (x.rank() != 4 || x.c() != channels)
    throw ShapeError(std::string(what) + ": expected (B," + std::to_string(channels) + ",H,W), got " +
                     ad::shape_str(x.shape()));
  if (x.h() % multiple != 0 || x.w() % multiple != 0)
    throw ShapeError(std::string(what) + ": spatial dims must be multiples of " + std::to_string(multiple));
}

}  // namespace detail

/// Four stride-2 stages 3->N->N->N->N, residual blocks after stages 2..4, then a k3s1 projection to M.
template <class T>
struct Analysis {
  std::array<ad::Conv2d<T>, 4> down;
  std::array<ad::PRelu<T>, 4> act;
  std::array<ResidualBlock<T>, 3> rb;
  ad::Conv2d<T> proj;

  Analysis() = default;
  Analysis(const CodecConfig& c, Rng& rng) {
    for (int i = 0; i < 4; ++i) {
      down[static_cast<std::size_t>(i)] = ad::Conv2d<T>(i == 0 ? 3 : c.n, c.n, 3, 2, rng);
      act[static_cast<std::size_t>(i)] = ad::PRelu<T>(c.n);
    }
    for (auto& b : rb) b = ResidualBlock<T>(c.n, rng);
    proj = ad::Conv2d<T>(c.n, c.m, 3, 1, rng);
  }

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    detail::require_image_like(x, 3, 16, "analysis");
    ad::Tensor<T> h = x;
    for (std::size_t i = 0; i < 4; ++i) {
      h = act[i](down[i](h));
      if (i > 0) h = rb[i - 1](h);
    }
    return proj(h);
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    for (std::size_t i = 0; i < 4; ++i) {
      down[i].collect(p + ".down" + std::to_string(i), out);
      act[i].collect(p + ".act" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < 3; ++i) rb[i].collect(p + ".rb" + std::to_string(i), out);
    proj.collect(p + ".proj", out);
  }
};

/// Mirror of Analysis: k3s1 M->N, then (RB, tconv k3s2, PReLU) x3, final tconv N->3.
template <class T>
struct Synthesis {
  ad::Conv2d<T> proj;
  std::array<ResidualBlock<T>, 3> rb;
  std::array<ad::TConv2d<T>, 4> up;
  std::array<ad::PRelu<T>, 3> act;

  Synthesis() = default;
  Synthesis(const CodecConfig& c, Rng& rng) {
    proj = ad::Conv2d<T>(c.m, c.n, 3, 1, rng);
    for (auto& b : rb) b = ResidualBlock<T>(c.n, rng);
    for (int i = 0; i < 4; ++i) up[static_cast<std::size_t>(i)] = ad::TConv2d<T>(c.n, i == 3 ? 3 : c.n, 3, 2, rng);
    for (auto& a : act) a = ad::PRelu<T>(c.n);
  }

  ad::Tensor<T> operator()(const ad::Tensor<T>& y) const {
    if (y.rank() != 4 || y.c() != proj.weight.dim(1))
      throw ShapeError("synthesis: latent has shape " + ad::shape_str(y.shape()));
    ad::Tensor<T> h = proj(y);
    for (std::size_t i = 0; i < 3; ++i) h = act[i](up[i](rb[i](h)));
    return up[3](h);
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    proj.collect(p + ".proj", out);
    for (std::size_t i = 0; i < 3; ++i) {
      rb[i].collect(p + ".rb" + std::to_string(i), out);
      act[i].collect(p + ".act" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < 4; ++i) up[i].collect(p + ".up" + std::to_string(i), out);
  }
};

template <class T>
struct HyperAnalysis {
  std::array<ad::Conv2d<T>, 2> down;
  std::array<ad::PRelu<T>, 2> act;

  HyperAnalysis() = default;
  HyperAnalysis(const CodecConfig& c, Rng& rng) {
    down[0] = ad::Conv2d<T>(c.m, c.hyper, 3, 2, rng);
    down[1] = ad::Conv2d<T>(c.hyper, c.hyper, 3, 2, rng);
    act = {ad::PRelu<T>(c.hyper), ad::PRelu<T>(c.hyper)};
  }

  ad::Tensor<T> operator()(const ad::Tensor<T>& y) const {
    detail::require_image_like(y, down[0].weight.dim(1), 4, "hyper analysis");
    return act[1](down[1](act[0](down[0](y))));
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    for (std::size_t i = 0; i < 2; ++i) {
      down[i].collect(p + ".down" + std::to_string(i), out);
      act[i].collect(p + ".act" + std::to_string(i), out);
    }
  }
};

template <class T>
struct GaussianParams {
  ad::Tensor<T> mu, sigma;
};

/// Two tconv k3s2 + PReLU stages, then a k1s1 conv to 2M channels split into (mu, sigma).
template <class T>
struct HyperSynthesis {
  std::array<ad::TConv2d<T>, 2> up;
  std::array<ad::PRelu<T>, 2> act;
  ad::Conv2d<T> head;
  int m = 0;

  HyperSynthesis() = default;
  HyperSynthesis(const CodecConfig& c, Rng& rng) : m(c.m) {
    up[0] = ad::TConv2d<T>(c.hyper, c.hyper, 3, 2, rng);
    up[1] = ad::TConv2d<T>(c.hyper, c.hyper, 3, 2, rng);
    act = {ad::PRelu<T>(c.hyper), ad::PRelu<T>(c.hyper)};
    head = ad::Conv2d<T>(c.hyper, 2 * c.m, 1, 1, rng);
  }

  GaussianParams<T> operator()(const ad::Tensor<T>& z_hat) const {
    if (z_hat.rank() != 4 || z_hat.c() != up[0].weight.dim(0))
      throw ShapeError("hyper synthesis: hyper latent has shape " + ad::shape_str(z_hat.shape()));
    const auto h = head(act[1](up[1](act[0](up[0](z_hat)))));
    return {ad::slice_channels(h, 0, m),
            ad::lower_bound(ad::softplus(ad::slice_channels(h, m, m)), kSigmaFloor)};
  }
  void collect(const std::string& p, ad::ParamList<T>& out) const {
    for (std::size_t i = 0; i < 2; ++i) {
      up[i].collect(p + ".up" + std::to_string(i), out);
      act[i].collect(p + ".act" + std::to_string(i), out);
    }
    head.collect(p + ".head", out);
  }
};

/// Learned transform codec with a hyperprior. Inputs need H, W divisible by 64.
template <class T>
struct CodecModel {
  /// Inputs enter the analysis on an 8-bit scale, so one quantization step of
  /// the latents starts out comparable to one intensity level.
  static constexpr double kInputGain = 255.0;

  CodecConfig config;
  Analysis<T> analysis;
  Synthesis<T> synthesis;
  HyperAnalysis<T> hyper_analysis;
  HyperSynthesis<T> hyper_synthesis;
  FactorizedModel<T> prior;

  CodecModel() = default;
  CodecModel(const CodecConfig& c, std::uint64_t seed) : config(c) {
    c.validate();
    Rng rng(seed);
    analysis = Analysis<T>(c, rng);
    synthesis = Synthesis<T>(c, rng);
    hyper_analysis = HyperAnalysis<T>(c, rng);
    hyper_synthesis = HyperSynthesis<T>(c, rng);
    prior = FactorizedModel<T>(c.hyper);
  }

  void collect(const std::string& p, ad::ParamList<T>& out) const {
    analysis.collect(p + ".analysis", out);
    synthesis.collect(p + ".synthesis", out);
    hyper_analysis.collect(p + ".hyper_analysis", out);
    hyper_synthesis.collect(p + ".hyper_synthesis", out);
    prior.collect(p + ".prior", out);
  }
  ad::ParamList<T> parameters(const std::string& p = "codec") const {
    ad::ParamList<T> out;
    collect(p, out);
    return out;
  }

  ad::Tensor<T> analyze(const ad::Tensor<T>& x) const { return analysis(ad::scale(x, kInputGain)); }
  ad::Tensor<T> synthesize(const ad::Tensor<T>& y_hat) const { return ad::scale(synthesis(y_hat), 1.0 / kInputGain); }
};

template <class T>
struct CodecOutput {
  ad::Tensor<T> x_hat, y, y_hat, z_hat, mu, sigma;
  ad::Tensor<T> bits_y, bits_z;  ///< scalar rate estimates in bits
};

/// Differentiable forward pass. Train mode draws quantization noise from `noise`.
template <class T>
CodecOutput<T> codec_forward(const CodecModel<T>& model, const ad::Tensor<T>& x, QuantMode mode, Rng* noise = nullptr) {
  detail::require_image_like(x, 3, 64, "codec");
  CodecOutput<T> o;
  o.y = model.analyze(x);
  const auto z = model.hyper_analysis(o.y);
  o.z_hat = quantize(z, mode, noise);
  auto gp = model.hyper_synthesis(o.z_hat);
  o.mu = gp.mu;
  o.sigma = gp.sigma;
  o.y_hat = quantize(o.y, mode, noise);
  o.bits_y = gaussian_rate(o.y_hat, o.mu, o.sigma);
  o.bits_z = factorized_rate(o.z_hat, model.prior);
  o.x_hat = model.synthesize(o.y_hat);
  return o;
}

struct LatentShape {
  int batch = 1, y_h = 0, y_w = 0, z_h = 0, z_w = 0;

  static LatentShape for_input(int batch, int h, int w) {
    if (h <= 0 || w <= 0 || h % 64 != 0 || w % 64 != 0)
      throw ShapeError("codec input dims must be positive multiples of 64");
    return {batch, h / 16, w / 16, h / 64, w / 64};
  }
};

/// Rate accounting for one compress call: model estimate and coder payload, in bits.
struct CodecRate {
  double estimate_y = 0.0, estimate_z = 0.0;
  double payload_y = 0.0, payload_z = 0.0;
  double stream_bytes = 0.0;  ///< both streams including headers and CRCs

  double estimate() const { return estimate_y + estimate_z; }
  double payload() const { return payload_y + payload_z; }
};

namespace detail {

template <class T>
std::vector<std::int32_t> to_symbols(const ad::Tensor<T>& q) {
  std::vector<std::int32_t> s(q.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double v = q.data()[i];
    if (!std::isfinite(v) || std::abs(v) > 2147483647.0) throw NumericError("latent value out of symbol range");
    s[i] = static_cast<std::int32_t>(v);
  }
  return s;
}

template <class T>
std::vector<CdfTable> prior_tables(const FactorizedModel<T>& prior) {
  const auto sig = prior.sigma();
  std::vector<CdfTable> t;
  for (int c = 0; c < prior.channels(); ++c)
    t.push_back(gaussian_cdf_table(prior.mu.data()[static_cast<std::size_t>(c)], sig.data()[static_cast<std::size_t>(c)]));
  return t;
}

inline std::size_t channel_of(std::size_t i, const ad::Shape& s) {
  return (i / static_cast<std::size_t>(s[2] * s[3])) % static_cast<std::size_t>(s[1]);
}

template <class T>
GaussianParams<T> decoded_params(const CodecModel<T>& model, const std::vector<std::int32_t>& zs, const ad::Shape& zshape) {
  std::vector<T> zv(zs.begin(), zs.end());
  return model.hyper_synthesis(ad::Tensor<T>::from(zshape, std::move(zv)));
}

}  // namespace detail

/// Writes the y stream then the z stream. z is coded under the factorized
/// prior; y under N(mu, sigma) predicted from the quantized z, exactly as the
/// decoder will see it.
template <class T>
CodecRate compress(const CodecModel<T>& model, const ad::Tensor<T>& x, ByteWriter& out) {
  detail::require_image_like(x, 3, 64, "compress");
  const auto y = model.analyze(x);
  const auto z_hat = quantize(model.hyper_analysis(y), QuantMode::Inference);
  const auto zs = detail::to_symbols(z_hat);
  const auto gp = detail::decoded_params(model, zs, z_hat.shape());
  const auto ys = detail::to_symbols(quantize(y, QuantMode::Inference));

  const auto& mu = gp.mu.data();
  const auto& sg = gp.sigma.data();
  const auto ztables = detail::prior_tables(model.prior);
  const auto zshape = z_hat.shape();
  auto ztab = [&](std::size_t i) -> const CdfTable& { return ztables[detail::channel_of(i, zshape)]; };
  auto ytab = [&](std::size_t i) { return gaussian_cdf_table(mu[i], sg[i]); };

  CodecRate r;
  const auto psig = model.prior.sigma();
  for (std::size_t i = 0; i < ys.size(); ++i) r.estimate_y += gaussian_bits(ys[i], mu[i], sg[i]);
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const auto c = detail::channel_of(i, zshape);
    r.estimate_z += gaussian_bits(zs[i], model.prior.mu.data()[c], psig.data()[c]);
  }
  const std::size_t start = out.buffer().size();
  write_symbol_stream(out, ys, ytab);
  const std::size_t mid = out.buffer().size();
  write_symbol_stream(out, zs, ztab);
  constexpr double kStreamOverhead = 12.0;  // count, payload length, CRC
  r.payload_y = 8.0 * (static_cast<double>(mid - start) - kStreamOverhead);
  r.payload_z = 8.0 * (static_cast<double>(out.buffer().size() - mid) - kStreamOverhead);
  r.stream_bytes = static_cast<double>(out.buffer().size() - start);
  return r;
}

/// Reads the two streams written by compress and returns (y_hat, x_hat).
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> decompress_latent(const CodecModel<T>& model, ByteReader& in,
                                                           const LatentShape& ls) {
  const auto& c = model.config;
  const ad::Shape yshape{ls.batch, c.m, ls.y_h, ls.y_w};
  const ad::Shape zshape{ls.batch, c.hyper, ls.z_h, ls.z_w};
  const auto yh = read_stream_header(in);
  const auto zh = read_stream_header(in);
  const auto ztables = detail::prior_tables(model.prior);
  const auto zs = decode_symbol_stream(
      zh, ad::numel(zshape), [&](std::size_t i) -> const CdfTable& { return ztables[detail::channel_of(i, zshape)]; });
  const auto gp = detail::decoded_params(model, zs, zshape);
  const auto& mu = gp.mu.data();
  const auto& sg = gp.sigma.data();
  const auto ys = decode_symbol_stream(yh, ad::numel(yshape), [&](std::size_t i) { return gaussian_cdf_table(mu[i], sg[i]); });
  std::vector<T> yv(ys.begin(), ys.end());
  auto y_hat = ad::Tensor<T>::from(yshape, std::move(yv));
  return {y_hat, model.synthesize(y_hat)};
}

template <class T>
ad::Tensor<T> decompress(const CodecModel<T>& model, ByteReader& in, const LatentShape& ls) {
  return decompress_latent(model, in, ls).second;
}

}  // namespace uwsc
