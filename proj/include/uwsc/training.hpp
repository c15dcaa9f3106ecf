#pragma once

#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "uwsc/pipeline.hpp"

namespace uwsc {

// ---------------------------------------------------------------- image losses

namespace detail {

/// (B,3,H,W) -> (B,1,H,W) with Rec.601 weights, as a fixed 1x1 convolution.
template <class T>
ad::Tensor<T> luminance(const ad::Tensor<T>& x) {
  if (x.rank() != 4 || x.c() != 3) throw ShapeError("luminance expects (B,3,H,W), got " + ad::shape_str(x.shape()));
  const auto w = ad::Tensor<T>::from({1, 3, 1, 1}, {T(0.299), T(0.587), T(0.114)});
  return ad::conv2d(x, w, ad::Tensor<T>(), 1, 0);
}

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    s += (g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  for (auto& v : g) v /= s;
  return g;
}

}  // namespace detail

inline constexpr double kBoundaryEps = 1e-6;

/// Sobel gradient magnitude of the luminance, valid region only (H-2, W-2),
/// as sqrt(gx^2 + gy^2 + eps) - sqrt(eps) so it is differentiable at flat areas.
template <class T>
ad::Tensor<T> boundary_extract(const ad::Tensor<T>& x) {
  const auto lum = detail::luminance(x);
  if (lum.h() < 3 || lum.w() < 3) throw ShapeError("boundary extraction needs at least 3x3 images");
  const auto k = ad::Tensor<T>::from({2, 1, 3, 3}, {T(-1), T(0), T(1), T(-2), T(0), T(2), T(-1), T(0), T(1),    //
                                                    T(-1), T(-2), T(-1), T(0), T(0), T(0), T(1), T(2), T(1)});
  const auto g = ad::conv2d(lum, k, ad::Tensor<T>(), 1, 0);
  const auto mag2 = ad::add(ad::square(ad::slice_channels(g, 0, 1)), ad::square(ad::slice_channels(g, 1, 1)));
  return ad::add_scalar(ad::sqrt(ad::add_scalar(mag2, kBoundaryEps)), -std::sqrt(kBoundaryEps));
}

struct SsimConstants {
  static constexpr int kWindow = 11;
  static constexpr double kSigma = 1.5;
  static constexpr double kK1 = 0.01, kK2 = 0.03;
  static constexpr double kRange = 1.0;
};

/// Mean SSIM of the luminance over all valid 11x11 Gaussian windows.
template <class T>
ad::Tensor<T> ssim_tensor(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  using S = SsimConstants;
  if (a.shape() != b.shape()) throw ShapeError("ssim: shapes differ");
  if (a.h() < S::kWindow || a.w() < S::kWindow) throw ShapeError("ssim needs images of at least 11x11");
  const auto g = detail::gaussian_window(S::kWindow, S::kSigma);
  std::vector<T> w(static_cast<std::size_t>(S::kWindow * S::kWindow));
  for (int i = 0; i < S::kWindow; ++i)
    for (int j = 0; j < S::kWindow; ++j)
      w[static_cast<std::size_t>(i * S::kWindow + j)] = static_cast<T>(g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)]);
  const auto win = ad::Tensor<T>::from({1, 1, S::kWindow, S::kWindow}, std::move(w));
  auto blur = [&](const ad::Tensor<T>& t) { return ad::conv2d(t, win, ad::Tensor<T>(), 1, 0); };

  const auto la = detail::luminance(a), lb = detail::luminance(b);
  const auto mu_a = blur(la), mu_b = blur(lb);
  const auto mu_aa = ad::square(mu_a), mu_bb = ad::square(mu_b), mu_ab = ad::mul(mu_a, mu_b);
  const auto var_a = ad::sub(blur(ad::square(la)), mu_aa);
  const auto var_b = ad::sub(blur(ad::square(lb)), mu_bb);
  const auto cov = ad::sub(blur(ad::mul(la, lb)), mu_ab);
  const double c1 = std::pow(S::kK1 * S::kRange, 2), c2 = std::pow(S::kK2 * S::kRange, 2);
  const auto num = ad::mul(ad::add_scalar(ad::scale(mu_ab, 2.0), c1), ad::add_scalar(ad::scale(cov, 2.0), c2));
  const auto den = ad::mul(ad::add_scalar(ad::add(mu_aa, mu_bb), c1), ad::add_scalar(ad::add(var_a, var_b), c2));
  return ad::mean(ad::div(num, den));
}

// ---------------------------------------------------------------- loss

/// Per-term multipliers. `mu` weights d1..d4; zeroing a term removes it.
struct LossWeights {
  std::array<double, 4> mu = {0.4, 0.4, 0.1, 0.1};
  double rate = 1.0;
};

struct LossBreakdown {
  double r_total = 0, d1 = 0, d2 = 0, d3 = 0, d4 = 0, total = 0;
  bool operator==(const LossBreakdown&) const = default;
};

template <class T>
struct LossTerms {
  ad::Tensor<T> total;
  LossBreakdown values;
};

/// total = rate * r + lambda * (mu1 d1 + mu2 d2 + mu3 d3 + mu4 d4) with
/// d1 = MSE(G, O_EL), d2 = 1 - max(SSIM(G, O_EL), 0), d3 = MSE of boundary
/// maps, d4 = MSE(G, O_BL). `rate_bpp` is a scalar tensor.
template <class T>
LossTerms<T> compute_loss(const ad::Tensor<T>& g, const ad::Tensor<T>& o_el, const ad::Tensor<T>& o_bl,
                          const ad::Tensor<T>& rate_bpp, double lambda, const LossWeights& w = {}) {
  if (g.shape() != o_el.shape() || g.shape() != o_bl.shape()) throw ShapeError("loss: image shapes differ");
  if (rate_bpp.size() != 1) throw ShapeError("loss: rate must be a scalar");
  const auto d1 = ad::mse(g, o_el);
  const auto d2 = ad::add_scalar(ad::scale(ad::lower_bound(ssim_tensor(g, o_el), 0.0), -1.0), 1.0);
  const auto d3 = ad::mse(boundary_extract(g), boundary_extract(o_el));
  const auto d4 = ad::mse(g, o_bl);
  LossTerms<T> out;
  out.total = ad::weighted_sum<T>({rate_bpp, d1, d2, d3, d4},
                                  {w.rate, lambda * w.mu[0], lambda * w.mu[1], lambda * w.mu[2], lambda * w.mu[3]});
  auto& v = out.values;
  v.r_total = rate_bpp.item();
  v.d1 = d1.item();
  v.d2 = d2.item();
  v.d3 = d3.item();
  v.d4 = d4.item();
  v.total = w.rate * v.r_total + lambda * (w.mu[0] * v.d1 + w.mu[1] * v.d2 + w.mu[2] * v.d3 + w.mu[3] * v.d4);
  return out;
}

// ---------------------------------------------------------------- end-to-end forward

template <class T>
struct PipelineOutput {
  ad::Tensor<T> o_bl, o_el, rate_bpp;
};

/// Differentiable BL + EL pass on a batch. `coeffs` are unscaled coefficient
/// planes from D1; `source` is the underwater batch in [0,1].
template <class T>
PipelineOutput<T> pipeline_forward(const ModelSet<T>& m, const Dictionary& d2, const ad::Tensor<T>& coeffs,
                                   const ad::Tensor<T>& source, QuantMode mode, Rng* noise) {
  const auto sparse = codec_forward(m.sparse, ad::scale(coeffs, kPlaneScale), mode, noise);
  const auto o_bl = m.filter_bl(dictionary_synthesis(ad::scale(sparse.x_hat, 1.0 / kPlaneScale), d2));
  const auto pseudo = m.filter_pseudo(source);
  const auto mapped = ad::scale(ad::add_scalar(ad::sub(pseudo, o_bl), 1.0), 0.5);
  const auto residue = codec_forward(m.residue, mapped, mode, noise);
  const auto r = ad::add_scalar(ad::scale(residue.x_hat, 2.0), -1.0);
  PipelineOutput<T> out;
  out.o_bl = o_bl;
  out.o_el = m.filter_el(ad::add(o_bl, r));
  const double pixels = static_cast<double>(source.n()) * source.h() * source.w();
  out.rate_bpp = ad::scale(ad::add(ad::add(sparse.bits_y, sparse.bits_z), ad::add(residue.bits_y, residue.bits_z)),
                           1.0 / pixels);
  return out;
}

// ---------------------------------------------------------------- trainer

struct TrainConfig {
  int lambda = 64;
  LossWeights weights;
  int patch = 64;
  int patches = 16;
  int batch = 4;
  int epochs = 250;
  double lr = 1e-3;
  int k_lo = 96, k_hi = 160;
  std::uint64_t seed = 2024;

  /// Optimizer updates for the configured epochs over `patches` crops.
  int steps() const { return epochs * ((patches + batch - 1) / batch); }

  void validate() const {
    lambda_id(lambda);
    if (batch < 1 || patches < 1 || epochs < 0) throw PreconditionError("batch, patches and epochs must be positive");
    if (patch < 64 || patch % 64 != 0) throw PreconditionError("patch size must be a positive multiple of 64");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw PreconditionError("learning rate must be positive");
    if (k_lo < 1 || k_hi > kAtoms || k_lo > k_hi) throw PreconditionError("k range must lie within [1,256]");
    for (double m : weights.mu)
      if (!(m >= 0.0) || !std::isfinite(m)) throw PreconditionError("distortion weights must be non-negative");
    if (!(weights.rate >= 0.0) || !std::isfinite(weights.rate)) throw PreconditionError("rate weight must be non-negative");
  }

  std::string to_text() const {
    std::ostringstream o;
    o << std::setprecision(17) << "lambda=" << lambda << "\nmu1=" << weights.mu[0] << "\nmu2=" << weights.mu[1]
      << "\nmu3=" << weights.mu[2] << "\nmu4=" << weights.mu[3] << "\nrate_weight=" << weights.rate
      << "\npatch=" << patch << "\npatches=" << patches << "\nbatch=" << batch << "\nepochs=" << epochs
      << "\nlr=" << lr << "\nk_lo=" << k_lo << "\nk_hi=" << k_hi << "\nseed=" << seed << "\n";
    return o.str();
  }

  /// Applies `key=value` lines on top of `base`; '#' starts a comment line.
  static TrainConfig from_text(const std::string& text) { return from_text(text, TrainConfig()); }
  static TrainConfig from_text(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
      base.set(line.substr(0, eq), line.substr(eq + 1));
    }
    base.validate();
    return base;
  }

  void set(const std::string& key, const std::string& value) {
    auto num = [&]() {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw FormatError("config value for '" + key + "' is not a number");
      }
    };
    auto integer = [&]() {
      const double v = num();
      if (v != std::floor(v) || std::abs(v) > 2e9) throw FormatError("config value for '" + key + "' is not an integer");
      return static_cast<int>(v);
    };
    if (key == "lambda") lambda = integer();
    else if (key == "mu1") weights.mu[0] = num();
    else if (key == "mu2") weights.mu[1] = num();
    else if (key == "mu3") weights.mu[2] = num();
    else if (key == "mu4") weights.mu[3] = num();
    else if (key == "rate_weight") weights.rate = num();
    else if (key == "patch") patch = integer();
    else if (key == "patches") patches = integer();
    else if (key == "batch") batch = integer();
    else if (key == "epochs") epochs = integer();
    else if (key == "lr") lr = num();
    else if (key == "k_lo") k_lo = integer();
    else if (key == "k_hi") k_hi = integer();
    else if (key == "seed") {
      try {
        std::size_t used = 0;
        seed = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError("config value for 'seed' is not an unsigned integer");
      }
    } else throw FormatError("unknown config key '" + key + "'");
  }
};

/// One (underwater, enhanced target) pair, both of the same 64-divisible size.
struct TrainingPair {
  RgbImage source, target;
};

/// Random square crops of `size` from paired images (seeded, uniform positions).
inline std::vector<TrainingPair> extract_training_patches(std::span<const TrainingPair> images, int size, int count,
                                                          std::uint64_t seed) {
  if (images.empty() || count < 1) throw DataError("need at least one image and one patch");
  Rng rng(seed);
  std::vector<TrainingPair> out;
  for (int i = 0; i < count; ++i) {
    const auto& p = images[static_cast<std::size_t>(i) % images.size()];
    if (p.source.height < size || p.source.width < size || p.source.height != p.target.height ||
        p.source.width != p.target.width)
      throw DataError("training images must be paired and at least " + std::to_string(size) + " pixels per side");
    const int y0 = static_cast<int>(rng.uniform_int(0, p.source.height - size));
    const int x0 = static_cast<int>(rng.uniform_int(0, p.source.width - size));
    auto cut = [&](const RgbImage& img) {
      RgbImage c(size, size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int ch = 0; ch < 3; ++ch) c.at(y, x, ch) = img.at(y0 + y, x0 + x, ch);
      return c;
    };
    out.push_back({cut(p.source), cut(p.target)});
  }
  return out;
}

/// Adam training of a model set on fixed patches. Every batch draws one K in
/// [k_lo, k_hi]; OMP paths against D1 are computed once per patch so each K
/// only needs a triangular solve per block.
class Trainer {
 public:
  Trainer(Dictionary d1, Dictionary d2, std::span<const TrainingPair> patches, const TrainConfig& config,
          ModelSet<float> models)
      : d1_(std::move(d1)), d2_(std::move(d2)), config_(config), models_(std::move(models)),
        optimizer_(models_.parameters(), config.lr), order_rng_(derive_seed(config.seed, 11)),
        k_rng_(derive_seed(config.seed, 12)), noise_rng_(derive_seed(config.seed, 13)) {
    config_.validate();
    if (models_.config.lambda != config_.lambda) throw PreconditionError("model lambda differs from training lambda");
    if (patches.empty()) throw DataError("no training patches");
    const int h = patches[0].source.height, w = patches[0].source.width;
    if (h % 64 != 0 || w % 64 != 0) throw DataError("training patches must be 64-divisible");
    std::array<OmpCoder, 3> coders = {OmpCoder(d1_.channel[0]), OmpCoder(d1_.channel[1]), OmpCoder(d1_.channel[2])};
    for (const auto& p : patches) {
      if (p.source.height != h || p.source.width != w || p.target.height != h || p.target.width != w)
        throw DataError("training patches must share one size");
      Entry e;
      e.source = to_planes(p.source);
      e.target = to_planes(p.target);
      const auto grid = split_blocks(e.source);
      e.blocks_x = grid.blocks_x;
      for (int c = 0; c < 3; ++c)
        for (int b = 0; b < grid.count(); ++b) e.paths.push_back(coders[c].path(to_double(grid.block(c, b)), config_.k_hi));
      entries_.push_back(std::move(e));
    }
  }

  /// One optimizer update on the next batch; returns the loss before the update.
  LossBreakdown step() {
    const auto batch = next_batch();
    const int k = static_cast<int>(k_rng_.uniform_int(config_.k_lo, config_.k_hi));
    std::vector<ImagePlanes> coeffs, src, tgt;
    for (std::size_t i : batch) {
      coeffs.push_back(coefficients(i, k));
      src.push_back(entries_[i].source);
      tgt.push_back(entries_[i].target);
    }
    const auto out = pipeline_forward(models_, d2_, batch_tensor<float>(coeffs), batch_tensor<float>(src),
                                      QuantMode::Train, &noise_rng_);
    const auto loss = compute_loss(batch_tensor<float>(tgt), out.o_el, out.o_bl, out.rate_bpp,
                                   static_cast<double>(config_.lambda), config_.weights);
    for (double v : {loss.values.r_total, loss.values.d1, loss.values.d2, loss.values.d3, loss.values.d4})
      if (!std::isfinite(v))
        throw NumericError("non-finite loss component at step " + std::to_string(steps_) + ": r=" +
                           std::to_string(loss.values.r_total) + " d1=" + std::to_string(loss.values.d1) +
                           " d2=" + std::to_string(loss.values.d2) + " d3=" + std::to_string(loss.values.d3) +
                           " d4=" + std::to_string(loss.values.d4));
    optimizer_.zero_grad();
    ad::backward(loss.total);
    optimizer_.step();
    ++steps_;
    return loss.values;
  }

  /// Runs `steps` updates, writing one CSV row per step when `log` is given.
  std::vector<LossBreakdown> run(int steps, std::ostream* log = nullptr) {
    std::vector<LossBreakdown> out;
    if (log && steps_ == 0) *log << "step,r_total,d1,d2,d3,d4,total\n";
    for (int i = 0; i < steps; ++i) {
      out.push_back(step());
      if (log) {
        const auto& v = out.back();
        *log << steps_ << ',' << v.r_total << ',' << v.d1 << ',' << v.d2 << ',' << v.d3 << ',' << v.d4 << ','
             << v.total << '\n';
      }
    }
    return out;
  }

  /// Coefficient planes of patch `i` with `k` non-zeros per block.
  ImagePlanes coefficients(std::size_t i, int k) const {
    const auto& e = entries_.at(i);
    CoefficientPlanes planes(e.source.height, e.source.width, 3);
    const std::size_t per_channel = e.paths.size() / 3;
    for (int c = 0; c < 3; ++c)
      for (std::size_t b = 0; b < per_channel; ++b) {
        const auto code = e.paths[static_cast<std::size_t>(c) * per_channel + b].code(k, c);
        write_code_to_tile(planes, c, static_cast<int>(b) / e.blocks_x, static_cast<int>(b) % e.blocks_x, code);
      }
    return planes;
  }

  const ModelSet<float>& models() const { return models_; }
  const Dictionary& d1() const { return d1_; }
  const Dictionary& d2() const { return d2_; }
  int steps_done() const { return steps_; }

 private:
  struct Entry {
    ImagePlanes source, target;
    std::vector<OmpPath> paths;  // [channel][block]
    int blocks_x = 0;
  };

  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> out;
    while (static_cast<int>(out.size()) < config_.batch) {
      if (cursor_ == order_.size()) {
        order_.resize(entries_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        order_rng_.shuffle(order_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

  Dictionary d1_, d2_;
  TrainConfig config_;
  ModelSet<float> models_;
  ad::Adam<float> optimizer_;
  Rng order_rng_, k_rng_, noise_rng_;
  std::vector<Entry> entries_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int steps_ = 0;
};

/// Mean actual bpp and d1 = MSE(target, decoded EL) over full encodes.
struct HeldOutScore {
  double bpp_bl = 0.0, bpp_total = 0.0, d1 = 0.0;
};

inline HeldOutScore evaluate_held_out(const CodecSystem& sys, std::span<const TrainingPair> pairs, int k) {
  if (pairs.empty()) throw DataError("no evaluation pairs");
  HeldOutScore s;
  for (const auto& p : pairs) {
    const auto res = encode(p.source, sys, k, Layer::EL);
    s.bpp_bl += res.bpp_bl;
    s.bpp_total += res.bpp_total;
    const auto g = to_planes(p.target);
    double se = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
          const double d = static_cast<double>(g.at(c, y, x)) - res.o_el.at(c, y, x);
          se += d * d;
        }
    s.d1 += se / static_cast<double>(g.data.size());
  }
  const double n = static_cast<double>(pairs.size());
  s.bpp_bl /= n;
  s.bpp_total /= n;
  s.d1 /= n;
  return s;
}

}  // namespace uwsc
