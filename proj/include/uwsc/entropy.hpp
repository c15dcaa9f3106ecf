#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "uwsc/autodiff.hpp"
#include "uwsc/common.hpp"

namespace uwsc {

inline constexpr double kSigmaFloor = 0.11;
inline constexpr int kCdfBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfBits;
inline constexpr double kSupportSigmas = 32.0;
inline constexpr int kMaxSupport = 4095;
/// Smallest mass the quantized tables can assign (count 1 of 2^16).
inline constexpr double kMassFloor = 1.0 / kCdfTotal;
/// Escape slot at count 1 followed by a raw 32-bit value.
inline constexpr double kEscapeBits = 3.0 * kCdfBits;
/// Below this mass the gradient switches to the asymptotic tail form.
inline constexpr double kGradMassFloor = 1e-30;

// ---------------------------------------------------------------- Gaussian mass

/// P(round(Y) = y) for Y ~ N(mu, sigma^2), with sigma floored. Evaluated on the
/// lower tail via erfc so far-off symbols keep their relative precision.
inline double gaussian_mass(double y, double mu, double sigma) {
  const double s = std::max(sigma, kSigmaFloor);
  const double d = std::abs(y - mu);
  const double k = 1.0 / (s * std::numbers::sqrt2);
  return 0.5 * (std::erfc((d - 0.5) * k) - std::erfc((d + 0.5) * k));
}

/// Inclusive symbol range [lo, hi] covered by the coding table of N(mu, sigma^2).
struct SymbolSupport {
  double lo = 0.0, hi = 0.0;
  bool contains(double y) const { return y >= lo && y <= hi; }
};

inline SymbolSupport gaussian_support(double mu, double sigma) {
  const double s = std::max(sigma, kSigmaFloor);
  const double center = std::nearbyint(mu);
  constexpr int half = kMaxSupport / 2;
  return {std::max(std::nearbyint(mu - kSupportSigmas * s), center - half),
          std::min(std::nearbyint(mu + kSupportSigmas * s), center + half)};
}

/// Code length of y under the coder's model: the Gaussian mass saturated at the
/// table resolution, or the escape cost outside the table support.
inline double gaussian_bits(double y, double mu, double sigma) {
  if (!gaussian_support(mu, sigma).contains(y)) return kEscapeBits;
  return -std::log2(std::max(gaussian_mass(y, mu, sigma), kMassFloor));
}

namespace detail {

inline double std_normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace detail

/// Sum of gaussian_bits as a differentiable scalar. Gradients flow to y (train
/// mode), mu and sigma. Saturated and escaped symbols are charged the coder's
/// cost but keep the gradient of the Gaussian tail, so far outliers still pull
/// the model toward them. Sigma below the floor gets no gradient.
template <class T>
ad::Tensor<T> gaussian_rate(const ad::Tensor<T>& y, const ad::Tensor<T>& mu, const ad::Tensor<T>& sigma) {
  if (y.shape() != mu.shape() || y.shape() != sigma.shape())
    throw ShapeError("gaussian_rate: y, mu and sigma must have the same shape");
  const std::size_t n = y.size();
  double total = 0.0;
  std::vector<double> dy(n), dsig(n);
  constexpr double inv_ln2 = 1.0 / std::numbers::ln2;
  for (std::size_t i = 0; i < n; ++i) {
    const double yi = y.data()[i], mi = mu.data()[i], si = sigma.data()[i];
    const double s = std::max(si, kSigmaFloor);
    const bool escaped = !gaussian_support(mi, s).contains(yi);
    const double p = gaussian_mass(yi, mi, s);
    total += escaped ? kEscapeBits : -std::log2(std::max(p, kMassFloor));
    if (escaped || p <= kGradMassFloor) {
      // -d ln Q(u)/du ~ u + 1/u for the cell's inner edge u, far in the tail.
      const double u = (std::abs(yi - mi) - 0.5) / s;
      const double h = inv_ln2 * (u + 1.0 / u);
      dy[i] = (yi >= mi ? h : -h) / s;
      dsig[i] = si >= kSigmaFloor ? -h * u / s : 0.0;
      continue;
    }
    const double up = (yi - mi + 0.5) / s, um = (yi - mi - 0.5) / s;
    const double pu = detail::std_normal_pdf(up), pm = detail::std_normal_pdf(um);
    const double dp_dy = (pu - pm) / s;
    const double dp_ds = -(up * pu - um * pm) / s;
    dy[i] = -inv_ln2 * dp_dy / p;
    dsig[i] = si >= kSigmaFloor ? -inv_ln2 * dp_ds / p : 0.0;
  }
  auto yp = y.ptr(), mp = mu.ptr(), sp = sigma.ptr();
  return ad::make_result<T>("gaussian_rate", {1}, {static_cast<T>(total)}, {yp, mp, sp},
                            [yp, mp, sp, dy = std::move(dy), dsig = std::move(dsig)](ad::Node<T>& self) {
                              const double g = self.grad[0];
                              for (std::size_t i = 0; i < dy.size(); ++i) {
                                if (yp->requires_grad) yp->grad_buffer()[i] += static_cast<T>(g * dy[i]);
                                if (mp->requires_grad) mp->grad_buffer()[i] -= static_cast<T>(g * dy[i]);
                                if (sp->requires_grad) sp->grad_buffer()[i] += static_cast<T>(g * dsig[i]);
                              }
                            });
}

// ---------------------------------------------------------------- quantization

enum class QuantMode { Train, Inference };

/// Inference: round half to even. Train: additive U[-0.5, 0.5) noise from
/// `rng`. Both pass gradients straight through.
template <class T>
ad::Tensor<T> quantize(const ad::Tensor<T>& y, QuantMode mode, Rng* rng = nullptr) {
  if (mode == QuantMode::Inference) return ad::round_ste(y);
  if (!rng) throw PreconditionError("train-mode quantization needs a noise stream");
  return ad::add_uniform_noise(y, *rng);
}

// ---------------------------------------------------------------- factorized model

/// Per-channel Gaussian prior for the hyper latent: sigma = max(softplus(raw), floor).
template <class T>
struct FactorizedModel {
  ad::Tensor<T> mu, sigma_raw;

  FactorizedModel() = default;
  explicit FactorizedModel(int channels)
      : mu(ad::Tensor<T>::zeros({channels}, true)),
        sigma_raw(ad::Tensor<T>::full({channels}, static_cast<T>(std::log(std::numbers::e - 1.0)), true)) {}

  int channels() const { return static_cast<int>(mu.size()); }

  ad::Tensor<T> sigma() const { return ad::lower_bound(ad::softplus(sigma_raw), kSigmaFloor); }

  /// (mu, sigma) broadcast to a latent of the given shape.
  std::pair<ad::Tensor<T>, ad::Tensor<T>> params_for(const ad::Shape& shape) const {
    if (shape.size() != 4 || shape[1] != channels()) throw ShapeError("factorized model channel count mismatch");
    return {ad::broadcast_channel(mu, shape), ad::broadcast_channel(sigma(), shape)};
  }

  void collect(const std::string& prefix, ad::ParamList<T>& out) const {
    out.push_back({prefix + ".mu", mu});
    out.push_back({prefix + ".sigma_raw", sigma_raw});
  }
};

template <class T>
ad::Tensor<T> factorized_rate(const ad::Tensor<T>& z_hat, const FactorizedModel<T>& model) {
  auto [m, s] = model.params_for(z_hat.shape());
  return gaussian_rate(z_hat, m, s);
}

// ---------------------------------------------------------------- rate report

struct RateReport {
  double bits_y = 0.0;
  double bits_z = 0.0;
  double bits_total = 0.0;
  double bpp = 0.0;
};

/// Sparse-codec and residue-codec bits summed and normalized by `pixels`.
inline RateReport total_rate(double bits_sy, double bits_sz, double bits_ry, double bits_rz, double pixels) {
  for (double b : {bits_sy, bits_sz, bits_ry, bits_rz})
    if (!(b >= 0.0)) throw PreconditionError("rates must be non-negative");
  if (!(pixels > 0.0)) throw PreconditionError("pixel count must be positive");
  RateReport r;
  r.bits_y = bits_sy + bits_ry;
  r.bits_z = bits_sz + bits_rz;
  r.bits_total = r.bits_y + r.bits_z;
  r.bpp = r.bits_total / pixels;
  return r;
}

// ---------------------------------------------------------------- CDF tables

/// Quantized CDF over symbols [offset, offset + n) plus an escape slot.
/// cum has n + 2 entries: cum[0] = 0, cum[n] = start of escape, cum[n+1] = 2^16.
struct CdfTable {
  int offset = 0;
  std::vector<std::uint32_t> cum;

  int size() const { return static_cast<int>(cum.size()) - 2; }
  int escape_index() const { return size(); }
  std::uint32_t freq(int index) const { return cum[static_cast<std::size_t>(index) + 1] - cum[static_cast<std::size_t>(index)]; }
  bool contains(std::int64_t symbol) const { return symbol >= offset && symbol < static_cast<std::int64_t>(offset) + size(); }

  /// Exact code length of `symbol` under this table, escape included.
  double bits(std::int64_t symbol) const {
    if (contains(symbol)) return kCdfBits - std::log2(freq(static_cast<int>(symbol - offset)));
    return kCdfBits - std::log2(freq(escape_index())) + 2.0 * kCdfBits;
  }
};

/// Every symbol gets count 1 + floor(p * (2^16 - 1 - n)); the escape gets 1 and
/// the leftover goes to the most probable symbol (lowest index on ties).
inline CdfTable make_cdf_table(int offset, std::span<const double> probs) {
  const auto n = static_cast<std::uint32_t>(probs.size());
  if (n == 0 || n > kCdfTotal - 2) throw PreconditionError("CDF table needs 1..65534 symbols");
  const double budget = static_cast<double>(kCdfTotal - 1 - n);
  std::vector<std::uint32_t> freq(n);
  std::uint64_t used = 0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(probs[i], 0.0, 1.0);
    freq[i] = 1 + static_cast<std::uint32_t>(std::floor(p * budget));
    used += freq[i];
    if (probs[i] > probs[best]) best = i;
  }
  if (used > kCdfTotal - 1) throw NumericError("CDF probabilities sum above one");
  freq[best] += static_cast<std::uint32_t>(kCdfTotal - 1 - used);
  CdfTable t;
  t.offset = offset;
  t.cum.resize(n + 2);
  t.cum[0] = 0;
  for (std::size_t i = 0; i < n; ++i) t.cum[i + 1] = t.cum[i] + freq[i];
  t.cum[n + 1] = kCdfTotal;
  return t;
}

/// Table for N(mu, sigma^2) on [round(mu - 32 sigma), round(mu + 32 sigma)],
/// capped to kMaxSupport symbols centered on round(mu).
inline CdfTable gaussian_cdf_table(double mu, double sigma) {
  const double s = std::max(sigma, kSigmaFloor);
  if (!std::isfinite(mu) || !std::isfinite(s)) throw NumericError("non-finite Gaussian parameters");
  constexpr double lim = 1.0e9;
  const auto [lo, hi] = gaussian_support(mu, s);
  if (std::abs(lo) > lim || std::abs(hi) > lim) throw NumericError("Gaussian mean outside codable range");
  const int offset = static_cast<int>(lo);
  const int n = static_cast<int>(hi - lo) + 1;
  // Upper-tail mass beyond each cell boundary offset + j - 0.5, one erfc per boundary.
  const double k = 1.0 / (s * std::numbers::sqrt2);
  std::vector<double> tail(static_cast<std::size_t>(n) + 1);
  std::vector<bool> above(tail.size());
  for (std::size_t j = 0; j < tail.size(); ++j) {
    const double u = offset + static_cast<double>(j) - 0.5 - mu;
    above[j] = u >= 0.0;
    tail[j] = 0.5 * std::erfc(std::abs(u) * k);
  }
  std::vector<double> p(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (above[i]) {
      p[i] = tail[i] - tail[i + 1];
    } else if (!above[i + 1]) {
      p[i] = tail[i + 1] - tail[i];
    } else {
      p[i] = 1.0 - tail[i] - tail[i + 1];
    }
  }
  return make_cdf_table(offset, p);
}

// ---------------------------------------------------------------- range coder

/// Byte-oriented range coder with carry propagation (64-bit low, 32-bit range).
class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t size) {
    const std::uint32_t r = range_ >> kCdfBits;
    low_ += static_cast<std::uint64_t>(r) * start;
    range_ = r * size;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t temp = cache_;
      do {
        out_.push_back(static_cast<std::uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  /// Scaled cumulative value in [0, 2^16) for the next symbol.
  std::uint32_t peek() {
    r_ = range_ >> kCdfBits;
    return std::min<std::uint32_t>(code_ / r_, kCdfTotal - 1);
  }

  void consume(std::uint32_t start, std::uint32_t size) {
    code_ -= r_ * start;
    range_ = r_ * size;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

  bool exhausted() const { return pos_ == data_.size(); }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::uint32_t next() {
    if (pos_ >= data_.size()) throw StreamError("entropy-coded payload is truncated");
    return data_[pos_++];
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 1;
};

/// Encodes symbols[i] under table_for(i). Out-of-support symbols are sent as
/// the escape slot followed by their 32-bit value in two uniform 16-bit halves.
template <class TableFn>
std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> symbols, TableFn&& table_for) {
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const CdfTable& t = table_for(i);
    const std::int64_t s = symbols[i];
    if (t.contains(s)) {
      const int k = static_cast<int>(s - t.offset);
      enc.encode(t.cum[static_cast<std::size_t>(k)], t.freq(k));
    } else {
      enc.encode(t.cum[static_cast<std::size_t>(t.escape_index())], t.freq(t.escape_index()));
      const auto raw = static_cast<std::uint32_t>(symbols[i]);
      enc.encode(raw >> 16, 1);
      enc.encode(raw & 0xFFFFu, 1);
    }
  }
  return enc.finish();
}

template <class TableFn>
std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> payload, TableFn&& table_for, std::size_t count) {
  RangeDecoder dec(payload);
  std::vector<std::int32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const CdfTable& t = table_for(i);
    const std::uint32_t v = dec.peek();
    const auto it = std::upper_bound(t.cum.begin(), t.cum.end(), v);
    const int k = static_cast<int>(it - t.cum.begin()) - 1;
    dec.consume(t.cum[static_cast<std::size_t>(k)], t.freq(k));
    if (k == t.escape_index()) {
      const std::uint32_t hi = dec.peek();
      dec.consume(hi, 1);
      const std::uint32_t lo = dec.peek();
      dec.consume(lo, 1);
      out[i] = static_cast<std::int32_t>((hi << 16) | lo);
    } else {
      out[i] = t.offset + k;
    }
  }
  if (!dec.exhausted()) throw StreamError("entropy-coded payload has trailing bytes");
  return out;
}

// ---------------------------------------------------------------- stream container

/// u32 symbol count, u32 payload length, payload, CRC32 of (symbols as int32 LE
/// followed by the payload).
inline std::uint32_t symbol_crc(std::span<const std::int32_t> symbols, std::span<const std::uint8_t> payload) {
  ByteWriter w;
  for (std::int32_t s : symbols) w.u32(static_cast<std::uint32_t>(s));
  w.bytes(payload);
  return crc32_of(w.buffer());
}

template <class TableFn>
void write_symbol_stream(ByteWriter& w, std::span<const std::int32_t> symbols, TableFn&& table_for) {
  const auto payload = encode_symbols(symbols, table_for);
  w.u32(static_cast<std::uint32_t>(symbols.size()));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload);
  w.u32(symbol_crc(symbols, payload));
}

struct StreamHeader {
  std::uint32_t count = 0;
  std::span<const std::uint8_t> payload;
  std::uint32_t crc = 0;
};

inline StreamHeader read_stream_header(ByteReader& r) {
  StreamHeader h;
  h.count = r.u32();
  const std::uint32_t len = r.u32();
  h.payload = r.bytes(len);
  h.crc = r.u32();
  return h;
}

/// Decodes a stream and checks its CRC; a mismatch means corrupted bytes or
/// different model weights on the decoding side.
template <class TableFn>
std::vector<std::int32_t> decode_symbol_stream(const StreamHeader& h, std::size_t expected_count, TableFn&& table_for) {
  if (h.count != expected_count)
    throw StreamError("stream holds " + std::to_string(h.count) + " symbols, expected " + std::to_string(expected_count));
  auto symbols = decode_symbols(h.payload, table_for, h.count);
  if (symbol_crc(symbols, h.payload) != h.crc) throw StreamError("stream CRC mismatch");
  return symbols;
}

}  // namespace uwsc
