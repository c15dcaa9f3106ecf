#pragma once

#include <array>
#include <optional>
#include <sstream>

#include "uwsc/codec.hpp"
#include "uwsc/filter.hpp"
#include "uwsc/sparse.hpp"

namespace uwsc {

/// Coefficient planes are multiplied by this before entering the sparse codec
/// (DC terms of 16x16 blocks reach 16 on [0,1] images).
inline constexpr double kPlaneScale = 1.0 / 16.0;

inline constexpr std::array<int, 7> kLambdas = {4, 8, 16, 32, 64, 128, 256};

inline int lambda_id(int lambda) {
  for (std::size_t i = 0; i < kLambdas.size(); ++i)
    if (kLambdas[i] == lambda) return static_cast<int>(i);
  throw PreconditionError("lambda must be one of 4, 8, 16, 32, 64, 128, 256; got " + std::to_string(lambda));
}

// ---------------------------------------------------------------- tensor <-> planes

template <class T>
ad::Tensor<T> planes_tensor(const ImagePlanes& p, double scale = 1.0) {
  std::vector<T> v(p.data.size());
  std::transform(p.data.begin(), p.data.end(), v.begin(), [scale](float x) { return static_cast<T>(x * scale); });
  return ad::Tensor<T>::from({1, p.channels, p.height, p.width}, std::move(v));
}

/// Stacks equally sized planes into one (B,C,H,W) tensor.
template <class T>
ad::Tensor<T> batch_tensor(std::span<const ImagePlanes> items, double scale = 1.0) {
  if (items.empty()) throw PreconditionError("empty batch");
  const auto& f = items.front();
  std::vector<T> v;
  v.reserve(f.data.size() * items.size());
  for (const auto& p : items) {
    if (p.height != f.height || p.width != f.width || p.channels != f.channels)
      throw DimError("batch items differ in size");
    for (float x : p.data) v.push_back(static_cast<T>(x * scale));
  }
  return ad::Tensor<T>::from({static_cast<int>(items.size()), f.channels, f.height, f.width}, std::move(v));
}

template <class T>
ImagePlanes tensor_planes(const ad::Tensor<T>& t, int index = 0) {
  if (t.rank() != 4 || index < 0 || index >= t.n()) throw ShapeError("tensor_planes: bad tensor or batch index");
  ImagePlanes p(t.h(), t.w(), t.c());
  const std::size_t per = p.data.size();
  for (std::size_t i = 0; i < per; ++i) p.data[i] = static_cast<float>(t.data()[static_cast<std::size_t>(index) * per + i]);
  return p;
}

// ---------------------------------------------------------------- dictionary synthesis

/// Differentiable tile-wise synthesis: each 16x16 tile of coefficients, read
/// row-major as an atom index, becomes D_c * a laid out row-major in the tile.
/// `dict` must outlive the graph built from the result.
template <class T>
ad::Tensor<T> dictionary_synthesis(const ad::Tensor<T>& planes, const Dictionary& dict) {
  if (planes.rank() != 4 || planes.c() != 3 || planes.h() % kBlockSize != 0 || planes.w() % kBlockSize != 0)
    throw ShapeError("dictionary_synthesis expects (B,3,H,W) with 16-divisible dims, got " +
                     ad::shape_str(planes.shape()));
  if (dict.atom_dim() != kAtomDim || dict.atoms() != kAtoms) throw DimError("dictionary must be 256x256");
  const int B = planes.n(), H = planes.h(), W = planes.w();
  const auto idx = [H, W](int n, int c, int y, int x) {
    return ((static_cast<std::size_t>(n) * 3 + c) * H + y) * W + x;
  };
  std::vector<T> out(planes.size());
  std::array<double, kAtomDim> a{}, acc{};
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < 3; ++c) {
      const double* D = dict.channel[c].data();
      for (int by = 0; by < H; by += kBlockSize)
        for (int bx = 0; bx < W; bx += kBlockSize) {
          for (int j = 0; j < kAtomDim; ++j) a[j] = planes.data()[idx(n, c, by + j / kBlockSize, bx + j % kBlockSize)];
          acc.fill(0.0);
          for (int j = 0; j < kAtoms; ++j) {
            if (a[j] == 0.0) continue;
            const double* col = D + static_cast<std::size_t>(j) * kAtomDim;
            for (int i = 0; i < kAtomDim; ++i) acc[i] += a[j] * col[i];
          }
          for (int i = 0; i < kAtomDim; ++i)
            out[idx(n, c, by + i / kBlockSize, bx + i % kBlockSize)] = static_cast<T>(acc[i]);
        }
    }
  auto pp = planes.ptr();
  const Dictionary* dp = &dict;
  return ad::make_result<T>("dictionary_synthesis", planes.shape(), std::move(out), {pp},
                            [pp, dp, B, H, W, idx](ad::Node<T>& self) {
                              auto& g = pp->grad_buffer();
                              std::array<double, kAtomDim> go{};
                              for (int n = 0; n < B; ++n)
                                for (int c = 0; c < 3; ++c) {
                                  const double* D = dp->channel[c].data();
                                  for (int by = 0; by < H; by += kBlockSize)
                                    for (int bx = 0; bx < W; bx += kBlockSize) {
                                      for (int i = 0; i < kAtomDim; ++i)
                                        go[i] = self.grad[idx(n, c, by + i / kBlockSize, bx + i % kBlockSize)];
                                      for (int j = 0; j < kAtoms; ++j) {
                                        const double* col = D + static_cast<std::size_t>(j) * kAtomDim;
                                        double s = 0.0;
                                        for (int i = 0; i < kAtomDim; ++i) s += col[i] * go[i];
                                        g[idx(n, c, by + j / kBlockSize, bx + j % kBlockSize)] += static_cast<T>(s);
                                      }
                                    }
                                }
                            });
}

// ---------------------------------------------------------------- model set

struct ModelConfig {
  CodecConfig codec;
  FilterConfig filter;
  int lambda = 64;

  static ModelConfig toy(int lambda) { return {CodecConfig::toy(), FilterConfig::toy(), lambda}; }
  bool operator==(const ModelConfig&) const = default;

  std::string to_text() const {
    std::ostringstream o;
    o << "codec_n=" << codec.n << "\ncodec_m=" << codec.m << "\ncodec_hyper=" << codec.hyper
      << "\nfilter_width=" << filter.width << "\nlambda=" << lambda << "\n";
    return o.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    int seen = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
      const std::string key = line.substr(0, eq);
      int value = 0;
      try {
        std::size_t used = 0;
        value = std::stoi(line.substr(eq + 1), &used);
        if (used != line.size() - eq - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError("config value for '" + key + "' is not an integer");
      }
      int* slot = key == "codec_n" ? &c.codec.n
                  : key == "codec_m" ? &c.codec.m
                  : key == "codec_hyper" ? &c.codec.hyper
                  : key == "filter_width" ? &c.filter.width
                  : key == "lambda" ? &c.lambda
                  : nullptr;
      if (!slot) throw FormatError("unknown config key '" + key + "'");
      *slot = value;
      ++seen;
    }
    if (seen != 5) throw FormatError("config must define codec_n, codec_m, codec_hyper, filter_width, lambda");
    c.codec.validate();
    c.filter.validate();
    lambda_id(c.lambda);
    return c;
  }
};

/// Both codecs and the three filters of one lambda point.
template <class T>
struct ModelSet {
  ModelConfig config;
  CodecModel<T> sparse, residue;
  FilterModel<T> filter_bl, filter_pseudo, filter_el;

  ModelSet() = default;
  ModelSet(const ModelConfig& c, std::uint64_t seed)
      : config(c),
        sparse(c.codec, derive_seed(seed, 1)),
        residue(c.codec, derive_seed(seed, 2)),
        filter_bl(c.filter, derive_seed(seed, 3)),
        filter_pseudo(c.filter, derive_seed(seed, 4)),
        filter_el(c.filter, derive_seed(seed, 5)) {}

  void collect(ad::ParamList<T>& out) const {
    sparse.collect("codec.sparse", out);
    residue.collect("codec.residue", out);
    filter_bl.collect("filter.bl", out);
    filter_pseudo.collect("filter.pseudo", out);
    filter_el.collect("filter.el", out);
  }
  ad::ParamList<T> parameters() const {
    ad::ParamList<T> out;
    collect(out);
    return out;
  }
};

inline constexpr std::string_view kCheckpointMagic = "UWCFG01";

/// Checkpoint: magic, u32 config length, key=value config text, weight block,
/// u32 CRC over everything before it (the model hash).
template <class T>
std::vector<std::uint8_t> serialize_models(const ModelSet<T>& m) {
  ByteWriter w;
  const auto text = m.config.to_text();
  w.text(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.text(text);
  ad::write_parameters(w, m.parameters());
  w.u32(crc32_of(w.buffer()));
  return w.take();
}

/// Parses only the configuration header of a checkpoint.
inline ModelConfig checkpoint_config(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  try {
    if (r.text(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("not a model checkpoint");
    return ModelConfig::from_text(r.text(r.u32()));
  } catch (const StreamError&) {
    throw FormatError("checkpoint is truncated");
  }
}

/// Reads checkpoint weights into `params`. A layout difference raises
/// ShapeError naming the first offending parameter.
template <class T>
void read_checkpoint_weights(std::span<const std::uint8_t> bytes, const ad::ParamList<T>& params) {
  ByteReader r(bytes);
  try {
    r.text(kCheckpointMagic.size());
    r.text(r.u32());
    ad::read_parameters(r, bytes, params);
    const std::uint32_t expect = crc32_of(bytes.subspan(0, r.position()));
    if (r.u32() != expect) throw HashMismatchError("checkpoint checksum mismatch");
  } catch (const StreamError&) {
    throw FormatError("checkpoint is truncated");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
}

template <class T>
ModelSet<T> deserialize_models(std::span<const std::uint8_t> bytes) {
  ModelSet<T> m(checkpoint_config(bytes), 0);
  read_checkpoint_weights(bytes, m.parameters());
  return m;
}

template <class T>
void save_models(const std::string& path, const ModelSet<T>& m) {
  write_file(path, serialize_models(m));
}

template <class T>
ModelSet<T> load_models(const std::string& path) {
  return deserialize_models<T>(read_file(path));
}

// ---------------------------------------------------------------- codec system

/// Everything a decoder needs plus D1 for the encoder. The hash binds a
/// bitstream to the exact weights and enhanced dictionary.
struct CodecSystem {
  Dictionary d1, d2;
  ModelSet<float> models;
  std::uint32_t hash = 0;

  CodecSystem() = default;
  CodecSystem(Dictionary dict1, Dictionary dict2, ModelSet<float> m)
      : d1(std::move(dict1)), d2(std::move(dict2)), models(std::move(m)) {
    lambda_id(models.config.lambda);
    // Hashes raw values: a CRC over data followed by its own CRC is a constant,
    // so the checksummed serializations cannot be fed in directly.
    ByteWriter f;
    f.text(models.config.to_text());
    for (const auto& p : models.parameters()) {
      f.text(p.name);
      for (float v : p.tensor.data()) f.f32(v);
    }
    for (const auto& c : d2.channel)
      for (Eigen::Index i = 0; i < c.size(); ++i) f.f32(static_cast<float>(c.data()[i]));
    hash = crc32_of(f.buffer());
  }
};

// ---------------------------------------------------------------- bitstream

inline constexpr std::string_view kBitstreamMagic = "UWSC";
inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 20;

enum class Layer { BL, EL };

struct BitstreamHeader {
  std::uint8_t version = kBitstreamVersion;
  std::uint8_t flags = 0;
  int orig_h = 0, orig_w = 0, pad_h = 0, pad_w = 0;
  int k = 0;
  int lambda = 0;
  std::uint32_t config_hash = 0;

  bool has_el() const { return (flags & 1u) != 0; }
  bool operator==(const BitstreamHeader&) const = default;
};

inline void write_header(ByteWriter& w, const BitstreamHeader& h) {
  w.text(kBitstreamMagic);
  w.u8(h.version);
  w.u8(h.flags);
  for (int v : {h.orig_h, h.orig_w, h.pad_h, h.pad_w}) w.u16(static_cast<std::uint16_t>(v));
  w.u8(static_cast<std::uint8_t>(h.k - 1));
  w.u8(static_cast<std::uint8_t>(lambda_id(h.lambda)));
  w.u32(h.config_hash);
}

inline BitstreamHeader read_header(ByteReader& r) {
  BitstreamHeader h;
  try {
    if (r.text(kBitstreamMagic.size()) != kBitstreamMagic) throw FormatError("not a UWSC bitstream");
    h.version = r.u8();
    if (h.version != kBitstreamVersion) throw FormatError("unsupported bitstream version " + std::to_string(h.version));
    h.flags = r.u8();
    if ((h.flags & ~1u) != 0) throw FormatError("unknown bitstream flags");
    h.orig_h = r.u16();
    h.orig_w = r.u16();
    h.pad_h = r.u16();
    h.pad_w = r.u16();
    h.k = r.u8() + 1;
    const int lid = r.u8();
    if (lid >= static_cast<int>(kLambdas.size())) throw FormatError("bad lambda id");
    h.lambda = kLambdas[static_cast<std::size_t>(lid)];
    h.config_hash = r.u32();
  } catch (const StreamError&) {
    throw FormatError("bitstream header is truncated");
  }
  if (h.orig_h == 0 || h.orig_w == 0 || h.pad_h % 64 != 0 || h.pad_w % 64 != 0 || h.pad_h < h.orig_h ||
      h.pad_w < h.orig_w || h.pad_h - h.orig_h >= 64 || h.pad_w - h.orig_w >= 64)
    throw FormatError("inconsistent dimensions in bitstream header");
  return h;
}

struct EncodeResult {
  std::vector<std::uint8_t> bitstream;
  BitstreamHeader header;
  double bpp_bl = 0.0, bpp_total = 0.0;
  double zero_fraction = 0.0;  ///< of the coefficient planes entering the sparse codec
  CodecRate rate_bl, rate_el;
  ImagePlanes o_bl, o_el;  ///< padded encoder-side reconstructions, unclamped
  RgbImage image_bl, image_el;  ///< cropped 8-bit exports
};

namespace detail {

inline ad::Tensor<float> decode_bl_tensor(const CodecSystem& sys, ByteReader& r, const BitstreamHeader& h) {
  const auto planes = decompress(sys.models.sparse, r, LatentShape::for_input(1, h.pad_h, h.pad_w));
  return sys.models.filter_bl(dictionary_synthesis(ad::scale(planes, 1.0 / kPlaneScale), sys.d2));
}

inline ad::Tensor<float> decode_el_tensor(const CodecSystem& sys, ByteReader& r, const BitstreamHeader& h,
                                          const ad::Tensor<float>& o_bl) {
  const auto mapped = decompress(sys.models.residue, r, LatentShape::for_input(1, h.pad_h, h.pad_w));
  const auto residue = ad::add_scalar(ad::scale(mapped, 2.0), -1.0);
  return sys.models.filter_el(ad::add(o_bl, residue));
}

inline RgbImage export_image(const ad::Tensor<float>& t, const BitstreamHeader& h) {
  return crop(to_rgb(tensor_planes(t)), h.orig_h, h.orig_w);
}

inline void check_system(const CodecSystem& sys, const BitstreamHeader& h) {
  if (h.config_hash != sys.hash)
    throw ModelMismatchError("bitstream was produced with different models (config hash mismatch)");
  if (h.lambda != sys.models.config.lambda)
    throw ModelMismatchError("bitstream lambda " + std::to_string(h.lambda) + " does not match loaded models");
}

}  // namespace detail

/// Base layer always; enhancement layer when `layer` is EL. Reconstructions
/// are produced by decoding the just-written streams, so they match the decoder.
inline EncodeResult encode(const RgbImage& img, const CodecSystem& sys, int k, Layer layer) {
  SparseConfig{k}.validate();
  if (img.height <= 0 || img.width <= 0) throw DimError("empty image");
  if (img.height > 65535 - 63 || img.width > 65535 - 63) throw DimError("image too large for the bitstream header");
  ad::NoGradGuard no_grad;
  const auto padded = pad_to_multiple(img, 64);
  const auto src = to_planes(padded.image);

  EncodeResult res;
  auto& h = res.header;
  h.flags = layer == Layer::EL ? 1 : 0;
  h.orig_h = img.height;
  h.orig_w = img.width;
  h.pad_h = src.height;
  h.pad_w = src.width;
  h.k = k;
  h.lambda = sys.models.config.lambda;
  h.config_hash = sys.hash;

  ByteWriter w;
  write_header(w, h);
  const auto coeffs = encode_image(src, sys.d1, k);
  res.zero_fraction = coeffs.zero_fraction();
  res.rate_bl = compress(sys.models.sparse, planes_tensor<float>(coeffs, kPlaneScale), w);
  const std::size_t bl_end = w.buffer().size();

  ByteReader bl_reader(std::span<const std::uint8_t>(w.buffer()).subspan(kHeaderBytes));
  const auto o_bl = detail::decode_bl_tensor(sys, bl_reader, h);
  res.o_bl = tensor_planes(o_bl);
  res.image_bl = detail::export_image(o_bl, h);

  if (layer == Layer::EL) {
    const auto pseudo = sys.models.filter_pseudo(planes_tensor<float>(src));
    const auto mapped = ad::scale(ad::add_scalar(ad::sub(pseudo, o_bl), 1.0), 0.5);
    res.rate_el = compress(sys.models.residue, mapped, w);
    ByteReader el_reader(std::span<const std::uint8_t>(w.buffer()).subspan(bl_end));
    const auto o_el = detail::decode_el_tensor(sys, el_reader, h, o_bl);
    res.o_el = tensor_planes(o_el);
    res.image_el = detail::export_image(o_el, h);
  }
  const double pixels = static_cast<double>(img.height) * img.width;
  res.bpp_bl = 8.0 * static_cast<double>(bl_end) / pixels;
  res.bpp_total = 8.0 * static_cast<double>(w.buffer().size()) / pixels;
  res.bitstream = w.take();
  return res;
}

struct DecodeResult {
  BitstreamHeader header;
  ImagePlanes planes;  ///< padded, unclamped
  RgbImage image;      ///< cropped 8-bit
};

/// BL decoding reads only the header and BL segment; EL additionally needs
/// the EL segment and rejects trailing bytes.
inline DecodeResult decode(std::span<const std::uint8_t> bitstream, const CodecSystem& sys, Layer layer) {
  ad::NoGradGuard no_grad;
  ByteReader r(bitstream);
  DecodeResult out;
  out.header = read_header(r);
  detail::check_system(sys, out.header);
  auto t = detail::decode_bl_tensor(sys, r, out.header);
  if (layer == Layer::BL && !out.header.has_el() && r.remaining() != 0)
    throw StreamError("trailing bytes after base layer");
  if (layer == Layer::EL) {
    if (!out.header.has_el()) throw StreamError("bitstream carries no enhancement layer");
    t = detail::decode_el_tensor(sys, r, out.header, t);
    if (r.remaining() != 0) throw StreamError("trailing bytes after enhancement layer");
  }
  out.planes = tensor_planes(t);
  out.image = detail::export_image(t, out.header);
  return out;
}

}  // namespace uwsc
