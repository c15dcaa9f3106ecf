#pragma once

#include "uwsc/autodiff/module.hpp"

namespace uwsc::ad {

inline constexpr std::string_view kTensorMagic = "UWTEN01";

/// Weight block: magic, u32 count, then per parameter u16 name length, name,
/// u8 rank, u32 dims, float32 payload; trailing CRC32 over everything before it.
template <class T>
void write_parameters(ByteWriter& w, const ParamList<T>& params) {
  check_unique_names(params);
  const std::size_t start = w.buffer().size();
  w.text(kTensorMagic);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.text(p.name);
    w.u8(static_cast<std::uint8_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (T v : p.tensor.data()) w.f32(static_cast<float>(v));
  }
  w.u32(crc32_of(std::span<const std::uint8_t>(w.buffer()).subspan(start)));
}

/// Reads a weight block into `params` (matched by position and name).
template <class T>
void read_parameters(ByteReader& r, std::span<const std::uint8_t> whole, const ParamList<T>& params) {
  const std::size_t start = r.position();
  if (r.text(kTensorMagic.size()) != kTensorMagic) throw FormatError("bad weight block magic");
  const std::uint32_t count = r.u32();
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    e.name = r.text(r.u16());
    const int rank = r.u8();
    for (int i = 0; i < rank; ++i) e.shape.push_back(static_cast<int>(r.u32()));
    const std::size_t n = numel(e.shape);
    if (n > r.remaining() / 4) throw FormatError("weight payload for '" + e.name + "' is truncated");
    e.values.resize(n);
    for (auto& v : e.values) v = r.f32();
    entries.push_back(std::move(e));
  }
  const std::uint32_t expect = crc32_of(whole.subspan(start, r.position() - start));
  if (r.u32() != expect) throw HashMismatchError("weight block checksum mismatch");
  for (const auto& p : params) {
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == p.name; });
    if (it == entries.end()) throw ShapeError("parameter '" + p.name + "' missing from checkpoint");
    if (it->shape != p.tensor.shape())
      throw ShapeError("parameter '" + p.name + "' has shape " + shape_str(it->shape) + " in checkpoint, model expects " +
                       shape_str(p.tensor.shape()));
  }
  if (entries.size() != params.size()) throw ShapeError("checkpoint holds " + std::to_string(entries.size()) +
                                                        " parameters, model has " + std::to_string(params.size()));
  for (const auto& p : params) {
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == p.name; });
    auto t = p.tensor;
    std::transform(it->values.begin(), it->values.end(), t.data().begin(), [](float v) { return static_cast<T>(v); });
  }
}

template <class T>
std::vector<std::uint8_t> serialize_parameters(const ParamList<T>& params) {
  ByteWriter w;
  write_parameters(w, params);
  return w.take();
}

template <class T>
void deserialize_parameters(std::span<const std::uint8_t> bytes, const ParamList<T>& params) {
  ByteReader r(bytes);
  try {
    read_parameters(r, bytes, params);
  } catch (const StreamError&) {
    throw FormatError("weight block is truncated");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after weight block");
}

}  // namespace uwsc::ad
