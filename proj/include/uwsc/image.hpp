#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uwsc/common.hpp"

namespace uwsc {

inline constexpr int kBlockSize = 16;
inline constexpr int kBlockArea = kBlockSize * kBlockSize;

/// 8-bit RGB picture, row-major and channel-interleaved.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const RgbImage&) const = default;
};

/// Float planes in [0,1] (nominally), planar layout c*H*W.
struct ImagePlanes {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  ImagePlanes() = default;
  ImagePlanes(int h, int w, int c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::span<float> plane(int c) {
    return {data.data() + static_cast<std::size_t>(c) * height * width,
            static_cast<std::size_t>(height) * width};
  }
  std::span<const float> plane(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * height * width,
            static_cast<std::size_t>(height) * width};
  }
  bool operator==(const ImagePlanes&) const = default;
};

inline ImagePlanes to_planes(const RgbImage& img) {
  ImagePlanes out(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
  return out;
}

inline std::uint8_t to_u8(double v01) {
  const double v = std::nearbyint(std::clamp(v01, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(v);
}

/// Clamps to [0,1] and quantizes to 8 bits; the only place planes are clamped.
inline RgbImage to_rgb(const ImagePlanes& planes) {
  if (planes.channels != 3) throw DimError("to_rgb expects 3 channels");
  RgbImage out(planes.height, planes.width);
  for (int y = 0; y < planes.height; ++y)
    for (int x = 0; x < planes.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_u8(planes.at(c, y, x));
  return out;
}

// ---------------------------------------------------------------- PPM / PNG

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

inline RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("malformed PPM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 20) throw FormatError("PPM dimension too large");
    }
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a P6 PPM");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw FormatError("only 8-bit PPM is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("malformed PPM header");
  ++pos;
  if (w <= 0 || h <= 0) throw FormatError("PPM has empty dimensions");
  RgbImage img(h, w);
  if (bytes.size() - pos < img.data.size()) throw FormatError("truncated PPM data");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.data.size(), img.data.begin());
  return img;
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.data.data(), 0, nullptr))
    throw FormatError(std::string("PNG encode failed: ") + pi.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.data.data(), 0, nullptr))
    throw FormatError(std::string("PNG encode failed: ") + pi.message);
  out.resize(size);
  return out;
}

inline RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
    throw FormatError(std::string("PNG decode failed: ") + pi.message);
  pi.format = PNG_FORMAT_RGB;
  RgbImage img(static_cast<int>(pi.height), static_cast<int>(pi.width));
  if (!png_image_finish_read(&pi, nullptr, img.data.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw FormatError(std::string("PNG decode failed: ") + pi.message);
  }
  return img;
}

inline bool has_png_signature(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

inline RgbImage load_image(const std::string& path) {
  const auto bytes = read_file(path);
  if (has_png_signature(bytes)) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw FormatError("unsupported image encoding in '" + path + "'");
}

/// Format chosen by extension: ".png" writes PNG, anything else PPM (P6).
inline void save_image(const std::string& path, const RgbImage& img) {
  const bool png = path.size() >= 4 && (path.ends_with(".png") || path.ends_with(".PNG"));
  write_file(path, png ? encode_png(img) : encode_ppm(img));
}

// ---------------------------------------------------------------- padding

struct OriginalDims {
  int height = 0;
  int width = 0;
};

struct PaddedImage {
  RgbImage image;
  OriginalDims original;
};

/// Grows to the least multiples of `multiple`, replicating edge pixels.
inline PaddedImage pad_to_multiple(const RgbImage& img, int multiple) {
  if (multiple != 16 && multiple != 64)
    throw PreconditionError("pad multiple must be 16 or 64, got " + std::to_string(multiple));
  const int ph = (img.height + multiple - 1) / multiple * multiple;
  const int pw = (img.width + multiple - 1) / multiple * multiple;
  PaddedImage out{RgbImage(ph, pw), {img.height, img.width}};
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, img.height - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, img.width - 1);
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

inline RgbImage crop(const RgbImage& img, int height, int width) {
  if (height > img.height || width > img.width) throw DimError("crop larger than image");
  RgbImage out(height, width);
  for (int y = 0; y < height; ++y)
    std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(y) * img.width * 3, width * 3,
                out.data.begin() + static_cast<std::ptrdiff_t>(y) * width * 3);
  return out;
}

// ---------------------------------------------------------------- blocking

/// Raster-order 16x16 blocks; each block vectorized row-major, stored
/// [channel][block][256].
struct BlockGrid {
  int blocks_y = 0;
  int blocks_x = 0;
  int channels = 3;
  std::vector<float> blocks;

  BlockGrid() = default;
  BlockGrid(int by, int bx, int ch = 3)
      : blocks_y(by), blocks_x(bx), channels(ch),
        blocks(static_cast<std::size_t>(ch) * by * bx * kBlockArea, 0.0f) {}

  int count() const { return blocks_y * blocks_x; }
  std::span<float> block(int c, int index) {
    return {blocks.data() + (static_cast<std::size_t>(c) * count() + index) * kBlockArea,
            static_cast<std::size_t>(kBlockArea)};
  }
  std::span<const float> block(int c, int index) const {
    return {blocks.data() + (static_cast<std::size_t>(c) * count() + index) * kBlockArea,
            static_cast<std::size_t>(kBlockArea)};
  }
};

inline BlockGrid split_blocks(const ImagePlanes& img) {
  if (img.height % kBlockSize != 0 || img.width % kBlockSize != 0 || img.height == 0 ||
      img.width == 0)
    throw DimError("image dims " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                   " are not positive multiples of 16");
  BlockGrid grid(img.height / kBlockSize, img.width / kBlockSize, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int by = 0; by < grid.blocks_y; ++by)
      for (int bx = 0; bx < grid.blocks_x; ++bx) {
        auto blk = grid.block(c, by * grid.blocks_x + bx);
        for (int y = 0; y < kBlockSize; ++y)
          for (int x = 0; x < kBlockSize; ++x)
            blk[y * kBlockSize + x] = img.at(c, by * kBlockSize + y, bx * kBlockSize + x);
      }
  return grid;
}

inline ImagePlanes merge_blocks(const BlockGrid& grid) {
  ImagePlanes img(grid.blocks_y * kBlockSize, grid.blocks_x * kBlockSize, grid.channels);
  for (int c = 0; c < grid.channels; ++c)
    for (int by = 0; by < grid.blocks_y; ++by)
      for (int bx = 0; bx < grid.blocks_x; ++bx) {
        auto blk = grid.block(c, by * grid.blocks_x + bx);
        for (int y = 0; y < kBlockSize; ++y)
          for (int x = 0; x < kBlockSize; ++x)
            img.at(c, by * kBlockSize + y, bx * kBlockSize + x) = blk[y * kBlockSize + x];
      }
  return img;
}

}  // namespace uwsc
