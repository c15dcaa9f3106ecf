#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "uwsc/image.hpp"

namespace uwsc {

/// Stand-in for an underwater enhancement operator. Implementations must be
/// deterministic and preserve dimensions.
class EnhancementOracle {
 public:
  virtual ~EnhancementOracle() = default;
  virtual RgbImage enhance(const RgbImage& img) const = 0;
};

namespace detail {

inline double channel_mean(std::span<const float> p) {
  double s = 0.0;
  for (float v : p) s += v;
  return s / static_cast<double>(p.size());
}

inline double channel_variance(std::span<const float> p, double mean) {
  double s = 0.0;
  for (float v : p) s += (v - mean) * (v - mean);
  return s / static_cast<double>(p.size());
}

}  // namespace detail

/// Gray-world white balance on 0..255-scaled planes. Zero-variance channels are
/// left untouched.
inline void gray_world_balance(ImagePlanes& planes) {
  std::array<double, 3> mean{};
  std::array<bool, 3> active{};
  double gray = 0.0;
  for (int c = 0; c < 3; ++c) {
    mean[c] = detail::channel_mean(planes.plane(c));
    active[c] = detail::channel_variance(planes.plane(c), mean[c]) > 0.0 && mean[c] > 0.0;
    gray += mean[c];
  }
  gray /= 3.0;
  for (int c = 0; c < 3; ++c) {
    if (!active[c]) continue;
    const double scale = gray / mean[c];
    for (float& v : planes.plane(c)) v = static_cast<float>(v * scale);
  }
}

/// Maps each channel's [1st, 99th] percentile onto [0, 255] (clamped).
inline void percentile_stretch(ImagePlanes& planes, double lo_q = 0.01, double hi_q = 0.99) {
  for (int c = 0; c < 3; ++c) {
    auto p = planes.plane(c);
    std::vector<float> sorted(p.begin(), p.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    const double lo = sorted[static_cast<std::size_t>(std::lround(lo_q * static_cast<double>(n - 1)))];
    const double hi = sorted[static_cast<std::size_t>(std::lround(hi_q * static_cast<double>(n - 1)))];
    if (!(hi > lo)) continue;
    const double gain = 255.0 / (hi - lo);
    for (float& v : p) v = static_cast<float>(std::clamp((v - lo) * gain, 0.0, 255.0));
  }
}

/// out = x + strength * (x - blur(x)) with the [1 2 1]^T[1 2 1]/16 kernel and
/// replicated borders.
inline void unsharp_mask(ImagePlanes& planes, double strength = 0.5) {
  const int h = planes.height, w = planes.width;
  static constexpr double k[3] = {0.25, 0.5, 0.25};
  for (int c = 0; c < 3; ++c) {
    const std::vector<float> src(planes.plane(c).begin(), planes.plane(c).end());
    auto at = [&](int y, int x) {
      y = std::clamp(y, 0, h - 1);
      x = std::clamp(x, 0, w - 1);
      return static_cast<double>(src[static_cast<std::size_t>(y) * w + x]);
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double blur = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) blur += k[dy + 1] * k[dx + 1] * at(y + dy, x + dx);
        const double v = at(y, x);
        planes.at(c, y, x) = static_cast<float>(v + strength * (v - blur));
      }
  }
}

/// Gray-world balance, then 1-99 percentile stretch, then a 3x3 unsharp mask.
class ReferenceEnhancer final : public EnhancementOracle {
 public:
  RgbImage enhance(const RgbImage& img) const override {
    ImagePlanes p(img.height, img.width, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) p.at(c, y, x) = img.at(y, x, c);
    gray_world_balance(p);
    percentile_stretch(p);
    unsharp_mask(p, 0.5);
    RgbImage out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(y, x, c) = static_cast<std::uint8_t>(
              std::nearbyint(std::clamp(static_cast<double>(p.at(c, y, x)), 0.0, 255.0)));
    return out;
  }
};

inline RgbImage reference_enhance(const RgbImage& img) { return ReferenceEnhancer{}.enhance(img); }

}  // namespace uwsc
