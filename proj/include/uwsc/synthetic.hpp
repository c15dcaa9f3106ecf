#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "uwsc/image.hpp"

// Procedural scenes for desk-scale training and fixtures. A "natural" scene is
// a textured composition of shapes; the underwater variant applies a
// wavelength-dependent attenuation and veiling-light model on top.
namespace uwsc::synthetic {

inline ImagePlanes natural_planes(std::uint64_t seed, int height, int width) {
  Rng rng(derive_seed(seed, 0x4e41545552414cULL));
  ImagePlanes p(height, width, 3);
  std::array<double, 3> top{}, bottom{};
  for (int c = 0; c < 3; ++c) {
    top[c] = rng.uniform(0.3, 0.9);
    bottom[c] = rng.uniform(0.1, 0.7);
  }
  for (int y = 0; y < height; ++y) {
    const double t = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) p.at(c, y, x) = static_cast<float>(top[c] * (1 - t) + bottom[c] * t);
  }
  const int shapes = 6 + static_cast<int>(rng.uniform_int(0, 6));
  for (int s = 0; s < shapes; ++s) {
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double ry = rng.uniform(0.05, 0.35) * height, rx = rng.uniform(0.05, 0.35) * width;
    const bool ellipse = rng.uniform() < 0.6;
    std::array<double, 3> col{};
    for (auto& v : col) v = rng.uniform(0.05, 0.95);
    const double freq = rng.uniform(0.05, 0.6);
    const double phase = rng.uniform(0, 6.283185307179586);
    const double amp = rng.uniform(0.0, 0.15);
    const double angle = rng.uniform(0, 3.141592653589793);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = std::max(0, static_cast<int>(cy - ry)); y < std::min(height, static_cast<int>(cy + ry) + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx - rx)); x < std::min(width, static_cast<int>(cx + rx) + 1); ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        if (ellipse && dy * dy + dx * dx > 1.0) continue;
        const double tex = amp * std::sin(freq * (ca * x + sa * y) + phase);
        for (int c = 0; c < 3; ++c) p.at(c, y, x) = static_cast<float>(col[c] + tex);
      }
  }
  for (auto& v : p.data) v = static_cast<float>(std::clamp(v + rng.normal(0.0, 0.01), 0.0, 1.0));
  return p;
}

inline RgbImage natural_scene(std::uint64_t seed, int height, int width) {
  return to_rgb(natural_planes(seed, height, width));
}

/// I = J * t + B * (1 - t), t_c = exp(-beta_c * depth), with red attenuating
/// fastest and a blue-green veiling light.
inline RgbImage underwater_scene(std::uint64_t seed, int height, int width) {
  const ImagePlanes clean = natural_planes(seed, height, width);
  Rng rng(derive_seed(seed, 0x5741544552ULL));
  const std::array<double, 3> beta = {rng.uniform(1.2, 2.2), rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.5)};
  const std::array<double, 3> veil = {rng.uniform(0.05, 0.2), rng.uniform(0.35, 0.6), rng.uniform(0.45, 0.7)};
  const double d0 = rng.uniform(0.4, 1.0), d1 = rng.uniform(0.0, 0.8);
  ImagePlanes out(height, width, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double depth = d0 + d1 * (1.0 - static_cast<double>(y) / std::max(1, height - 1));
      for (int c = 0; c < 3; ++c) {
        const double t = std::exp(-beta[c] * depth);
        out.at(c, y, x) = static_cast<float>(clean.at(c, y, x) * t + veil[c] * (1.0 - t));
      }
    }
  return to_rgb(out);
}

}  // namespace uwsc::synthetic
