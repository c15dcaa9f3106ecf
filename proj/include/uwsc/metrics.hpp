#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "uwsc/image.hpp"

namespace uwsc {

// ---------------------------------------------------------------- PSNR / SSIM

namespace detail {

inline void require_same_dims(const RgbImage& a, const RgbImage& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw DimError(std::string(what) + ": image dims differ (" + std::to_string(a.height) + "x" +
                   std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  if (a.height == 0 || a.width == 0) throw DimError(std::string(what) + ": empty image");
}

/// Row-major luminance plane on [0,1].
inline std::vector<double> luminance01(const RgbImage& img) {
  std::vector<double> y(static_cast<std::size_t>(img.height) * img.width);
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = (0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2]) / 255.0;
  return y;
}

}  // namespace detail

inline double mse(const RgbImage& a, const RgbImage& b) {
  detail::require_same_dims(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

/// 10 log10(peak^2 / MSE) over all RGB samples; identical images give +infinity.
inline double psnr(const RgbImage& a, const RgbImage& b, double peak = 255.0) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
};

/// Mean SSIM of the luminance over valid Gaussian windows.
inline double ssim(const RgbImage& a, const RgbImage& b, const SsimParams& p = {}) {
  detail::require_same_dims(a, b, "ssim");
  if (a.height < p.window || a.width < p.window)
    throw DimError("ssim needs images of at least " + std::to_string(p.window) + "x" + std::to_string(p.window));
  const int h = a.height, w = a.width, r = p.window / 2;
  std::vector<double> g(static_cast<std::size_t>(p.window));
  double gs = 0.0;
  for (int i = 0; i < p.window; ++i) gs += (g[i] = std::exp(-(i - r) * (i - r) / (2.0 * p.sigma * p.sigma)));
  for (auto& v : g) v /= gs;

  const auto la = detail::luminance01(a), lb = detail::luminance01(b);
  const int oh = h - p.window + 1, ow = w - p.window + 1;
  // Separable blur, valid region only.
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < p.window; ++k) s += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
        rows[static_cast<std::size_t>(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < p.window; ++k) s += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };
  auto product = [](const std::vector<double>& u, const std::vector<double>& v) {
    std::vector<double> o(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) o[i] = u[i] * v[i];
    return o;
  };
  const auto ma = blur(la), mb = blur(lb);
  const auto saa = blur(product(la, la)), sbb = blur(product(lb, lb)), sab = blur(product(la, lb));
  const double c1 = p.k1 * p.k1, c2 = p.k2 * p.k2;
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    total += (2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ma.size());
}

// ---------------------------------------------------------------- UIQM

/// Constants of the underwater image quality measure.
struct UiqmConstants {
  static constexpr double kC1 = 0.0282, kC2 = 0.2953, kC3 = 3.5753;
  static constexpr double kTrim = 0.1;          ///< alpha-trim fraction on each side
  static constexpr double kUicmMean = -0.0268;  ///< weight of the trimmed-mean chroma term
  static constexpr double kUicmSpread = 0.1586; ///< weight of the spread term
  static constexpr int kBlock = 8;
  static constexpr double kEps = 1e-6;
  static constexpr std::array<double, 3> kChannelWeights = {0.299, 0.587, 0.114};
};

struct UiqmResult {
  double uiqm = 0, uicm = 0, uism = 0, uiconm = 0;
};

namespace detail {

/// Mean after discarding ceil(aL K) smallest and floor(aR K) largest samples.
inline double trimmed_mean(std::vector<double> v, double alpha) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  const auto lo = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(k)));
  const auto hi = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(k)));
  if (lo + hi >= k) throw DimError("image too small for the trimmed mean");
  double s = 0.0;
  for (std::size_t i = lo; i < k - hi; ++i) s += v[i];
  return s / static_cast<double>(k - lo - hi);
}

/// Channel c of an 8-bit image as a row-major double plane on [0,255].
inline std::vector<double> channel255(const RgbImage& img, int c) {
  std::vector<double> out(static_cast<std::size_t>(img.height) * img.width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[3 * i + static_cast<std::size_t>(c)];
  return out;
}

/// Sobel gradient magnitude with replicated borders.
inline std::vector<double> sobel_magnitude(const std::vector<double>& p, int h, int w) {
  auto at = [&](int y, int x) {
    return p[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  std::vector<double> out(p.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2 * at(y, x - 1) -
                        at(y + 1, x - 1);
      const double gy = at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2 * at(y - 1, x) -
                        at(y - 1, x + 1);
      out[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

/// Calls f(max, min) for each full block; trailing partial blocks are dropped.
template <class F>
void for_each_block(const std::vector<double>& p, int h, int w, F&& f) {
  constexpr int b = UiqmConstants::kBlock;
  for (int by = 0; by + b <= h; by += b)
    for (int bx = 0; bx + b <= w; bx += b) {
      double mx = -std::numeric_limits<double>::infinity(), mn = std::numeric_limits<double>::infinity();
      for (int y = by; y < by + b; ++y)
        for (int x = bx; x < bx + b; ++x) {
          const double v = p[static_cast<std::size_t>(y) * w + x];
          mx = std::max(mx, v);
          mn = std::min(mn, v);
        }
      f(mx, mn);
    }
}

inline double block_count(int h, int w) {
  return static_cast<double>(h / UiqmConstants::kBlock) * (w / UiqmConstants::kBlock);
}

}  // namespace detail

/// Colorfulness from alpha-trimmed statistics of the RG and YB opponent channels.
inline double uicm(const RgbImage& img) {
  using K = UiqmConstants;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  if (n == 0) throw DimError("uicm: empty image");
  std::vector<double> rg(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.data[3 * i], g = img.data[3 * i + 1], b = img.data[3 * i + 2];
    rg[i] = r - g;
    yb[i] = (r + g) / 2.0 - b;
  }
  const double mrg = detail::trimmed_mean(rg, K::kTrim), myb = detail::trimmed_mean(yb, K::kTrim);
  double vrg = 0.0, vyb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    vrg += (rg[i] - mrg) * (rg[i] - mrg);
    vyb += (yb[i] - myb) * (yb[i] - myb);
  }
  vrg /= static_cast<double>(n);
  vyb /= static_cast<double>(n);
  return K::kUicmMean * std::sqrt(mrg * mrg + myb * myb) + K::kUicmSpread * std::sqrt(vrg + vyb);
}

/// Sharpness: weighted block EME of each channel multiplied by its Sobel magnitude.
inline double uism(const RgbImage& img) {
  using K = UiqmConstants;
  if (img.height < K::kBlock || img.width < K::kBlock) throw DimError("uism needs at least one 8x8 block");
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto ch = detail::channel255(img, c);
    auto edge = detail::sobel_magnitude(ch, img.height, img.width);
    for (std::size_t i = 0; i < edge.size(); ++i) edge[i] *= ch[i];
    double eme = 0.0;
    detail::for_each_block(edge, img.height, img.width,
                           [&](double mx, double mn) { eme += std::log((mx + K::kEps) / (mn + K::kEps)); });
    total += K::kChannelWeights[static_cast<std::size_t>(c)] * 2.0 / detail::block_count(img.height, img.width) * eme;
  }
  return total;
}

/// Contrast: block log-AMEE of the intensity (mean of R, G, B).
inline double uiconm(const RgbImage& img) {
  using K = UiqmConstants;
  if (img.height < K::kBlock || img.width < K::kBlock) throw DimError("uiconm needs at least one 8x8 block");
  std::vector<double> intensity(static_cast<std::size_t>(img.height) * img.width);
  for (std::size_t i = 0; i < intensity.size(); ++i)
    intensity[i] = (static_cast<double>(img.data[3 * i]) + img.data[3 * i + 1] + img.data[3 * i + 2]) / 3.0;
  double sum = 0.0;
  detail::for_each_block(intensity, img.height, img.width, [&](double mx, double mn) {
    const double ratio = (mx - mn) / (mx + mn + K::kEps);
    sum += ratio * std::log(ratio + K::kEps);
  });
  return -sum / detail::block_count(img.height, img.width);
}

inline UiqmResult uiqm(const RgbImage& img) {
  using K = UiqmConstants;
  UiqmResult r;
  r.uicm = uicm(img);
  r.uism = uism(img);
  r.uiconm = uiconm(img);
  r.uiqm = K::kC1 * r.uicm + K::kC2 * r.uism + K::kC3 * r.uiconm;
  return r;
}

// ---------------------------------------------------------------- BD-rate

struct RdPoint {
  double bpp = 0.0, quality = 0.0;
};

namespace detail {

inline void require_rd_curve(std::span<const RdPoint> c, const char* which) {
  if (c.size() < 4) throw PreconditionError(std::string(which) + " curve needs at least 4 points");
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!(c[i].bpp > 0.0) || !std::isfinite(c[i].bpp) || !std::isfinite(c[i].quality))
      throw PreconditionError(std::string(which) + " curve has a non-positive or non-finite point");
    if (i > 0 && !(c[i].bpp > c[i - 1].bpp))
      throw PreconditionError(std::string(which) + " curve must have strictly increasing bpp");
  }
}

/// Least-squares cubic log10(bpp) = p0 + p1 q + p2 q^2 + p3 q^3 in the
/// normalized abscissa t = (q - center) / scale.
inline Eigen::Vector4d fit_log_rate(std::span<const RdPoint> c, double center, double scale) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(c.size()), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double t = (c[i].quality - center) / scale;
    const auto r = static_cast<Eigen::Index>(i);
    A.row(r) << 1.0, t, t * t, t * t * t;
    y(r) = std::log10(c[i].bpp);
  }
  return A.colPivHouseholderQr().solve(y);
}

inline double integrate_cubic(const Eigen::Vector4d& p, double a, double b) {
  auto prim = [&](double t) { return p(0) * t + p(1) * t * t / 2 + p(2) * t * t * t / 3 + p(3) * t * t * t * t / 4; };
  return prim(b) - prim(a);
}

}  // namespace detail

/// Average bitrate difference (percent) of `test` against `anchor` over the
/// overlapping quality interval; nullopt when the quality ranges do not overlap.
inline std::optional<double> bd_rate(std::span<const RdPoint> anchor, std::span<const RdPoint> test) {
  detail::require_rd_curve(anchor, "anchor");
  detail::require_rd_curve(test, "test");
  auto range = [](std::span<const RdPoint> c) {
    const auto [lo, hi] = std::minmax_element(c.begin(), c.end(), [](auto& a, auto& b) { return a.quality < b.quality; });
    return std::pair{lo->quality, hi->quality};
  };
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  if (!(hi > lo)) return std::nullopt;
  const double center = 0.5 * (lo + hi), scale = 0.5 * (hi - lo);
  const auto pa = detail::fit_log_rate(anchor, center, scale);
  const auto pt = detail::fit_log_rate(test, center, scale);
  // Integrate over t in [-1, 1]; the interval length cancels in the average.
  const double avg = (detail::integrate_cubic(pt, -1.0, 1.0) - detail::integrate_cubic(pa, -1.0, 1.0)) / 2.0;
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

// ---------------------------------------------------------------- reports

struct RdRecord {
  std::string image_id;
  int lambda = 0;
  std::string layer;
  double bpp = 0, psnr = 0, ssim = 0, uiqm = 0, uicm = 0, uism = 0, uiconm = 0;
  bool operator==(const RdRecord&) const = default;
};

inline constexpr std::string_view kRdCsvHeader = "image_id,lambda,layer,bpp,psnr,ssim,uiqm,uicm,uism,uiconm";

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError("not a number: '" + s + "'");
  }
}

}  // namespace detail

inline std::string rd_csv(std::span<const RdRecord> records) {
  if (records.empty()) throw PreconditionError("rd report needs at least one record");
  std::ostringstream o;
  o << kRdCsvHeader << '\n';
  for (const auto& r : records) {
    if (r.image_id.find_first_of(",\n") != std::string::npos || r.layer.find_first_of(",\n") != std::string::npos)
      throw PreconditionError("image ids and layer names must not contain commas or newlines");
    o << r.image_id << ',' << r.lambda << ',' << r.layer;
    for (double v : {r.bpp, r.psnr, r.ssim, r.uiqm, r.uicm, r.uism, r.uiconm}) o << ',' << detail::fmt_double(v);
    o << '\n';
  }
  return o.str();
}

inline std::vector<RdRecord> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRdCsvHeader) throw FormatError("unexpected rd csv header");
  std::vector<RdRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw FormatError("rd csv row must have 10 fields: " + line);
    RdRecord r;
    r.image_id = f[0];
    r.lambda = static_cast<int>(detail::parse_double(f[1]));
    r.layer = f[2];
    double* slots[] = {&r.bpp, &r.psnr, &r.ssim, &r.uiqm, &r.uicm, &r.uism, &r.uiconm};
    for (std::size_t i = 0; i < 7; ++i) *slots[i] = detail::parse_double(f[i + 3]);
    out.push_back(std::move(r));
  }
  return out;
}

struct RdSeries {
  std::string label;
  std::vector<RdPoint> points;
};

/// Mean (bpp, metric) per (layer, lambda), one series per layer, ordered by bpp.
/// `metric` is one of psnr, ssim, uiqm.
inline std::vector<RdSeries> rd_series(std::span<const RdRecord> records, const std::string& metric) {
  double RdRecord::*field = metric == "psnr" ? &RdRecord::psnr
                            : metric == "ssim" ? &RdRecord::ssim
                            : metric == "uiqm" ? &RdRecord::uiqm
                            : nullptr;
  if (!field) throw PreconditionError("unknown metric '" + metric + "'");
  std::map<std::string, std::map<int, std::array<double, 3>>> acc;
  for (const auto& r : records) {
    auto& a = acc[r.layer][r.lambda];
    a[0] += r.bpp;
    a[1] += r.*field;
    a[2] += 1.0;
  }
  std::vector<RdSeries> out;
  for (const auto& [layer, by_lambda] : acc) {
    RdSeries s{layer, {}};
    for (const auto& [lambda, a] : by_lambda) s.points.push_back({a[0] / a[2], a[1] / a[2]});
    std::sort(s.points.begin(), s.points.end(), [](auto& x, auto& y) { return x.bpp < y.bpp; });
    out.push_back(std::move(s));
  }
  return out;
}

/// Line plot of quality against bpp with one polyline and legend entry per series.
inline std::string rd_svg(std::span<const RdSeries> series, const std::string& y_label) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 20, kTop = 20, kBottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (const auto& p : s.points)
      if (std::isfinite(p.quality)) {
        x0 = std::min(x0, p.bpp);
        x1 = std::max(x1, p.bpp);
        y0 = std::min(y0, p.quality);
        y1 = std::max(y1, p.quality);
      }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); };
  auto py = [&](double y) { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); };
  static constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">bpp</text>\n";
  o << "<text x=\"15\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 15 " << kH / 2 << ")\" text-anchor=\"middle\">"
    << detail::xml_escape(y_label) << "</text>\n";
  o << "<text x=\"" << kLeft << "\" y=\"" << kH - kBottom + 15 << "\" font-size=\"10\">" << x0 << "</text>\n";
  o << "<text x=\"" << kW - kRight << "\" y=\"" << kH - kBottom + 15 << "\" font-size=\"10\" text-anchor=\"end\">" << x1
    << "</text>\n";
  o << "<text x=\"" << kLeft - 5 << "\" y=\"" << kH - kBottom << "\" font-size=\"10\" text-anchor=\"end\">" << y0
    << "</text>\n";
  o << "<text x=\"" << kLeft - 5 << "\" y=\"" << kTop + 10 << "\" font-size=\"10\" text-anchor=\"end\">" << y1
    << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % kColors.size()];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& p : series[i].points) {
      if (!std::isfinite(p.quality)) continue;
      o << (first ? "" : " ") << px(p.bpp) << ',' << py(p.quality);
      first = false;
    }
    o << "\"/>\n";
    o << "<text x=\"" << kW - kRight - 5 << "\" y=\"" << kTop + 15 * (static_cast<double>(i) + 1)
      << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << color << "\">" << detail::xml_escape(series[i].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace uwsc
