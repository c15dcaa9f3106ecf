#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "uwsc/common.hpp"
#include "uwsc/image.hpp"

namespace uwsc {

inline constexpr int kAtoms = 256;
inline constexpr int kAtomDim = kBlockArea;

/// Per-channel atom matrices (atom_dim x atoms, column-major). D1 columns are
/// unit-norm; D2 columns are left as solved.
struct Dictionary {
  std::array<Eigen::MatrixXd, 3> channel;

  int atom_dim() const { return static_cast<int>(channel[0].rows()); }
  int atoms() const { return static_cast<int>(channel[0].cols()); }
};

struct SparseEntry {
  int atom = 0;
  double value = 0.0;
  bool operator==(const SparseEntry&) const = default;
};

/// Sparse code of one block channel; atom indices strictly increasing.
struct SparseBlockCode {
  int channel = 0;
  std::vector<SparseEntry> entries;
};

/// Image-shaped planes where tile (by, bx) of channel c holds the 256
/// coefficients of that block, atom j at tile position (j / 16, j % 16).
struct CoefficientPlanes : ImagePlanes {
  using ImagePlanes::ImagePlanes;
  explicit CoefficientPlanes(ImagePlanes p) : ImagePlanes(std::move(p)) {}

  double zero_fraction() const {
    const auto zeros = std::count(data.begin(), data.end(), 0.0f);
    return static_cast<double>(zeros) / static_cast<double>(data.size());
  }
};

struct SparseConfig {
  int k_nonzero = 32;
  double eta = 0.0;  // L1 weight of the penalized form; unused by the exact-K solver.

  void validate() const {
    if (k_nonzero < 1 || k_nonzero > kAtoms)
      throw PreconditionError("k_nonzero must lie in [1,256], got " + std::to_string(k_nonzero));
  }
};

// ---------------------------------------------------------------- OMP

/// Greedy selection order plus the Cholesky factor of the selected Gram
/// matrix. Prefixes of a path are themselves OMP solutions, so codes for any
/// k <= length() can be recovered without re-running the selection.
struct OmpPath {
  std::vector<int> order;
  std::vector<double> chol;  // packed lower-triangular rows
  std::vector<double> proj;  // D^T x restricted to `order`
  std::vector<double> residual_norms;  // after each selection; [0] is ||x||
  int length() const { return static_cast<int>(order.size()); }

  /// Least-squares coefficients on the first k selected atoms.
  std::vector<double> coefficients(int k) const {
    k = std::min(k, length());
    std::vector<double> z(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      double s = proj[i];
      for (int j = 0; j < i; ++j) s -= L(i, j) * z[j];
      z[i] = s / L(i, i);
    }
    for (int i = k - 1; i >= 0; --i) {
      double s = z[i];
      for (int j = i + 1; j < k; ++j) s -= L(j, i) * z[j];
      z[i] = s / L(i, i);
    }
    return z;
  }

  SparseBlockCode code(int k, int channel = 0) const {
    k = std::min(k, length());
    const auto coef = coefficients(k);
    SparseBlockCode out{channel, {}};
    out.entries.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.entries.push_back({order[i], coef[i]});
    std::sort(out.entries.begin(), out.entries.end(),
              [](const SparseEntry& a, const SparseEntry& b) { return a.atom < b.atom; });
    return out;
  }

  double L(int i, int j) const { return chol[static_cast<std::size_t>(i) * (i + 1) / 2 + j]; }
  double& L(int i, int j) { return chol[static_cast<std::size_t>(i) * (i + 1) / 2 + j]; }
};

/// Orthogonal matching pursuit against one dictionary channel. Holds the
/// dictionary's Gram matrix so per-block work is O(atoms * k).
class OmpCoder {
 public:
  static constexpr double kResidualStop = 1e-10;

  explicit OmpCoder(const Eigen::MatrixXd& dict) : dict_(dict), gram_(dict.transpose() * dict) {
    if (!dict_.allFinite()) throw NumericError("dictionary contains non-finite entries");
  }

  const Eigen::MatrixXd& dictionary() const { return dict_; }

  OmpPath path(std::span<const double> x, int k_max) const {
    const int n = static_cast<int>(dict_.rows());
    const int m = static_cast<int>(dict_.cols());
    if (static_cast<int>(x.size()) != n) throw DimError("block length does not match atom_dim");
    if (k_max < 1 || k_max > m) throw PreconditionError("k must lie in [1, atoms]");

    OmpPath p;
    p.chol.reserve(static_cast<std::size_t>(k_max) * (k_max + 1) / 2);
    p.order.reserve(static_cast<std::size_t>(k_max));

    std::vector<double> alpha0(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const double* d = dict_.data() + static_cast<std::size_t>(j) * n;
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += d[i] * x[i];
      alpha0[j] = s;
    }
    std::vector<double> residual(x.begin(), x.end());
    double rnorm = norm(residual);
    p.residual_norms.push_back(rnorm);
    std::vector<char> used(static_cast<std::size_t>(m), 0);
    std::vector<double> corr(alpha0);
    std::vector<double> coef;

    while (p.length() < k_max && rnorm >= kResidualStop) {
      int best = -1;
      double best_abs = -1.0;
      for (int j = 0; j < m; ++j) {
        if (used[j]) continue;
        const double a = std::abs(corr[j]);
        if (a > best_abs) {
          best_abs = a;
          best = j;
        }
      }
      if (best < 0 || best_abs == 0.0) break;

      const int s = p.length();
      p.chol.resize(p.chol.size() + static_cast<std::size_t>(s) + 1, 0.0);
      // Cholesky row for the new atom: L w = G[S, best].
      for (int i = 0; i < s; ++i) {
        double v = gram_(p.order[i], best);
        for (int j = 0; j < i; ++j) v -= p.L(i, j) * p.L(s, j);
        p.L(s, i) = v / p.L(i, i);
      }
      double d2 = gram_(best, best);
      for (int j = 0; j < s; ++j) d2 -= p.L(s, j) * p.L(s, j);
      if (!(d2 > 1e-12 * std::max(1.0, gram_(best, best)))) {
        d2 = std::max(d2, 0.0) + 1e-10 * std::max(1.0, gram_(best, best));  // ridge rescue
        if (!std::isfinite(d2) || d2 <= 0.0)
          throw NumericError("support Gram matrix is singular");
      }
      p.L(s, s) = std::sqrt(d2);
      p.order.push_back(best);
      p.proj.push_back(alpha0[best]);
      used[best] = 1;

      coef = p.coefficients(p.length());
      for (int i = 0; i < n; ++i) residual[i] = x[i];
      for (int t = 0; t < p.length(); ++t) {
        const double* d = dict_.data() + static_cast<std::size_t>(p.order[t]) * n;
        for (int i = 0; i < n; ++i) residual[i] -= coef[t] * d[i];
      }
      const double next = norm(residual);
      if (!std::isfinite(next)) throw NumericError("OMP residual became non-finite");
      rnorm = next;
      p.residual_norms.push_back(rnorm);

      corr = alpha0;
      for (int t = 0; t < p.length(); ++t) {
        const double* g = gram_.data() + static_cast<std::size_t>(p.order[t]) * m;
        const double a = coef[t];
        for (int j = 0; j < m; ++j) corr[j] -= g[j] * a;
      }
    }
    return p;
  }

  SparseBlockCode encode(std::span<const double> x, int k, int channel = 0) const {
    return path(x, k).code(k, channel);
  }

 private:
  static double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
  }

  Eigen::MatrixXd dict_;
  Eigen::MatrixXd gram_;
};

inline SparseBlockCode omp_encode(std::span<const double> block, const Eigen::MatrixXd& dict, int k) {
  return OmpCoder(dict).encode(block, k);
}

inline std::vector<double> reconstruct_block(const SparseBlockCode& code, const Eigen::MatrixXd& dict) {
  const auto n = static_cast<std::size_t>(dict.rows());
  std::vector<double> out(n, 0.0);
  for (const auto& e : code.entries) {
    if (e.atom < 0 || e.atom >= dict.cols())
      throw IndexError("atom index " + std::to_string(e.atom) + " out of range");
    const double* d = dict.data() + static_cast<std::size_t>(e.atom) * n;
    for (std::size_t i = 0; i < n; ++i) out[i] += e.value * d[i];
  }
  return out;
}

/// Orthonormal 2-D DCT-II basis of 16x16 blocks, atom u*16+v, same for every channel.
inline Dictionary dct_dictionary() {
  Eigen::MatrixXd d(kAtomDim, kAtoms);
  for (int u = 0; u < kBlockSize; ++u)
    for (int v = 0; v < kBlockSize; ++v)
      for (int y = 0; y < kBlockSize; ++y)
        for (int x = 0; x < kBlockSize; ++x) {
          const double cu = u == 0 ? std::sqrt(1.0 / kBlockSize) : std::sqrt(2.0 / kBlockSize);
          const double cv = v == 0 ? std::sqrt(1.0 / kBlockSize) : std::sqrt(2.0 / kBlockSize);
          d(y * kBlockSize + x, u * kBlockSize + v) = cu * cv * std::cos((2 * y + 1) * u * std::numbers::pi / 32.0) *
                                                      std::cos((2 * x + 1) * v * std::numbers::pi / 32.0);
        }
  Dictionary out;
  for (auto& c : out.channel) c = d;
  return out;
}

// ---------------------------------------------------------------- image coding

inline std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

inline void write_code_to_tile(CoefficientPlanes& planes, int c, int by, int bx,
                               const SparseBlockCode& code) {
  for (const auto& e : code.entries)
    planes.at(c, by * kBlockSize + e.atom / kBlockSize, bx * kBlockSize + e.atom % kBlockSize) =
        static_cast<float>(e.value);
}

/// Exact-K OMP per block and channel, packed into coefficient planes.
inline CoefficientPlanes encode_image(const ImagePlanes& img, const Dictionary& dict, int k) {
  SparseConfig{k}.validate();
  if (dict.atom_dim() != kAtomDim || dict.atoms() != kAtoms)
    throw DimError("encode_image requires a 256x256 dictionary");
  const BlockGrid grid = split_blocks(img);
  CoefficientPlanes planes(img.height, img.width, 3);
  for (int c = 0; c < 3; ++c) {
    const OmpCoder coder(dict.channel[c]);
    for (int b = 0; b < grid.count(); ++b) {
      const auto code = coder.encode(to_double(grid.block(c, b)), k, c);
      write_code_to_tile(planes, c, b / grid.blocks_x, b % grid.blocks_x, code);
    }
  }
  return planes;
}

/// Reconstructs every tile as D * coefficients; no clamping.
inline ImagePlanes decode_image(const CoefficientPlanes& planes, const Dictionary& dict) {
  BlockGrid coeffs = split_blocks(planes);
  BlockGrid out(coeffs.blocks_y, coeffs.blocks_x, 3);
  const int n = dict.atom_dim();
  for (int c = 0; c < 3; ++c) {
    const Eigen::MatrixXd& d = dict.channel[c];
    for (int b = 0; b < coeffs.count(); ++b) {
      auto in = coeffs.block(c, b);
      auto dst = out.block(c, b);
      std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
      for (int j = 0; j < kAtoms; ++j) {
        const double v = in[j];
        if (v == 0.0) continue;
        const double* col = d.data() + static_cast<std::size_t>(j) * n;
        for (int i = 0; i < n; ++i) acc[i] += v * col[i];
      }
      for (int i = 0; i < n; ++i) dst[i] = static_cast<float>(acc[i]);
    }
  }
  return merge_blocks(out);
}

// ---------------------------------------------------------------- D1 training

/// Objective values recorded by train_dictionary_channel: `coded[t]` after
/// the t-th sparse coding step, `updated[t]` after the t-th dictionary update.
struct DictionaryTrainTrace {
  std::vector<double> coded;
  std::vector<double> updated;
};

/// Sparse code of one training patch in selection order.
struct PatchCode {
  std::vector<int> support;
  std::vector<double> coef;
};

namespace detail {

inline double patch_error(const Eigen::MatrixXd& D, const Eigen::VectorXd& x, const PatchCode& code) {
  Eigen::VectorXd r = x;
  for (std::size_t t = 0; t < code.support.size(); ++t) r -= code.coef[t] * D.col(code.support[t]);
  return r.squaredNorm();
}

/// Least-squares refit on a fixed support.
inline void refit(const Eigen::MatrixXd& D, const Eigen::VectorXd& x, PatchCode& code) {
  if (code.support.empty()) return;
  Eigen::MatrixXd Ds(D.rows(), static_cast<Eigen::Index>(code.support.size()));
  for (std::size_t t = 0; t < code.support.size(); ++t) Ds.col(static_cast<Eigen::Index>(t)) = D.col(code.support[t]);
  const Eigen::VectorXd a = Ds.colPivHouseholderQr().solve(x);
  for (std::size_t t = 0; t < code.support.size(); ++t) code.coef[t] = a(static_cast<Eigen::Index>(t));
}

}  // namespace detail

/// Least-squares dictionary for fixed codes (method of optimal directions):
/// D = X A^T (A A^T)^-1 restricted to the atoms that are used. Unused atoms
/// come back as zero columns and are listed in `dead`.
inline Eigen::MatrixXd mod_update(const Eigen::MatrixXd& X, std::span<const PatchCode> codes, int atoms,
                                  std::vector<int>* dead = nullptr) {
  Eigen::MatrixXd AAt = Eigen::MatrixXd::Zero(atoms, atoms);
  Eigen::MatrixXd XAt = Eigen::MatrixXd::Zero(X.rows(), atoms);
  for (Eigen::Index p = 0; p < X.cols(); ++p) {
    const auto& c = codes[static_cast<std::size_t>(p)];
    for (std::size_t a = 0; a < c.support.size(); ++a) {
      XAt.col(c.support[a]) += c.coef[a] * X.col(p);
      for (std::size_t b = 0; b < c.support.size(); ++b) AAt(c.support[a], c.support[b]) += c.coef[a] * c.coef[b];
    }
  }
  std::vector<int> used;
  for (int j = 0; j < atoms; ++j) {
    if (AAt(j, j) > 0.0) {
      used.push_back(j);
    } else if (dead) {
      dead->push_back(j);
    }
  }
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(X.rows(), atoms);
  if (used.empty()) return D;
  const auto u = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixXd G(u, u), B(X.rows(), u);
  for (Eigen::Index a = 0; a < u; ++a) {
    B.col(a) = XAt.col(used[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < u; ++b)
      G(a, b) = AAt(used[static_cast<std::size_t>(a)], used[static_cast<std::size_t>(b)]);
  }
  // G D_U^T = B^T
  const Eigen::MatrixXd DuT = G.ldlt().solve(B.transpose());
  for (Eigen::Index a = 0; a < u; ++a) D.col(used[static_cast<std::size_t>(a)]) = DuT.row(a).transpose();
  return D;
}

/// Seeded pick of `atoms` non-zero training patches, column-normalized.
/// Near-parallel picks (|cos| > 0.99) are deferred and only used when the
/// data runs out of distinct directions.
inline Eigen::MatrixXd initial_dictionary(const Eigen::MatrixXd& patches, int atoms, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(patches.cols()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  rng.shuffle(idx);
  Eigen::MatrixXd D(patches.rows(), atoms);
  int filled = 0;
  std::vector<Eigen::Index> deferred;
  for (Eigen::Index i : idx) {
    if (filled == atoms) break;
    const double nrm = patches.col(i).norm();
    if (nrm <= 1e-12) continue;
    const Eigen::VectorXd a = patches.col(i) / nrm;
    if (filled > 0 && (D.leftCols(filled).transpose() * a).cwiseAbs().maxCoeff() > 0.99) {
      deferred.push_back(i);
      continue;
    }
    D.col(filled++) = a;
  }
  for (std::size_t t = 0; filled < atoms && t < deferred.size(); ++t)
    D.col(filled++) = patches.col(deferred[t]).normalized();
  if (filled < atoms) throw DataError("not enough non-zero patches to initialize the dictionary");
  return D;
}

/// Method of optimal directions with OMP coding. Coding keeps a patch's
/// previous code when the fresh OMP code is worse, so the objective is
/// non-increasing across iterations.
inline Eigen::MatrixXd train_dictionary_channel(const Eigen::MatrixXd& X, int atoms, int iterations,
                                                int k_train, std::uint64_t seed,
                                                DictionaryTrainTrace* trace = nullptr) {
  const Eigen::Index P = X.cols();
  if (P < 10 * static_cast<Eigen::Index>(atoms))
    throw DataError("dictionary training needs at least 10x more patches than atoms (" +
                    std::to_string(P) + " < " + std::to_string(10 * atoms) + ")");
  if (k_train < 1 || k_train > atoms) throw PreconditionError("k_train must lie in [1, atoms]");
  Eigen::MatrixXd D = initial_dictionary(X, atoms, seed);
  if (iterations <= 0) return D;

  std::vector<PatchCode> codes(static_cast<std::size_t>(P));
  std::vector<double> err(static_cast<std::size_t>(P), 0.0);
  bool have_codes = false;

  for (int it = 0; it < iterations; ++it) {
    // (a) sparse coding
    const OmpCoder coder(D);
    double obj = 0.0;
    for (Eigen::Index p = 0; p < P; ++p) {
      const Eigen::VectorXd x = X.col(p);
      const auto path = coder.path(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), k_train);
      PatchCode fresh;
      fresh.support.assign(path.order.begin(), path.order.end());
      fresh.coef = path.coefficients(path.length());
      const double e_new = detail::patch_error(D, x, fresh);
      auto& cur = codes[static_cast<std::size_t>(p)];
      const double e_old = have_codes ? detail::patch_error(D, x, cur) : e_new;
      if (!have_codes || e_new <= e_old) {
        cur = std::move(fresh);
        err[static_cast<std::size_t>(p)] = e_new;
      } else {
        err[static_cast<std::size_t>(p)] = e_old;
      }
      obj += err[static_cast<std::size_t>(p)];
    }
    have_codes = true;
    if (trace) trace->coded.push_back(obj);

    // (b) dictionary update on the fixed supports
    std::vector<int> dead;
    const Eigen::MatrixXd Dmod = mod_update(X, codes, atoms, &dead);
    if (Dmod.allFinite()) {
      const Eigen::MatrixXd Dold = D;
      for (int j = 0; j < atoms; ++j) {
        const double nrm = Dmod.col(j).norm();
        if (nrm > 1e-12) D.col(j) = Dmod.col(j) / nrm;
      }
      // Keep the update only when it does not increase the fixed-support objective.
      double before = 0.0, after = 0.0;
      std::vector<PatchCode> refit_codes = codes;
      for (Eigen::Index p = 0; p < P; ++p) {
        const Eigen::VectorXd x = X.col(p);
        auto& c = refit_codes[static_cast<std::size_t>(p)];
        detail::refit(D, x, c);
        after += detail::patch_error(D, x, c);
        before += err[static_cast<std::size_t>(p)];
      }
      if (after <= before) {
        codes = std::move(refit_codes);
      } else {
        D = Dold;
      }
    }
    // Residuals for the current codes; dead atoms become the worst-represented patches.
    Eigen::MatrixXd R = X;
    double obj_upd = 0.0;
    for (Eigen::Index p = 0; p < P; ++p) {
      const auto& c = codes[static_cast<std::size_t>(p)];
      for (std::size_t t = 0; t < c.support.size(); ++t) R.col(p) -= c.coef[t] * D.col(c.support[t]);
      err[static_cast<std::size_t>(p)] = R.col(p).squaredNorm();
      obj_upd += err[static_cast<std::size_t>(p)];
    }
    std::vector<double> work = err;
    for (int j : dead) {
      const auto worst = static_cast<Eigen::Index>(std::max_element(work.begin(), work.end()) - work.begin());
      const Eigen::VectorXd r = R.col(worst);
      const double nrm = r.norm();
      if (nrm <= 1e-12) break;
      D.col(j) = r / nrm;
      const Eigen::VectorXd d = D.col(j);
      for (Eigen::Index p = 0; p < P; ++p) {
        const double proj = R.col(p).dot(d);
        work[static_cast<std::size_t>(p)] = std::min(work[static_cast<std::size_t>(p)],
                                                     R.col(p).squaredNorm() - proj * proj);
      }
      work[static_cast<std::size_t>(worst)] = 0.0;
    }
    if (trace) trace->updated.push_back(obj_upd);
  }
  return D;
}

/// Per-channel training patches (256 x P matrices) from 16x16 windows taken
/// every `stride` pixels.
inline std::array<Eigen::MatrixXd, 3> collect_patches(std::span<const RgbImage> images, int stride) {
  std::array<std::vector<double>, 3> buf;
  Eigen::Index count = 0;
  for (const auto& img : images) {
    const ImagePlanes p = to_planes(img);
    for (int y = 0; y + kBlockSize <= p.height; y += stride)
      for (int x = 0; x + kBlockSize <= p.width; x += stride) {
        for (int c = 0; c < 3; ++c)
          for (int dy = 0; dy < kBlockSize; ++dy)
            for (int dx = 0; dx < kBlockSize; ++dx) buf[c].push_back(p.at(c, y + dy, x + dx));
        ++count;
      }
  }
  std::array<Eigen::MatrixXd, 3> out;
  for (int c = 0; c < 3; ++c)
    out[c] = Eigen::Map<Eigen::MatrixXd>(buf[c].data(), kAtomDim, count);
  return out;
}

inline Dictionary train_d1(const std::array<Eigen::MatrixXd, 3>& patches, int atoms, int iterations,
                           int k_train, std::uint64_t seed = 1,
                           std::array<DictionaryTrainTrace, 3>* traces = nullptr) {
  Dictionary d;
  for (int c = 0; c < 3; ++c)
    d.channel[c] = train_dictionary_channel(patches[c], atoms, iterations, k_train,
                                            derive_seed(seed, static_cast<std::uint64_t>(c)),
                                            traces ? &(*traces)[c] : nullptr);
  return d;
}

// ---------------------------------------------------------------- D2

/// Closed-form minimizer of sum ||E_i - D2 a_i||^2 + eps ||D2 - D1||^2, i.e.
/// D2 = (E A^T + eps D1)(A A^T + eps I)^-1 with eps = 1e-6 trace(A A^T) / 256.
inline Eigen::MatrixXd solve_enhanced_dictionary(const Eigen::MatrixXd& EAt, const Eigen::MatrixXd& AAt,
                                                 const Eigen::MatrixXd& d1) {
  const Eigen::Index m = AAt.rows();
  const double eps = 1e-6 * AAt.trace() / static_cast<double>(kAtoms);
  const Eigen::MatrixXd G = AAt + eps * Eigen::MatrixXd::Identity(m, m);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || !(hi / lo <= 1e12))
    throw NumericError("regularized coefficient Gram matrix is ill-conditioned");
  const Eigen::MatrixXd rhs = EAt + eps * d1;
  // D2 G = rhs  <=>  G D2^T = rhs^T (G symmetric).
  return G.llt().solve(rhs.transpose()).transpose();
}

struct ImagePair {
  RgbImage source;
  RgbImage enhanced;
};

inline Dictionary derive_d2(std::span<const ImagePair> pairs, const Dictionary& d1, int k) {
  if (pairs.empty()) throw PreconditionError("derive_d2 needs at least one image pair");
  SparseConfig{k}.validate();
  const int m = d1.atoms(), n = d1.atom_dim();
  std::array<Eigen::MatrixXd, 3> AAt, EAt;
  for (int c = 0; c < 3; ++c) {
    AAt[c] = Eigen::MatrixXd::Zero(m, m);
    EAt[c] = Eigen::MatrixXd::Zero(n, m);
  }
  for (const auto& pr : pairs) {
    if (pr.source.height != pr.enhanced.height || pr.source.width != pr.enhanced.width)
      throw DimError("pair images differ in size");
    const BlockGrid src = split_blocks(to_planes(pr.source));
    const BlockGrid enh = split_blocks(to_planes(pr.enhanced));
    for (int c = 0; c < 3; ++c) {
      const OmpCoder coder(d1.channel[c]);
      for (int b = 0; b < src.count(); ++b) {
        const auto code = coder.encode(to_double(src.block(c, b)), k, c);
        const auto e = enh.block(c, b);
        for (const auto& a : code.entries) {
          for (int i = 0; i < n; ++i) EAt[c](i, a.atom) += e[i] * a.value;
          for (const auto& bb : code.entries) AAt[c](a.atom, bb.atom) += a.value * bb.value;
        }
      }
    }
  }
  Dictionary d2;
  for (int c = 0; c < 3; ++c) d2.channel[c] = solve_enhanced_dictionary(EAt[c], AAt[c], d1.channel[c]);
  return d2;
}

// ---------------------------------------------------------------- evaluation

/// A 16x16 RGB block and its enhanced counterpart, each stored [channel][256]
/// on the [0,1] scale.
struct BlockPair {
  std::vector<double> source;
  std::vector<double> target;
};

inline std::vector<BlockPair> extract_block_pairs(const RgbImage& source, const RgbImage& enhanced) {
  const BlockGrid s = split_blocks(to_planes(source));
  const BlockGrid e = split_blocks(to_planes(enhanced));
  std::vector<BlockPair> out(static_cast<std::size_t>(s.count()));
  for (int b = 0; b < s.count(); ++b)
    for (int c = 0; c < 3; ++c) {
      auto sb = s.block(c, b);
      auto eb = e.block(c, b);
      out[static_cast<std::size_t>(b)].source.insert(out[static_cast<std::size_t>(b)].source.end(), sb.begin(), sb.end());
      out[static_cast<std::size_t>(b)].target.insert(out[static_cast<std::size_t>(b)].target.end(), eb.begin(), eb.end());
    }
  return out;
}

inline constexpr double kMseFloor = 1e-12;

struct DeltaPsnrSample {
  int k = 0;
  double delta_psnr = 0.0;
};

/// For each block: code the source against D1 with a seeded k drawn uniformly
/// from [k_lo, k_hi], then compare D1 and D2 reconstructions to the target.
inline std::vector<DeltaPsnrSample> evaluate_enhanced_dictionary(std::span<const BlockPair> blocks,
                                                                 const Dictionary& d1, const Dictionary& d2,
                                                                 int k_lo = 16, int k_hi = 128,
                                                                 std::uint64_t seed = 2024) {
  Rng rng(seed);
  std::array<OmpCoder, 3> coders{OmpCoder(d1.channel[0]), OmpCoder(d1.channel[1]), OmpCoder(d1.channel[2])};
  const int n = d1.atom_dim();
  std::vector<DeltaPsnrSample> out;
  out.reserve(blocks.size());
  for (const auto& bp : blocks) {
    if (bp.source.size() != static_cast<std::size_t>(3 * n) || bp.target.size() != bp.source.size())
      throw DimError("block pair has the wrong length");
    const int k = static_cast<int>(rng.uniform_int(k_lo, k_hi));
    double se1 = 0.0, se2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      std::span<const double> x(bp.source.data() + static_cast<std::size_t>(c) * n, static_cast<std::size_t>(n));
      const auto code = coders[c].encode(x, k, c);
      const auto r1 = reconstruct_block(code, d1.channel[c]);
      const auto r2 = reconstruct_block(code, d2.channel[c]);
      for (int i = 0; i < n; ++i) {
        const double g = bp.target[static_cast<std::size_t>(c) * n + i];
        se1 += (g - r1[i]) * (g - r1[i]);
        se2 += (g - r2[i]) * (g - r2[i]);
      }
    }
    const double mse1 = std::max(se1 / (3.0 * n), kMseFloor);
    const double mse2 = std::max(se2 / (3.0 * n), kMseFloor);
    out.push_back({k, 10.0 * std::log10(mse1 / mse2)});
  }
  return out;
}

// ---------------------------------------------------------------- visualization

/// 16x16 grid of 16x16 atoms, each min-max normalized on its own; flat atoms
/// render mid-gray.
inline RgbImage dictionary_mosaic(const Eigen::MatrixXd& d) {
  if (d.rows() != kAtomDim || d.cols() != kAtoms) throw DimError("mosaic needs a 256x256 dictionary");
  RgbImage img(kBlockSize * kBlockSize, kBlockSize * kBlockSize);
  for (int j = 0; j < kAtoms; ++j) {
    const double lo = d.col(j).minCoeff(), hi = d.col(j).maxCoeff();
    const int ty = j / kBlockSize, tx = j % kBlockSize;
    for (int i = 0; i < kAtomDim; ++i) {
      const double v = hi > lo ? (d(i, j) - lo) / (hi - lo) : 0.5;
      const auto g = to_u8(v);
      const int y = ty * kBlockSize + i / kBlockSize, x = tx * kBlockSize + i % kBlockSize;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = g;
    }
  }
  return img;
}

/// Writes d1_{r,g,b}.png, d2_{r,g,b}.png and diff_{r,g,b}.png into `dir`.
inline std::vector<std::string> export_dictionary_diff(const Dictionary& d1, const Dictionary& d2,
                                                       const std::string& dir) {
  static constexpr const char* names[3] = {"r", "g", "b"};
  std::vector<std::string> written;
  for (int c = 0; c < 3; ++c) {
    if (d1.channel[c].rows() != d2.channel[c].rows() || d1.channel[c].cols() != d2.channel[c].cols())
      throw DimError("dictionaries differ in shape");
    const std::string base = dir + "/";
    const std::string p1 = base + "d1_" + names[c] + ".png";
    const std::string p2 = base + "d2_" + names[c] + ".png";
    const std::string pd = base + "diff_" + names[c] + ".png";
    save_image(p1, dictionary_mosaic(d1.channel[c]));
    save_image(p2, dictionary_mosaic(d2.channel[c]));
    save_image(pd, dictionary_mosaic(d1.channel[c] - d2.channel[c]));
    written.insert(written.end(), {p1, p2, pd});
  }
  return written;
}

// ---------------------------------------------------------------- file format

inline std::vector<std::uint8_t> serialize_dictionary(const Dictionary& d) {
  ByteWriter w;
  w.text("UWDICT01");
  w.u8(3);
  w.u16(static_cast<std::uint16_t>(d.atom_dim()));
  w.u16(static_cast<std::uint16_t>(d.atoms()));
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index j = 0; j < d.channel[c].cols(); ++j)
      for (Eigen::Index i = 0; i < d.channel[c].rows(); ++i) w.f32(static_cast<float>(d.channel[c](i, j)));
  w.u32(crc32_of(w.buffer()));
  return w.take();
}

inline Dictionary deserialize_dictionary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 17) throw FormatError("dictionary file too short");
  ByteReader r(bytes);
  if (r.text(8) != "UWDICT01") throw FormatError("bad dictionary magic");
  if (r.u8() != 3) throw FormatError("dictionary must have 3 channels");
  const int n = r.u16(), m = r.u16();
  const std::size_t payload = static_cast<std::size_t>(3) * n * m * 4;
  if (bytes.size() != 13 + payload + 4) throw FormatError("dictionary size does not match header");
  const std::uint32_t expect = crc32_of(bytes.first(bytes.size() - 4));
  Dictionary d;
  for (int c = 0; c < 3; ++c) {
    d.channel[c].resize(n, m);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) d.channel[c](i, j) = r.f32();
  }
  if (r.u32() != expect) throw FormatError("dictionary checksum mismatch");
  for (const auto& ch : d.channel)
    if (!ch.allFinite()) throw FormatError("dictionary contains non-finite values");
  return d;
}

inline void save_dictionary(const std::string& path, const Dictionary& d) { write_file(path, serialize_dictionary(d)); }
inline Dictionary load_dictionary(const std::string& path) { return deserialize_dictionary(read_file(path)); }

}  // namespace uwsc
