#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "uwsc/enhance.hpp"
#include "uwsc/sparse.hpp"
#include "uwsc/synthetic.hpp"

using testutil::gaussian_matrix;

namespace {

std::vector<double> as_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// Dense normal-equations least squares on a given support (oracle).
Eigen::VectorXd ls_on_support(const Eigen::MatrixXd& D, const Eigen::VectorXd& x, const std::vector<int>& support) {
  Eigen::MatrixXd Ds(D.rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i) Ds.col(static_cast<Eigen::Index>(i)) = D.col(support[i]);
  return (Ds.transpose() * Ds).ldlt().solve(Ds.transpose() * x);
}

double objective(const Eigen::MatrixXd& E, const Eigen::MatrixXd& D, const Eigen::MatrixXd& A) {
  return (E - D * A).squaredNorm();
}

}  // namespace

// ---------------------------------------------------------------- OMP

TEST(Omp, SingleAtomIdentity) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  const std::vector<double> block = {0, 0, 3, 0};
  const auto code = uwsc::omp_encode(block, I, 1);
  ASSERT_EQ(code.entries.size(), 1u);
  EXPECT_EQ(code.entries[0].atom, 2);
  EXPECT_DOUBLE_EQ(code.entries[0].value, 3.0);
}

TEST(Omp, OrthonormalExactRecovery) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  const std::vector<double> block = {0, 2, 0, 1};  // 2 a1 + 1 a3
  const auto code = uwsc::omp_encode(block, I, 2);
  ASSERT_EQ(code.entries.size(), 2u);
  EXPECT_EQ(code.entries[0], (uwsc::SparseEntry{1, 2.0}));
  EXPECT_EQ(code.entries[1], (uwsc::SparseEntry{3, 1.0}));
  const auto rec = uwsc::reconstruct_block(code, I);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(rec[i], block[i]);
}

TEST(Omp, CoefficientsMatchDenseLeastSquaresOracle) {
  const Eigen::MatrixXd D = testutil::random_unit_dictionary(11, 8, 16);
  uwsc::Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(8);
    for (int i = 0; i < 8; ++i) x(i) = rng.normal();
    const auto code = uwsc::omp_encode(as_vec(x), D, 3);
    ASSERT_EQ(code.entries.size(), 3u);
    std::vector<int> support;
    for (const auto& e : code.entries) support.push_back(e.atom);
    EXPECT_TRUE(std::is_sorted(support.begin(), support.end()));
    EXPECT_EQ(std::adjacent_find(support.begin(), support.end()), support.end());
    const Eigen::VectorXd oracle = ls_on_support(D, x, support);
    for (std::size_t i = 0; i < support.size(); ++i)
      EXPECT_NEAR(code.entries[i].value, oracle(static_cast<Eigen::Index>(i)), 1e-9);
  }
}

TEST(Omp, ResidualNonIncreasing) {
  uwsc::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto D = testutil::random_unit_dictionary(100 + trial, 24, 48);
    Eigen::VectorXd x(24);
    for (int i = 0; i < 24; ++i) x(i) = rng.normal();
    const auto path = uwsc::OmpCoder(D).path(as_vec(x), 20);
    for (std::size_t i = 1; i < path.residual_norms.size(); ++i)
      EXPECT_LE(path.residual_norms[i], path.residual_norms[i - 1] * (1 + 1e-12) + 1e-15);
  }
}

TEST(Omp, PrefixOfPathEqualsShorterRun) {
  const auto D = testutil::random_unit_dictionary(5, 32, 64);
  uwsc::Rng rng(6);
  Eigen::VectorXd x(32);
  for (int i = 0; i < 32; ++i) x(i) = rng.normal();
  const uwsc::OmpCoder coder(D);
  const auto full = coder.path(as_vec(x), 20);
  for (int k : {1, 5, 12, 20}) {
    const auto direct = coder.encode(as_vec(x), k);
    const auto prefix = full.code(k);
    ASSERT_EQ(direct.entries.size(), prefix.entries.size());
    for (std::size_t i = 0; i < direct.entries.size(); ++i) {
      EXPECT_EQ(direct.entries[i].atom, prefix.entries[i].atom);
      EXPECT_NEAR(direct.entries[i].value, prefix.entries[i].value, 1e-12);
    }
  }
}

TEST(Omp, TieBreaksOnLowestIndex) {
  // Atoms 1 and 3 correlate equally with x.
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(4, 4);
  const std::vector<double> block = {0, 1, 0, 1};
  const auto code = uwsc::omp_encode(block, D, 1);
  EXPECT_EQ(code.entries[0].atom, 1);
}

TEST(Omp, StopsEarlyOnExactRepresentation) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(8, 8);
  std::vector<double> block(8, 0.0);
  block[5] = 1.5;
  const auto code = uwsc::omp_encode(block, I, 4);
  EXPECT_EQ(code.entries.size(), 1u);
}

TEST(Omp, Preconditions) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  const std::vector<double> block = {1, 0, 0, 0};
  EXPECT_THROW(uwsc::omp_encode(block, I, 0), uwsc::PreconditionError);
  EXPECT_THROW(uwsc::omp_encode(block, I, 5), uwsc::PreconditionError);
  EXPECT_THROW(uwsc::omp_encode(std::vector<double>(3, 1.0), I, 1), uwsc::DimError);
}

TEST(ReconstructBlock, Basics) {
  const auto D = testutil::random_unit_dictionary(4, 16, 20);
  const auto zero = uwsc::reconstruct_block({}, D);
  EXPECT_TRUE(std::all_of(zero.begin(), zero.end(), [](double v) { return v == 0.0; }));
  const auto atom = uwsc::reconstruct_block({0, {{7, 1.0}}}, D);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(atom[i], D(i, 7));
  EXPECT_THROW(uwsc::reconstruct_block({0, {{20, 1.0}}}, D), uwsc::IndexError);
}

// ---------------------------------------------------------------- image coding

TEST(EncodeImage, ZeroFractionAtK32Is87Point5Percent) {
  const auto dict = testutil::replicate(testutil::random_unit_dictionary(21, 256, 256));
  const auto img = uwsc::to_planes(uwsc::synthetic::underwater_scene(1, 256, 256));
  const auto planes = uwsc::encode_image(img, dict, 32);
  EXPECT_EQ(planes.zero_fraction(), 0.875);
}

TEST(EncodeImage, ZeroFractionIsOneMinusKOver256) {
  const auto dict = testutil::replicate(testutil::random_unit_dictionary(22, 256, 256));
  for (auto [h, w, k] : {std::tuple{16, 16, 1}, {32, 48, 64}, {48, 16, 200}}) {
    uwsc::Rng rng(static_cast<std::uint64_t>(h * w + k));
    uwsc::ImagePlanes img(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    const auto planes = uwsc::encode_image(img, dict, k);
    EXPECT_DOUBLE_EQ(planes.zero_fraction(), 1.0 - k / 256.0) << h << "x" << w << " k=" << k;
  }
}

TEST(EncodeImage, TilesHoldCoefficientsRowMajorByAtom) {
  const Eigen::MatrixXd D = testutil::random_unit_dictionary(23, 256, 256);
  const auto dict = testutil::replicate(D);
  uwsc::Rng rng(1);
  uwsc::ImagePlanes img(16, 32);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const auto planes = uwsc::encode_image(img, dict, 5);
  const auto grid = uwsc::split_blocks(img);
  const auto code = uwsc::omp_encode(uwsc::to_double(grid.block(1, 1)), D, 5);
  for (const auto& e : code.entries)
    EXPECT_EQ(planes.at(1, e.atom / 16, 16 + e.atom % 16), static_cast<float>(e.value));
}

TEST(EncodeImage, FullKOnInvertibleDictionaryRoundTrips) {
  const Eigen::MatrixXd D = testutil::well_conditioned_dictionary(31, 256);
  const auto dict = testutil::replicate(D);
  const auto img = uwsc::to_planes(uwsc::synthetic::underwater_scene(2, 16, 16));
  const auto planes = uwsc::encode_image(img, dict, 256);
  const auto rec = uwsc::decode_image(planes, dict);
  // Dense solve oracle for the coefficients of channel 0.
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXf>(img.plane(0).data(), 256).cast<double>();
  const Eigen::VectorXd alpha = D.partialPivLu().solve(x);
  double max_coef_err = 0.0, max_err = 0.0;
  for (int j = 0; j < 256; ++j) max_coef_err = std::max(max_coef_err, std::abs(planes.at(0, j / 16, j % 16) - alpha(j)));
  for (std::size_t i = 0; i < img.data.size(); ++i) max_err = std::max(max_err, double(std::abs(rec.data[i] - img.data[i])));
  EXPECT_LT(max_coef_err, 1e-5);
  EXPECT_LT(max_err, 1e-5);
  EXPECT_LT(max_err, 1e-6 * 10);
}

TEST(EncodeImage, RejectsKZero) {
  const auto dict = testutil::replicate(testutil::random_unit_dictionary(1, 256, 256));
  EXPECT_THROW(uwsc::encode_image(uwsc::ImagePlanes(16, 16), dict, 0), uwsc::PreconditionError);
  EXPECT_THROW(uwsc::encode_image(uwsc::ImagePlanes(16, 16), dict, 257), uwsc::PreconditionError);
}

TEST(DecodeImage, ZerosAndSingleTile) {
  const Eigen::MatrixXd D = testutil::random_unit_dictionary(8, 256, 256);
  const auto dict = testutil::replicate(D);
  uwsc::CoefficientPlanes planes(32, 32);
  const auto zero = uwsc::decode_image(planes, dict);
  EXPECT_TRUE(std::all_of(zero.data.begin(), zero.data.end(), [](float v) { return v == 0.0f; }));
  planes.at(2, 0, 0) = 1.0f;
  const auto one = uwsc::decode_image(planes, dict);
  for (int i = 0; i < 256; ++i) EXPECT_EQ(one.at(2, i / 16, i % 16), static_cast<float>(D(i, 0)));
}

// ---------------------------------------------------------------- D1 training

TEST(TrainD1, RecoversOrthonormalGenerators) {
  const Eigen::MatrixXd Q = testutil::random_orthonormal(41, 256);
  uwsc::Rng rng(42);
  const int P = 2560 * 2;
  Eigen::MatrixXd X(256, P);
  for (int p = 0; p < P; ++p) {
    const auto j = rng.uniform_int(0, 255);
    double c = rng.normal();
    c += c >= 0 ? 0.5 : -0.5;
    X.col(p) = c * Q.col(j);
  }
  uwsc::DictionaryTrainTrace trace;
  const Eigen::MatrixXd D = uwsc::train_dictionary_channel(X, 256, 12, 1, 7, &trace);
  const Eigen::MatrixXd corr = (Q.transpose() * D).cwiseAbs();
  double worst = 1.0;
  for (int j = 0; j < 256; ++j) worst = std::min(worst, corr.row(j).maxCoeff());
  EXPECT_GT(worst, 0.99);
}

TEST(TrainD1, UpdateSolvesNormalEquations) {
  uwsc::Rng rng(50);
  const int n = 12, m = 10, P = 120;
  const Eigen::MatrixXd X = gaussian_matrix(rng, n, P);
  std::vector<uwsc::PatchCode> codes(P);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, P);
  for (int p = 0; p < P; ++p) {
    for (int t = 0; t < 3; ++t) {
      int j;
      do { j = static_cast<int>(rng.uniform_int(0, m - 1)); } while (A(j, p) != 0.0);
      const double v = rng.normal() + 2.0;
      codes[p].support.push_back(j);
      codes[p].coef.push_back(v);
      A(j, p) = v;
    }
  }
  const Eigen::MatrixXd D = uwsc::mod_update(X, codes, m);
  const Eigen::MatrixXd oracle = (A * A.transpose()).transpose().ldlt().solve(A * X.transpose()).transpose();
  EXPECT_LT((D - oracle).norm(), 1e-9 * oracle.norm());
  EXPECT_NEAR(objective(X, D, A), objective(X, oracle, A), 1e-9 * objective(X, oracle, A));
}

TEST(TrainD1, ObjectiveMonotoneAndZeroIterationsIsInit) {
  std::vector<uwsc::RgbImage> imgs;
  for (int i = 0; i < 2; ++i) imgs.push_back(uwsc::synthetic::natural_scene(static_cast<std::uint64_t>(i), 96, 96));
  const auto patches = uwsc::collect_patches(imgs, 4);
  ASSERT_GE(patches[0].cols(), 640);
  const Eigen::MatrixXd X = patches[1];
  uwsc::DictionaryTrainTrace trace;
  uwsc::train_dictionary_channel(X, 64, 6, 4, 9, &trace);
  ASSERT_EQ(trace.coded.size(), 6u);
  std::vector<double> seq;
  for (std::size_t i = 0; i < trace.coded.size(); ++i) {
    seq.push_back(trace.coded[i]);
    seq.push_back(trace.updated[i]);
  }
  for (std::size_t i = 1; i < seq.size(); ++i) EXPECT_LE(seq[i], seq[i - 1] + 1e-9) << "step " << i;
  EXPECT_LT(seq.back(), seq.front());

  const auto D0 = uwsc::train_dictionary_channel(X, 64, 0, 4, 9);
  EXPECT_EQ(D0, uwsc::initial_dictionary(X, 64, 9));
  for (int j = 0; j < 64; ++j) EXPECT_NEAR(D0.col(j).norm(), 1.0, 1e-12);
}

TEST(TrainD1, InsufficientPatchesIsDataError) {
  uwsc::Rng rng(1);
  EXPECT_THROW(uwsc::train_dictionary_channel(gaussian_matrix(rng, 16, 100), 16, 1, 1, 1), uwsc::DataError);
}

TEST(TrainD1, TrainedAtomsAreUnitNorm) {
  std::vector<uwsc::RgbImage> imgs = {uwsc::synthetic::natural_scene(3, 128, 128)};
  auto patches = uwsc::collect_patches(imgs, 2);
  const auto d = uwsc::train_d1(patches, 256, 2, 4, 5);
  for (const auto& ch : d.channel) {
    ASSERT_TRUE(ch.allFinite());
    for (int j = 0; j < 256; ++j) EXPECT_NEAR(ch.col(j).norm(), 1.0, 1e-6);
  }
}

// ---------------------------------------------------------------- D2

namespace {

// Gradient-descent oracle for min_D ||E - D A||^2.
Eigen::MatrixXd gradient_descent_dictionary(const Eigen::MatrixXd& E, const Eigen::MatrixXd& A, Eigen::MatrixXd D) {
  const Eigen::MatrixXd AAt = A * A.transpose();
  const Eigen::MatrixXd EAt = E * A.transpose();
  const double L = 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(AAt).eigenvalues().maxCoeff();
  for (int it = 0; it < 200000; ++it) {
    const Eigen::MatrixXd grad = 2.0 * (D * AAt - EAt);
    if (grad.norm() < 1e-11) break;
    D -= grad / L;
  }
  return D;
}

struct SmallInstance {
  Eigen::MatrixXd E, A, D1;
};

SmallInstance random_instance(std::uint64_t seed) {
  uwsc::Rng rng(seed);
  SmallInstance s;
  const int n = 8, m = 6, P = 60;
  s.D1 = testutil::random_unit_dictionary(seed + 1000, n, m);
  s.A = gaussian_matrix(rng, m, P);
  s.E = gaussian_matrix(rng, n, P);
  return s;
}

}  // namespace

TEST(DeriveD2, ClosedFormMatchesGradientDescentOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_instance(seed);
    const auto D2 = uwsc::solve_enhanced_dictionary(s.E * s.A.transpose(), s.A * s.A.transpose(), s.D1);
    const auto oracle = gradient_descent_dictionary(s.E, s.A, s.D1);
    EXPECT_LT((D2 - oracle).norm(), 1e-4) << "seed " << seed;
  }
}

TEST(DeriveD2, FirstOrderOptimalityAndPerturbations) {
  const auto s = random_instance(77);
  const auto D2 = uwsc::solve_enhanced_dictionary(s.E * s.A.transpose(), s.A * s.A.transpose(), s.D1);
  auto grad = [&](const Eigen::MatrixXd& D) { return Eigen::MatrixXd(-2.0 * (s.E - D * s.A) * s.A.transpose()); };
  EXPECT_LT(grad(D2).norm(), 1e-6 * grad(s.D1).norm());
  const double f0 = objective(s.E, D2, s.A);
  uwsc::Rng rng(78);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd delta = gaussian_matrix(rng, D2.rows(), D2.cols());
    delta *= 1e-3 / delta.norm();
    EXPECT_GE(objective(s.E, D2 + delta, s.A) - f0, -1e-9);
  }
}

TEST(DeriveD2, IdentityCoefficientSystemCopiesEnhancedBlocks) {
  // D1 = standard basis; each 16x16 block is a single unit pixel, so the
  // k=1 code of block i is e_{atom i}.
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(256, 256);
  const auto d1 = testutil::replicate(I);
  std::vector<uwsc::ImagePair> pairs;
  uwsc::Rng rng(3);
  std::vector<uwsc::RgbImage> enhanced_blocks;
  for (int pi = 0; pi < 4; ++pi) {
    uwsc::RgbImage src(16 * 8, 16 * 8, 0), enh(16 * 8, 16 * 8, 0);
    for (int b = 0; b < 64; ++b) {
      const int atom = pi * 64 + b;
      const int by = b / 8, bx = b % 8;
      for (int c = 0; c < 3; ++c) src.at(by * 16 + atom / 16, bx * 16 + atom % 16, c) = 255;
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          for (int c = 0; c < 3; ++c)
            enh.at(by * 16 + y, bx * 16 + x, c) = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    }
    pairs.push_back({src, enh});
  }
  const auto d2 = uwsc::derive_d2(pairs, d1, 1);
  for (int pi = 0; pi < 4; ++pi) {
    const auto e = uwsc::to_planes(pairs[pi].enhanced);
    for (int b = 0; b < 64; ++b) {
      const int atom = pi * 64 + b;
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 256; ++i)
          EXPECT_NEAR(d2.channel[c](i, atom), e.at(c, (b / 8) * 16 + i / 16, (b % 8) * 16 + i % 16), 1e-5);
    }
  }
}

TEST(DeriveD2, IdentityEnhancementDoesNotWorsenObjective) {
  std::vector<uwsc::RgbImage> nat = {uwsc::synthetic::natural_scene(10, 128, 128)};
  const auto d1 = uwsc::train_d1(uwsc::collect_patches(nat, 2), 256, 1, 4, 3);
  std::vector<uwsc::ImagePair> pairs;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto img = uwsc::synthetic::underwater_scene(20 + i, 64, 64);
    pairs.push_back({img, img});
  }
  const int k = 12;
  const auto d2 = uwsc::derive_d2(pairs, d1, k);
  double f1 = 0.0, f2 = 0.0;
  for (const auto& pr : pairs)
    for (const auto& bp : uwsc::extract_block_pairs(pr.source, pr.enhanced))
      for (int c = 0; c < 3; ++c) {
        std::span<const double> x(bp.source.data() + c * 256, 256);
        const auto code = uwsc::omp_encode(x, d1.channel[c], k);
        const auto r1 = uwsc::reconstruct_block(code, d1.channel[c]);
        const auto r2 = uwsc::reconstruct_block(code, d2.channel[c]);
        for (int i = 0; i < 256; ++i) {
          f1 += (x[i] - r1[i]) * (x[i] - r1[i]);
          f2 += (x[i] - r2[i]) * (x[i] - r2[i]);
        }
      }
  EXPECT_LE(f2, f1);
}

TEST(DeriveD2, DegenerateCoefficientsAreNumericError) {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(4, 4);
  EXPECT_THROW(uwsc::solve_enhanced_dictionary(Eigen::MatrixXd::Zero(8, 4), zero, Eigen::MatrixXd::Zero(8, 4)),
               uwsc::NumericError);
}

// ---------------------------------------------------------------- delta PSNR

TEST(EnhancedDictionaryEval, IdenticalDictionariesGiveZero) {
  const auto d = testutil::replicate(testutil::random_unit_dictionary(5, 256, 256));
  const auto img = uwsc::synthetic::underwater_scene(6, 32, 32);
  const auto blocks = uwsc::extract_block_pairs(img, uwsc::reference_enhance(img));
  for (const auto& s : uwsc::evaluate_enhanced_dictionary(blocks, d, d)) {
    EXPECT_EQ(s.delta_psnr, 0.0);
    EXPECT_GE(s.k, 16);
    EXPECT_LE(s.k, 128);
  }
}

TEST(EnhancedDictionaryEval, SingleBlockInterpolationHitsFloorCap) {
  const auto d1 = testutil::replicate(testutil::random_unit_dictionary(7, 256, 256));
  const auto img = uwsc::synthetic::underwater_scene(8, 16, 16);
  const auto enh = uwsc::reference_enhance(img);
  const int k = 40;
  std::vector<uwsc::ImagePair> pairs = {{img, enh}};
  const auto d2 = uwsc::derive_d2(pairs, d1, k);
  const auto blocks = uwsc::extract_block_pairs(img, enh);
  const auto res = uwsc::evaluate_enhanced_dictionary(blocks, d1, d2, k, k);
  ASSERT_EQ(res.size(), 1u);
  // MSE(G, D2 a) is below the floor, so the ratio is MSE1 / 1e-12.
  double se = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::span<const double> x(blocks[0].source.data() + c * 256, 256);
    const auto r1 = uwsc::reconstruct_block(uwsc::omp_encode(x, d1.channel[c], k), d1.channel[c]);
    for (int i = 0; i < 256; ++i) se += std::pow(blocks[0].target[c * 256 + i] - r1[i], 2);
  }
  const double expected = 10.0 * std::log10((se / 768.0) / uwsc::kMseFloor);
  EXPECT_NEAR(res[0].delta_psnr, expected, 1e-6);
}

// ---------------------------------------------------------------- export & file

TEST(DictionaryExport, MosaicShapeAndMidGrayDifference) {
  const auto d = testutil::replicate(testutil::random_unit_dictionary(9, 256, 256));
  const auto files = uwsc::export_dictionary_diff(d, d, UWSC_TEST_TMP_DIR);
  ASSERT_EQ(files.size(), 9u);
  const auto diff = uwsc::load_image(testutil::tmp_path("diff_g.png"));
  EXPECT_EQ(diff.height, 256);
  EXPECT_EQ(diff.width, 256);
  EXPECT_TRUE(std::all_of(diff.data.begin(), diff.data.end(), [](std::uint8_t v) { return v == 128; }));
}

TEST(DictionaryExport, MosaicGoldenFixture) {
  const auto mosaic = uwsc::dictionary_mosaic(testutil::random_unit_dictionary(1234, 256, 256));
  const std::uint32_t crc = uwsc::crc32_of(mosaic.data);
  EXPECT_EQ(crc, 316825390u) << "frozen mosaic fixture";
}

TEST(DictionaryFile, RoundTripAndCorruption) {
  auto d = testutil::replicate(testutil::random_unit_dictionary(10, 256, 256));
  d.channel[1] *= 0.5;
  const auto bytes = uwsc::serialize_dictionary(d);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "UWDICT01");
  EXPECT_EQ(bytes.size(), 8u + 1 + 2 + 2 + 3 * 256 * 256 * 4 + 4);
  const auto back = uwsc::deserialize_dictionary(bytes);
  for (int c = 0; c < 3; ++c) EXPECT_LT((back.channel[c] - d.channel[c]).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_EQ(uwsc::serialize_dictionary(back), bytes);
  auto bad = bytes;
  bad[100] ^= 0x40;
  EXPECT_THROW(uwsc::deserialize_dictionary(bad), uwsc::FormatError);
  bad = bytes;
  bad.resize(bad.size() - 1);
  EXPECT_THROW(uwsc::deserialize_dictionary(bad), uwsc::FormatError);
}
