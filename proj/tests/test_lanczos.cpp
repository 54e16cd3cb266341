#include "fixtures.hpp"
#include "glap/lanczos.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace glap;
using namespace glap::testing;

namespace {

LinearOperator from_matrix(const Matrix& a) {
  return [a](const Vector& v) -> Vector { return a * v; };
}

LanczosOptions opts(std::size_t k, std::size_t iters, std::uint64_t seed = 0) {
  LanczosOptions o;
  o.k = k;
  o.iters = iters;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Lanczos, DiagonalSpectrum) {
  const Matrix a = Vector((Vector(3) << 3, 2, 1).finished()).asDiagonal();
  const LowRankEigen e = lanczos_topk(from_matrix(a), 3, opts(2, 3));
  ASSERT_EQ(e.rank(), 2);
  EXPECT_NEAR(e.values[0], 3.0, 1e-10);
  EXPECT_NEAR(e.values[1], 2.0, 1e-10);
  EXPECT_LT(e.residuals.maxCoeff(), 1e-8);
}

TEST(Lanczos, Identity) {
  const LowRankEigen e = lanczos_topk(from_matrix(Matrix::Identity(5, 5)), 5, opts(1, 1));
  ASSERT_EQ(e.rank(), 1);
  EXPECT_NEAR(e.values[0], 1.0, 1e-12);
  EXPECT_NEAR(e.basis.col(0).norm(), 1.0, 1e-12);
}

TEST(Lanczos, RandomPsdAgainstDense) {
  Vector spectrum(200);
  for (int i = 0; i < 200; ++i) spectrum[i] = 100.0 * std::pow(0.93, i);
  const Matrix a = psd_with_spectrum(spectrum, 1);
  const LowRankEigen e = lanczos_topk(from_matrix(a), 200, opts(10, 80, 4));
  ASSERT_EQ(e.rank(), 10);
  for (int i = 0; i < 10; ++i) {
    EXPECT_NEAR(e.values[i], spectrum[i], 1e-8 * spectrum[i]);
    EXPECT_LE(e.values[i], spectrum[i] + e.residuals[i] + 1e-12 * spectrum[0]);
  }
  EXPECT_LT((e.basis.transpose() * e.basis - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-8);
  for (int i = 0; i < 10; ++i) {
    EXPECT_NEAR((a * e.basis.col(i) - e.values[i] * e.basis.col(i)).norm(), e.residuals[i], 1e-8 * spectrum[0]);
  }
  EXPECT_TRUE(std::is_sorted(e.values.data(), e.values.data() + e.rank(), std::greater<>()));
}

TEST(Lanczos, DeterministicPerSeed) {
  const Matrix a = psd_with_spectrum(Vector::LinSpaced(40, 1, 40), 2);
  const LowRankEigen x = lanczos_topk(from_matrix(a), 40, opts(5, 30, 7));
  const LowRankEigen y = lanczos_topk(from_matrix(a), 40, opts(5, 30, 7));
  EXPECT_EQ(x.values, y.values);
  EXPECT_EQ(x.basis, y.basis);
}

TEST(Lanczos, OrthogonalityOverManyIterations) {
  // condition number 1e12, 600 steps
  Vector spectrum(600);
  for (int i = 0; i < 600; ++i) spectrum[i] = std::pow(10.0, 6.0 - 12.0 * i / 599.0);
  const Matrix a = psd_with_spectrum(spectrum, 3);
  LanczosOptions o = opts(600, 600, 1);
  o.tolerance = 1.0;  // keep every Ritz pair so the whole basis is inspected
  const LowRankEigen e = lanczos_topk(from_matrix(a), 600, o);
  ASSERT_GT(e.rank(), 500);
  EXPECT_LT((e.basis.transpose() * e.basis - Matrix::Identity(e.rank(), e.rank())).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Lanczos, BreakdownOnLowRankOperator) {
  Vector spectrum = Vector::Zero(30);
  spectrum.head(3) << 5, 4, 3;
  const Matrix a = psd_with_spectrum(spectrum, 5);
  const LowRankEigen e = lanczos_topk(from_matrix(a), 30, opts(6, 20)).nonzero(1e-10);
  EXPECT_EQ(e.rank(), 3);
  EXPECT_NEAR(e.values[2], 3.0, 1e-10);
  const LowRankEigen raw = lanczos_topk(from_matrix(a), 30, opts(6, 20));
  EXPECT_TRUE(raw.truncated);
}

TEST(Lanczos, RejectsBadSizes) {
  const auto op = from_matrix(Matrix::Identity(4, 4));
  EXPECT_THROW(lanczos_topk(op, 4, opts(3, 2)), DimensionError);
  EXPECT_THROW(lanczos_topk(op, 4, opts(2, 5)), DimensionError);
}

TEST(InvSqrt, ClosedForm) {
  LowRankEigen e;
  e.basis = Matrix::Identity(2, 1);
  e.values = Vector::Constant(1, 3.0);
  e.residuals = Vector::Zero(1);
  const Vector r = inv_sqrt_apply(e, 1.0, (Vector(2) << 2, 2).finished());
  EXPECT_NEAR(r[0], 1.0, 1e-15);
  EXPECT_NEAR(r[1], 2.0, 1e-15);
  LowRankEigen empty;
  empty.basis.resize(3, 0);
  const Vector v = random_vector(3, 0);
  EXPECT_LT((inv_sqrt_apply(empty, 4.0, v) - v / 2).norm(), 1e-15);
  EXPECT_THROW(inv_sqrt_apply(e, 0.0, r), Error);
}

TEST(InvSqrt, FullSpectrumMatchesDense) {
  Vector spectrum = Vector::Zero(50);
  for (int i = 0; i < 20; ++i) spectrum[i] = 1.0 + 3.0 * i;
  const Matrix g = psd_with_spectrum(spectrum, 6);
  const double alpha = 0.5;
  Eigen::SelfAdjointEigenSolver<Matrix> es(g + alpha * Matrix::Identity(50, 50));
  const Matrix inv_sqrt = es.operatorInverseSqrt();
  const LowRankEigen e = lanczos_topk(from_matrix(g), 50, opts(20, 50, 2)).nonzero(1e-10);
  ASSERT_EQ(e.rank(), 20);
  const Matrix solve = (g + alpha * Matrix::Identity(50, 50)).inverse();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Vector v = random_vector(50, s);
    EXPECT_LT((inv_sqrt_apply(e, alpha, v) - inv_sqrt * v).norm(), 1e-8 * v.norm());
    const Vector twice = inv_sqrt_apply(e, alpha, inv_sqrt_apply(e, alpha, v));
    EXPECT_LT((twice - solve * v).norm() / (solve * v).norm(), 1e-6);
  }
}

TEST(Spectrum, CsvLayout) {
  LowRankEigen e;
  e.basis = Matrix::Identity(3, 2);
  e.values = (Vector(2) << 2.5, 0.125).finished();
  e.residuals = (Vector(2) << 1e-12, 0).finished();
  const auto path = std::filesystem::temp_directory_path() / "glap_spectrum_test.csv";
  write_spectrum_csv(path, e);
  std::ifstream in(path);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  EXPECT_EQ(header, "index,lambda,residual");
  EXPECT_EQ(row0.substr(0, 6), "0,2.5,");
  EXPECT_EQ(row1.substr(0, 8), "1,0.125,");
  std::filesystem::remove(path);
}
