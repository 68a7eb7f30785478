#include <gtest/gtest.h>

#include <cmath>

#include "knockoff/numkernel.hpp"
#include "test_util.hpp"

using namespace knockoff;
using knockoff::testing::random_design;
using knockoff::testing::random_matrix;

TEST(Gram, IdentityAndPerfectCorrelation) {
  EXPECT_LT(max_abs(gram(Matrix::Identity(3, 3)).matrix() - Matrix::Identity(3, 3)), 1e-15);
  Matrix x(3, 2);
  x << 1, 1, 0, 0, 0, 0;
  EXPECT_DOUBLE_EQ(gram(x)(0, 1), 1.0);
}

TEST(Gram, InnerProducts) {
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = 1.0;
  x(0, 1) = 1.0 / std::sqrt(2.0);
  x(1, 1) = 1.0 / std::sqrt(2.0);
  const SymMatrix s = gram(x);
  EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s(1, 1), 1.0, 1e-15);
  EXPECT_NEAR(s(0, 1), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(s(0, 1), s(1, 0));
}

TEST(SymMatrixType, RejectsAsymmetricAndNonFinite) {
  Matrix a(2, 2);
  a << 1, 0.5, 0.4, 1;
  EXPECT_THROW(SymMatrix{a}, Error);
  a << 1, NAN, NAN, 1;
  EXPECT_THROW(SymMatrix{a}, Error);
}

TEST(MinEig, Examples) {
  EXPECT_NEAR(min_eig(SymMatrix(Matrix::Identity(3, 3))), 1.0, 1e-14);
  Matrix r(2, 2);
  r << 1, 0.5, 0.5, 1;
  EXPECT_NEAR(min_eig(SymMatrix(r)), 0.5, 1e-14);
  EXPECT_NEAR(min_eig(SymMatrix(Matrix(Vector::Map(std::vector<double>{3, 1, 2}.data(), 3).asDiagonal()))), 1.0,
              1e-14);
}

TEST(MinEig, RayleighBound) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const SymMatrix s = gram(random_matrix(12, 6, seed));
    const double lo = min_eig(s);
    for (Index i = 0; i < s.dim(); ++i) EXPECT_LE(lo, s(i, i) + 1e-12);
  }
}

TEST(NullComplement, CoordinateSubspace) {
  Matrix x = Matrix::Zero(4, 2);
  x(0, 0) = 1.0;
  x(1, 1) = 1.0;
  const OrthoBasis u = null_complement(x, 2);
  ASSERT_EQ(u.cols(), 2);
  EXPECT_LT(u.q.topRows(2).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(u.orthonormality_error(), 1e-14);
}

TEST(NullComplement, EmptyWidth) {
  const OrthoBasis u = null_complement(random_design(5, 2, 3), 0);
  EXPECT_EQ(u.rows(), 5);
  EXPECT_EQ(u.cols(), 0);
}

TEST(NullComplement, PropertyOrthogonalAndDeterministic) {
  for (std::uint64_t seed = 10; seed < 40; ++seed) {
    const Index n = 20 + static_cast<Index>(seed % 7);
    const Index p = 3 + static_cast<Index>(seed % 5);
    const Matrix x = random_design(n, p, seed);
    const OrthoBasis u = null_complement(x, n - p);
    EXPECT_LT(max_abs(u.q.transpose() * x), 1e-10);
    EXPECT_LT(u.orthonormality_error(), 1e-10);
    const OrthoBasis again = null_complement(x, n - p);
    EXPECT_EQ(max_abs(u.q - again.q), 0.0);
  }
}

TEST(NullComplement, Errors) {
  Matrix x = random_design(6, 3, 1);
  x.col(2) = x.col(1);
  try {
    null_complement(x, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
  try {
    null_complement(random_design(4, 3, 2), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientRows);
  }
}

TEST(SolveSpd, Examples) {
  Vector b(2);
  b << 1, 2;
  EXPECT_LT((solve_spd(SymMatrix(Matrix::Identity(2, 2)), b) - b).norm(), 1e-15);
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 2, 4;
  b << 2, 4;
  EXPECT_LT((solve_spd(SymMatrix(d), b) - Vector::Ones(2)).norm(), 1e-15);
  Matrix s(2, 2);
  s << 2, 1, 1, 2;
  b << 3, 3;
  EXPECT_LT((solve_spd(SymMatrix(s), b) - Vector::Ones(2)).norm(), 1e-14);
}

TEST(SolveSpd, ResidualProperty) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const SymMatrix s = gram(random_matrix(30, 8, seed));
    const Vector b = knockoff::testing::random_vector(8, seed + 100);
    const Vector x = solve_spd(s, b);
    EXPECT_LT((s.matrix() * x - b).norm() / b.norm(), 1e-10);
  }
}

TEST(SolveSpd, NotPositiveDefinite) {
  Matrix s(2, 2);
  s << 1, 2, 2, 1;
  try {
    solve_spd(SymMatrix(s), Vector::Ones(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
  }
}

TEST(ThinSvd, Examples) {
  const ThinSvd a = thin_svd(Matrix::Identity(2, 2));
  EXPECT_NEAR(a.d(0), 1.0, 1e-15);
  EXPECT_NEAR(a.d(1), 1.0, 1e-15);
  Matrix col = Matrix::Zero(3, 1);
  col(0, 0) = 2.0;
  const ThinSvd b = thin_svd(col);
  EXPECT_NEAR(b.d(0), 2.0, 1e-15);
  EXPECT_NEAR(std::abs(b.u.q(0, 0)), 1.0, 1e-15);
}

TEST(ThinSvd, RankOneAnalytic) {
  const Vector u = knockoff::testing::random_vector(7, 5);
  const Vector v = knockoff::testing::random_vector(4, 6);
  const ThinSvd s = thin_svd(u * v.transpose());
  EXPECT_NEAR(s.d(0), u.norm() * v.norm(), 1e-12 * u.norm() * v.norm());
  for (Index i = 1; i < s.d.size(); ++i) EXPECT_LT(s.d(i), 1e-12);
}

TEST(ThinSvd, ReconstructionProperty) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix a = random_matrix(15, 6, seed);
    const ThinSvd s = thin_svd(a);
    const Matrix rec = s.u.q * s.d.asDiagonal() * s.v.q.transpose();
    EXPECT_LT(max_abs(rec - a) / max_abs(a), 1e-9);
    for (Index i = 1; i < s.d.size(); ++i) EXPECT_GE(s.d(i - 1), s.d(i));
    EXPECT_GE(s.d.minCoeff(), 0.0);
  }
}

TEST(PsdFactor, ReproducesSemidefiniteMatrix) {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 0) = 2.0;
  a(2, 2) = 1.0;
  a(0, 2) = a(2, 0) = 0.5;
  const Matrix c = psd_factor(a);
  EXPECT_LT(max_abs(c.transpose() * c - a), 1e-14);
  // rank-deficient PSD input needs pivoting
  const Matrix b = knockoff::testing::random_matrix(6, 3, 21);
  const Matrix low = b * b.transpose();
  const Matrix cl = psd_factor(low);
  EXPECT_LT(max_abs(cl.transpose() * cl - low), 1e-10);
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  EXPECT_THROW(psd_factor(bad), Error);
}
