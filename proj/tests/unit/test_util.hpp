#pragma once

#include <random>

#include "knockoff/numkernel.hpp"

namespace knockoff::testing {

inline Matrix random_matrix(Index n, Index p, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(n, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) m(i, j) = nd(gen);
  return m;
}

inline Vector random_vector(Index n, std::uint64_t seed) { return random_matrix(n, 1, seed).col(0); }

inline Matrix random_design(Index n, Index p, std::uint64_t seed) {
  return normalize_columns(random_matrix(n, p, seed));
}

// Rows ~ N(0, Sigma) via a Cholesky factor, columns normalized.
inline Matrix correlated_design(const Matrix& sigma, Index n, std::uint64_t seed) {
  Eigen::LLT<Matrix> llt(sigma);
  Matrix z = random_matrix(n, sigma.rows(), seed);
  return normalize_columns(z * Matrix(llt.matrixU()));
}

inline Matrix sigma_ab(double a, double b) {
  Matrix s(3, 3);
  s << 1, b, a, b, 1, a, a, a, 1;
  return s;
}

// A unit-column 3-column design whose Gram equals sigma (first rows from the factor).
inline Matrix design_with_gram(const Matrix& sigma, Index n) {
  Eigen::LLT<Matrix> llt(sigma);
  Matrix x = Matrix::Zero(n, sigma.rows());
  x.topRows(sigma.rows()) = llt.matrixU();
  return x;
}

}  // namespace knockoff::testing
