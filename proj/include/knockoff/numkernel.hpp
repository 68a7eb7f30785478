#pragma once

// Dense linear-algebra kernels shared by the rest of the library. Everything
// here is a pure function of its arguments.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

#include "knockoff/error.hpp"

namespace knockoff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Numerical tolerances. Absolute, on unit-normalized inputs.
struct Tolerances {
  double symmetry = 1e-12;      // relative asymmetry accepted by SymMatrix
  double orthonormal = 1e-10;   // ||Q^T Q - I||_max for OrthoBasis
  double rank = 1e-10;          // relative |R_ii| cutoff for rank decisions
  double psd = 1e-8;            // negative eigenvalue slack for PSD factors
};

inline constexpr Tolerances kDefaultTolerances{};

/// Symmetric real matrix. Construction symmetrizes and rejects inputs that are
/// not symmetric to `symmetry` relative tolerance or carry non-finite entries.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Matrix& m, const Tolerances& tol = kDefaultTolerances) {
    if (m.rows() != m.cols()) {
      throw Error(ErrorCode::InvalidArgument, "SymMatrix requires a square matrix");
    }
    if (!m.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "SymMatrix entries must be finite");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (m.size() > 0 && (m - m.transpose()).cwiseAbs().maxCoeff() > tol.symmetry * scale) {
      throw Error(ErrorCode::InvalidArgument, "SymMatrix input is not symmetric");
    }
    m_ = 0.5 * (m + m.transpose());
  }

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// n x m matrix whose columns are meant to be orthonormal.
struct OrthoBasis {
  Matrix q;

  Index rows() const { return q.rows(); }
  Index cols() const { return q.cols(); }

  double orthonormality_error() const {
    if (q.cols() == 0) return 0.0;
    return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
  }
};

struct ThinSvd {
  OrthoBasis u;
  Vector d;
  OrthoBasis v;
};

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// X^T X, symmetrized.
inline SymMatrix gram(const Matrix& x) {
  if (!x.allFinite()) throw Error(ErrorCode::InvalidArgument, "gram: non-finite entries");
  Matrix g = x.transpose() * x;
  return SymMatrix(0.5 * (g + g.transpose()));
}

inline Vector eigenvalues(const SymMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s.matrix(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::NumericalFailure, "symmetric eigensolver did not converge");
  }
  return es.eigenvalues();
}

inline double min_eig(const SymMatrix& s) {
  if (s.dim() == 0) throw Error(ErrorCode::InvalidArgument, "min_eig of an empty matrix");
  return eigenvalues(s).minCoeff();
}

inline double min_eig(const Matrix& s) { return min_eig(SymMatrix(0.5 * (s + s.transpose()))); }

/// Orthonormal basis of m directions orthogonal to the column space of X.
/// Built from an unpivoted Householder QR of X, so it depends on X alone.
inline OrthoBasis null_complement(const Matrix& x, Index m, const Tolerances& tol = kDefaultTolerances) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (m < 0) throw Error(ErrorCode::InvalidArgument, "null_complement: negative width");
  if (n < p + m) {
    throw Error(ErrorCode::InsufficientRows,
                "null_complement needs n >= p + m (n=" + std::to_string(n) + ", p=" +
                    std::to_string(p) + ", m=" + std::to_string(m) + ")");
  }
  Eigen::HouseholderQR<Matrix> qr(x);
  if (p > 0) {
    const Vector rdiag = qr.matrixQR().diagonal().cwiseAbs();
    const double rmax = rdiag.maxCoeff();
    if (!(rmax > 0.0) || rdiag.minCoeff() <= tol.rank * rmax) {
      throw Error(ErrorCode::RankDeficient, "design matrix is not full column rank");
    }
  }
  OrthoBasis out;
  if (m == 0) {
    out.q = Matrix(n, 0);
    return out;
  }
  Matrix sel = Matrix::Zero(n, m);
  sel.block(p, 0, m, m).setIdentity();
  out.q = qr.householderQ() * sel;
  return out;
}

/// Solve S x = b for symmetric positive definite S.
inline Vector solve_spd(const SymMatrix& s, const Vector& b) {
  if (s.dim() != b.size()) throw Error(ErrorCode::InvalidArgument, "solve_spd: size mismatch");
  Eigen::LLT<Matrix> llt(s.matrix());
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "solve_spd: matrix is not positive definite");
  }
  return llt.solve(b);
}

/// Thin SVD with d nonincreasing. Singular vector signs are fixed so that each
/// column of V has a nonnegative sum (largest-magnitude entry breaks a zero sum).
inline ThinSvd thin_svd(const Matrix& a) {
  if (a.rows() < a.cols()) throw Error(ErrorCode::InvalidArgument, "thin_svd needs rows >= cols");
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw Error(ErrorCode::NumericalFailure, "SVD did not converge");
  ThinSvd out{OrthoBasis{svd.matrixU()}, svd.singularValues(), OrthoBasis{svd.matrixV()}};
  for (Index j = 0; j < out.v.q.cols(); ++j) {
    double sum = out.v.q.col(j).sum();
    if (std::abs(sum) < 1e-12) {
      Index arg = 0;
      out.v.q.col(j).cwiseAbs().maxCoeff(&arg);
      sum = out.v.q(arg, j);
    }
    if (sum < 0.0) {
      out.v.q.col(j) *= -1.0;
      out.u.q.col(j) *= -1.0;
    }
  }
  return out;
}

/// Upper-triangular (up to a symmetric permutation) factor C with C^T C = A for a
/// positive semidefinite A, via pivoted LDL^T. Pivots below -psd*scale are
/// rejected; smaller negative pivots are clipped to zero.
inline Matrix psd_factor(const Matrix& a, const Tolerances& tol = kDefaultTolerances) {
  const Index k = a.rows();
  if (k == 0) return Matrix(0, 0);
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::LDLT<Matrix> ldlt(sym);
  const double scale = std::max(1.0, sym.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success) {
    // LDLT gives up on some exactly singular inputs; use the spectral factor instead.
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::NumericalFailure, "eigendecomposition failed");
    if (es.eigenvalues().minCoeff() < -tol.psd * scale) {
      throw Error(ErrorCode::InfeasibleS, "matrix is not positive semidefinite (eigenvalue " +
                                              std::to_string(es.eigenvalues().minCoeff()) + ")");
    }
    return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  }
  Vector dvec = ldlt.vectorD();
  if (dvec.minCoeff() < -tol.psd * scale) {
    throw Error(ErrorCode::InfeasibleS, "matrix is not positive semidefinite (pivot " +
                                            std::to_string(dvec.minCoeff()) + ")");
  }
  dvec = dvec.cwiseMax(0.0).cwiseSqrt();
  // A = P^T L D L^T P  =>  C = D^{1/2} L^T P
  Matrix lt = ldlt.matrixU();
  Matrix perm = Matrix::Identity(k, k);
  perm = ldlt.transpositionsP() * perm;
  return dvec.asDiagonal() * lt * perm;
}

/// Scales every column to unit Euclidean norm; zero columns are rejected.
inline Matrix normalize_columns(const Matrix& x) {
  Matrix out = x;
  for (Index j = 0; j < x.cols(); ++j) {
    const double nrm = x.col(j).norm();
    if (!(nrm > 0.0)) throw Error(ErrorCode::RankDeficient, "column " + std::to_string(j + 1) + " is zero");
    out.col(j) /= nrm;
  }
  return out;
}

}  // namespace knockoff
