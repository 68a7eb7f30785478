#pragma once

// s-vector builders and knockoff matrix construction.
//
// A knockoff copy X~ of a unit-column design X satisfies
//   X~^T X~ = X^T X,   X^T X~ = X^T X - diag(s),
// and every such copy can be written as X~ = X (I - Sigma^{-1} diag(s)) + U C with
// U an orthonormal complement of span(X) and C^T C = 2 diag(s) - diag(s) Sigma^{-1} diag(s).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "knockoff/numkernel.hpp"

namespace knockoff {

enum class SMethod { Equivariant, Sdp, ModifiedSdp };

constexpr std::string_view to_string(SMethod m) {
  switch (m) {
    case SMethod::Equivariant: return "equi";
    case SMethod::Sdp: return "sdp";
    case SMethod::ModifiedSdp: return "msdp";
  }
  return "?";
}

inline std::optional<SMethod> parse_s_method(std::string_view name) {
  if (name == "equi" || name == "equivariant") return SMethod::Equivariant;
  if (name == "sdp") return SMethod::Sdp;
  if (name == "msdp" || name == "modified-sdp") return SMethod::ModifiedSdp;
  return std::nullopt;
}

struct SVector {
  Vector s;
  SMethod method = SMethod::Equivariant;
  // Set when the barrier solver stalled and s was pulled toward the equivariant point.
  bool backed_off = false;

  Index size() const { return s.size(); }
};

// Below this an entry of s marks a feature that can never be selected.
inline constexpr double kUnselectableS = 1e-10;

namespace detail {

struct BoxSdpResult {
  Vector s;
  bool converged = false;
  int newton_steps = 0;
};

inline bool chol_ok(const Matrix& m, Eigen::LLT<Matrix>& llt) {
  llt.compute(m);
  return llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0.0;
}

// Snap entries that sit within `snap` of a box bound onto the bound. Moving to
// the lower bound only relaxes the PSD constraint; moving to the upper bound is
// kept only if target - diag(s) stays PSD.
inline Vector polish_to_bounds(const Vector& s, const Matrix& target, double lo, double hi, double snap) {
  Vector out = s;
  for (Index i = 0; i < out.size(); ++i) {
    if (out(i) - lo < snap) out(i) = lo;
  }
  Vector up = out;
  bool moved = false;
  for (Index i = 0; i < up.size(); ++i) {
    if (hi - up(i) < snap && up(i) != hi) {
      up(i) = hi;
      moved = true;
    }
  }
  if (moved) {
    Matrix m = target;
    m.diagonal() -= up;
    if (min_eig(m) >= 0.0) out = up;
  }
  return out;
}

// maximize sum(s)  s.t.  diag(s) <= target (PSD order),  lo <= s <= hi.
// Log-barrier Newton on s with backtracking that keeps iterates strictly feasible.
inline BoxSdpResult box_sdp(const Matrix& target, double lo, double hi, double gap = 1e-9,
                            int max_newton = 400) {
  const Index p = target.rows();
  BoxSdpResult res;
  const double lam = min_eig(target);
  const double top = std::min(hi, lam);
  if (top - lo <= 1e-12) {
    // The feasible set is (at most) the single point s = lo.
    res.s = Vector::Constant(p, lo);
    res.converged = true;
    return res;
  }
  Vector s = Vector::Constant(p, lo + 0.5 * (top - lo));

  Eigen::LLT<Matrix> llt;
  auto objective = [&](const Vector& v, double t, double& f) -> bool {
    if ((v.array() <= lo).any() || (v.array() >= hi).any()) return false;
    Matrix m = target;
    m.diagonal() -= v;
    if (!chol_ok(m, llt)) return false;
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    f = -t * v.sum() - logdet - (v.array() - lo).log().sum() - (hi - v.array()).log().sum();
    return std::isfinite(f);
  };

  const double m_barrier = 3.0 * static_cast<double>(p);
  double t = 1.0;
  const Matrix eye = Matrix::Identity(p, p);
  bool stalled = false;
  while (true) {
    for (int it = 0; it < max_newton; ++it) {
      double f0 = 0.0;
      if (!objective(s, t, f0)) {
        stalled = true;
        break;
      }
      const Matrix w = llt.solve(eye);
      const Vector dlo = (s.array() - lo).inverse().matrix();
      const Vector dhi = (hi - s.array()).inverse().matrix();
      const Vector g = Vector::Constant(p, -t) + w.diagonal() - dlo + dhi;
      Matrix h = w.cwiseProduct(w);
      h.diagonal() += (dlo.array().square() + dhi.array().square()).matrix();
      Eigen::LDLT<Matrix> hs(h);
      const Vector step = hs.solve(-g);
      ++res.newton_steps;
      if (!step.allFinite()) {
        stalled = true;
        break;
      }
      const double dec = -g.dot(step);
      if (dec / 2.0 < 1e-12) break;
      double tau = 1.0;
      for (Index i = 0; i < p; ++i) {
        if (step(i) < 0.0) tau = std::min(tau, 0.99 * (s(i) - lo) / -step(i));
        if (step(i) > 0.0) tau = std::min(tau, 0.99 * (hi - s(i)) / step(i));
      }
      double f1 = 0.0;
      while (tau > 1e-16) {
        const Vector cand = s + tau * step;
        if (objective(cand, t, f1) && f1 <= f0 - 0.25 * tau * dec) break;
        tau *= 0.5;
      }
      if (tau <= 1e-16) {
        // No progress possible at this t; treat as centered.
        break;
      }
      s += tau * step;
    }
    if (stalled) break;
    if (m_barrier / t < gap) {
      res.converged = true;
      break;
    }
    t *= 10.0;
  }
  res.s = s;
  return res;
}

inline bool s_feasible(const Matrix& target, const Vector& s) {
  Matrix m = target;
  m.diagonal() -= s;
  return min_eig(m) >= -1e-10;
}

inline SVector finish_sdp(const Matrix& target, double lo, double hi, const Vector& fallback,
                          SMethod method) {
  BoxSdpResult r = box_sdp(target, lo, hi);
  SVector out;
  out.method = method;
  Vector s = r.s;
  if (!r.converged || !s.allFinite() || !s_feasible(target, s)) {
    if (!s.allFinite()) s = fallback;
    // Geometric backoff toward an always-feasible point.
    for (int k = 0; k < 60 && !s_feasible(target, s); ++k) s = 0.5 * (s + fallback);
    if (!s_feasible(target, s)) {
      throw Error(ErrorCode::SdpFailure, "barrier solver failed and backoff did not recover feasibility");
    }
    out.backed_off = true;
  }
  out.s = polish_to_bounds(s, target, lo, hi, 1e-7);
  return out;
}

}  // namespace detail

/// Equicorrelated choice s_i = min(1, 2 lambda_min(Sigma)).
inline SVector s_equivariant(const SymMatrix& sigma) {
  const double lam = min_eig(sigma);
  if (!(lam > 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "s_equivariant: Sigma is not positive definite");
  return SVector{Vector::Constant(sigma.dim(), std::min(1.0, 2.0 * lam)), SMethod::Equivariant, false};
}

/// maximize sum(s) s.t. diag(s) <= 2 Sigma, 0 <= s <= 1.
inline SVector s_sdp(const SymMatrix& sigma) {
  const double lam = min_eig(sigma);
  if (!(lam > 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "s_sdp: Sigma is not positive definite");
  const Vector equi = Vector::Constant(sigma.dim(), std::min(1.0, 2.0 * lam));
  return detail::finish_sdp(2.0 * sigma.matrix(), 0.0, 1.0, equi, SMethod::Sdp);
}

/// minimize sum(1 - s) s.t. diag(s) <= 2 beta Sigma, alpha lambda_min(Sigma) <= s <= 1.
/// Every entry stays at least alpha * lambda_min(Sigma), so no feature is left unselectable.
inline SVector s_modified_sdp(const SymMatrix& sigma, double alpha = 0.5, double beta = 1.0) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1)");
  if (!(beta > 0.0 && beta <= 1.0)) throw Error(ErrorCode::InvalidArgument, "beta must lie in (0, 1]");
  const double lam = min_eig(sigma);
  if (!(lam > 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "s_modified_sdp: Sigma is not positive definite");
  const double lo = alpha * lam;
  if (lo > 1.0) throw Error(ErrorCode::InfeasibleConstraint, "alpha * lambda_min(Sigma) exceeds 1");
  if (lo > 2.0 * beta * lam * (1.0 + 1e-12)) {
    throw Error(ErrorCode::InfeasibleConstraint, "lower bound alpha*lambda_min exceeds 2*beta*lambda_min");
  }
  // Equivariant point of the scaled constraint; always feasible and >= lo.
  const Vector equi = Vector::Constant(sigma.dim(), std::min(1.0, 2.0 * beta * lam));
  return detail::finish_sdp(2.0 * beta * sigma.matrix(), lo, 1.0, equi, SMethod::ModifiedSdp);
}

struct SBuildOptions {
  SMethod method = SMethod::ModifiedSdp;
  double alpha = 0.5;
  double beta = 1.0;
};

inline SVector build_s(const SymMatrix& sigma, const SBuildOptions& opt) {
  switch (opt.method) {
    case SMethod::Equivariant: return s_equivariant(sigma);
    case SMethod::Sdp: return s_sdp(sigma);
    case SMethod::ModifiedSdp: return s_modified_sdp(sigma, opt.alpha, opt.beta);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown s method");
}

/// A design, its knockoff copy, the s-vector and an orthonormal basis of the
/// complement of span([X X~]). Immutable once built; the augmented Gram and the
/// factorization of Sigma - diag(s)/2 are cached for repeated statistic calls.
class KnockoffModel {
 public:
  KnockoffModel(Matrix x, Matrix xt, SVector s, Matrix u)
      : x_(std::move(x)), xt_(std::move(xt)), s_(std::move(s)), u_(std::move(u)) {
    if (x_.rows() != xt_.rows() || x_.cols() != xt_.cols()) {
      throw Error(ErrorCode::InvalidArgument, "X and X~ must have identical shapes");
    }
    if (s_.size() != x_.cols()) throw Error(ErrorCode::InvalidArgument, "s length must equal p");
    if (u_.rows() != x_.rows() && u_.size() != 0) throw Error(ErrorCode::InvalidArgument, "U must have n rows");
    if (u_.size() == 0) u_.resize(x_.rows(), 0);
    refresh();
  }

  Index n() const { return x_.rows(); }
  Index p() const { return x_.cols(); }
  const Matrix& x() const { return x_; }
  const Matrix& xtilde() const { return xt_; }
  const SVector& s() const { return s_; }
  const Vector& s_values() const { return s_.s; }
  const Matrix& u() const { return u_; }
  const Matrix& augmented() const { return aug_; }
  /// [X X~]^T [X X~]
  const Matrix& gram() const { return gram_; }
  const Matrix& sigma() const { return sigma_; }
  /// Cholesky factor of Sigma - diag(s)/2 when it is positive definite.
  const std::optional<Eigen::LLT<Matrix>>& sum_block() const { return sum_block_; }

  /// Copy with columns X_j and X~_j exchanged.
  KnockoffModel swapped(Index j) const {
    Matrix x = x_, xt = xt_;
    x.col(j).swap(xt.col(j));
    return KnockoffModel(std::move(x), std::move(xt), s_, u_);
  }

 private:
  void refresh() {
    const Index n = x_.rows(), p = x_.cols();
    aug_.resize(n, 2 * p);
    aug_ << x_, xt_;
    gram_ = aug_.transpose() * aug_;
    gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
    sigma_ = gram_.topLeftCorner(p, p);
    Matrix sum = sigma_;
    sum.diagonal() -= 0.5 * s_.s;
    Eigen::LLT<Matrix> llt(sum);
    if (llt.info() == Eigen::Success && p > 0 && llt.matrixLLT().diagonal().minCoeff() > 1e-12) {
      sum_block_ = std::move(llt);
    }
  }

  Matrix x_, xt_;
  SVector s_;
  Matrix u_;
  Matrix aug_, gram_, sigma_;
  std::optional<Eigen::LLT<Matrix>> sum_block_;
};

struct GeneralKnockoff {
  Matrix xtilde;
  Matrix u_rest;  // n x (n - 2p), orthogonal to [X X~]
};

/// X~ = X (I - Sigma^{-1} S) + U_1 C_1 for a symmetric p x p matrix S with
/// 2S - S Sigma^{-1} S PSD. Shared by the diagonal and group-block constructions.
inline GeneralKnockoff build_knockoff_general(const Matrix& x, const Matrix& s_mat,
                                              const Tolerances& tol = kDefaultTolerances) {
  const Index n = x.rows(), p = x.cols();
  if (n < 2 * p) {
    throw Error(ErrorCode::InsufficientRows, "knockoff construction needs n >= 2p (n=" + std::to_string(n) +
                                                 ", p=" + std::to_string(p) + ")");
  }
  const OrthoBasis ufull = null_complement(x, n - p, tol);
  const Matrix sigma = gram(x).matrix();
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::RankDeficient, "X^T X is not positive definite");
  const Matrix sinv_s = llt.solve(s_mat);
  Matrix cc = 2.0 * s_mat - s_mat * sinv_s;
  cc = 0.5 * (cc + cc.transpose()).eval();
  const Matrix c1 = psd_factor(cc, tol);
  GeneralKnockoff out;
  out.xtilde = x - x * sinv_s + ufull.q.leftCols(p) * c1;
  out.u_rest = ufull.q.rightCols(n - 2 * p);
  return out;
}

inline KnockoffModel build_knockoff(const Matrix& x, const SVector& s, const Tolerances& tol = kDefaultTolerances) {
  if (s.size() != x.cols()) throw Error(ErrorCode::InvalidArgument, "s length must equal p");
  if ((s.s.array() < -1e-12).any() || (s.s.array() > 1.0 + 1e-12).any()) {
    throw Error(ErrorCode::InfeasibleS, "s entries must lie in [0, 1]");
  }
  SVector clean = s;
  clean.s = s.s.cwiseMax(0.0).cwiseMin(1.0);
  GeneralKnockoff k = build_knockoff_general(x, Matrix(clean.s.asDiagonal()), tol);
  return KnockoffModel(x, std::move(k.xtilde), std::move(clean), std::move(k.u_rest));
}

/// Build s for X with the given options, then the knockoff copy.
inline KnockoffModel make_knockoffs(const Matrix& x, const SBuildOptions& opt = {}) {
  const SymMatrix sigma = gram(x);
  return build_knockoff(x, build_s(sigma, opt));
}

struct KnockoffReport {
  double gram_error = 0.0;        // ||X~^T X~ - X^T X||_max
  double cross_error = 0.0;       // ||X^T X~ - (Sigma - diag(s))||_max
  double complement_error = 0.0;  // ||U^T [X X~]||_max
  double difference_error = 0.0;  // ||(X - X~)^T (X - X~) - 2 diag(s)||_max
  std::vector<Index> unselectable;  // features with s_i below kUnselectableS
  bool pass = false;
};

inline KnockoffReport validate_knockoff(const KnockoffModel& m, double tol = 1e-8) {
  KnockoffReport r;
  const Matrix sigma = m.x().transpose() * m.x();
  r.gram_error = max_abs(m.xtilde().transpose() * m.xtilde() - sigma);
  Matrix target = sigma;
  target.diagonal() -= m.s_values();
  r.cross_error = max_abs(m.x().transpose() * m.xtilde() - target);
  r.complement_error = m.u().cols() == 0 ? 0.0 : max_abs(m.u().transpose() * m.augmented());
  const Matrix diff = m.x() - m.xtilde();
  r.difference_error = max_abs(diff.transpose() * diff - Matrix(2.0 * m.s_values().asDiagonal()));
  for (Index i = 0; i < m.p(); ++i) {
    if (m.s_values()(i) < kUnselectableS) r.unselectable.push_back(i);
  }
  r.pass = r.gram_error < tol && r.cross_error < tol && r.complement_error < tol;
  return r;
}

/// Prototype knockoffs: only the columns U_P get a knockoff copy, U_Q is kept.
struct LocalizedKnockoffModel {
  Matrix u_p;
  Matrix u_q;
  Matrix ut_p;
  Vector s_p;

  Matrix u() const {
    Matrix out(u_p.rows(), u_p.cols() + u_q.cols());
    out << u_p, u_q;
    return out;
  }
  Matrix ut() const {
    Matrix out(u_p.rows(), u_p.cols() + u_q.cols());
    out << ut_p, u_q;
    return out;
  }
};

/// Gram of U_P after projecting out span(U_Q); diag(s_P) must stay below twice this.
inline SymMatrix localized_constraint_gram(const Matrix& u_p, const Matrix& u_q) {
  if (u_q.cols() == 0) return gram(u_p);
  Eigen::LLT<Matrix> llt(u_q.transpose() * u_q);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::RankDeficient, "U_Q is not full column rank");
  const Matrix cross = u_q.transpose() * u_p;
  Matrix g = u_p.transpose() * u_p - cross.transpose() * llt.solve(cross);
  return SymMatrix(0.5 * (g + g.transpose()));
}

inline LocalizedKnockoffModel build_localized_knockoff(const Matrix& u_p, const Matrix& u_q, const Vector& s_p,
                                                       const Tolerances& tol = kDefaultTolerances) {
  const Index n = u_p.rows();
  const Index k = u_p.cols();
  const Index total = k + u_q.cols();
  if (u_q.cols() > 0 && u_q.rows() != n) throw Error(ErrorCode::InvalidArgument, "U_P and U_Q row mismatch");
  if (s_p.size() != k) throw Error(ErrorCode::InvalidArgument, "s_P length must equal the number of prototypes");
  if (n < total + k) {
    throw Error(ErrorCode::InsufficientRows, "localized knockoffs need n >= p + k (n=" + std::to_string(n) +
                                                 ", p=" + std::to_string(total) + ", k=" + std::to_string(k) + ")");
  }
  Matrix u(n, total);
  u << u_p, u_q;
  const Matrix g = 0.5 * (u.transpose() * u + (u.transpose() * u).transpose());
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::RankDeficient, "[U_P U_Q] is not full column rank");
  Matrix ep = Matrix::Zero(total, k);
  ep.topRows(k).setIdentity();
  const Matrix ginv_p = llt.solve(ep);  // columns P of G^{-1}
  const auto sdiag = s_p.asDiagonal();
  Matrix cc = 2.0 * Matrix(sdiag) - sdiag * ginv_p.topRows(k) * sdiag;
  cc = 0.5 * (cc + cc.transpose()).eval();
  const Matrix c = psd_factor(cc, tol);
  const OrthoBasis comp = null_complement(u, k, tol);
  LocalizedKnockoffModel out;
  out.u_p = u_p;
  out.u_q = u_q;
  out.s_p = s_p;
  out.ut_p = u_p - u * ginv_p * sdiag + comp.q * c;
  return out;
}

/// Prototype-level view of a localized construction, usable by every statistic.
/// The complement U is left empty, so noise-scaled statistics are unavailable.
inline KnockoffModel prototype_model(const LocalizedKnockoffModel& loc, SMethod method = SMethod::ModifiedSdp) {
  return KnockoffModel(loc.u_p, loc.ut_p, SVector{loc.s_p, method, false}, Matrix(loc.u_p.rows(), 0));
}

}  // namespace knockoff
