#pragma once

// Knockoff statistics W computed from a model (X, X~) and a response y, and the
// orthogonal-complement noise estimator.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "knockoff/knockoff_core.hpp"

namespace knockoff {

enum class StatKind {
  MarginalCorr,
  LeastSquares,
  HalfLasso,
  WeightedHalfLasso,
  NegHalfLasso,
  LassoPath,
  ForwardSelection,
  Omp,
};

inline constexpr StatKind kAllStatKinds[] = {
    StatKind::MarginalCorr, StatKind::LeastSquares, StatKind::HalfLasso,        StatKind::WeightedHalfLasso,
    StatKind::NegHalfLasso, StatKind::LassoPath,    StatKind::ForwardSelection, StatKind::Omp,
};

constexpr std::string_view to_string(StatKind k) {
  switch (k) {
    case StatKind::MarginalCorr: return "mc";
    case StatKind::LeastSquares: return "ls";
    case StatKind::HalfLasso: return "half-lasso";
    case StatKind::WeightedHalfLasso: return "weighted-half-lasso";
    case StatKind::NegHalfLasso: return "neg-half-lasso";
    case StatKind::LassoPath: return "lasso-path";
    case StatKind::ForwardSelection: return "fs";
    case StatKind::Omp: return "omp";
  }
  return "?";
}

inline std::optional<StatKind> parse_stat_kind(std::string_view s) {
  for (StatKind k : kAllStatKinds) {
    if (s == to_string(k)) return k;
  }
  if (s == "marginal" || s == "marginal-corr") return StatKind::MarginalCorr;
  if (s == "least-squares") return StatKind::LeastSquares;
  if (s == "hl") return StatKind::HalfLasso;
  if (s == "whl") return StatKind::WeightedHalfLasso;
  if (s == "nhl") return StatKind::NegHalfLasso;
  if (s == "lasso") return StatKind::LassoPath;
  if (s == "forward-selection") return StatKind::ForwardSelection;
  return std::nullopt;
}

enum class Combiner { Difference, SignedMax };

constexpr std::string_view to_string(Combiner c) { return c == Combiner::Difference ? "difference" : "signed-max"; }

constexpr Combiner default_combiner(StatKind k) {
  return (k == StatKind::LeastSquares || k == StatKind::MarginalCorr) ? Combiner::Difference : Combiner::SignedMax;
}

struct StatVector {
  Vector w;
  // Per-feature scores of the original and knockoff columns that were combined into w.
  Vector original;
  Vector knockoff;
  StatKind kind = StatKind::LeastSquares;
  Combiner combiner = Combiner::Difference;

  Index size() const { return w.size(); }
};

struct PathConfig {
  int num_lambda = 1000;
  double lambda_min_ratio = 1e-3;
  double tol = 1e-7;
  int max_sweeps = 10000;
};

struct NoiseEstimate {
  double sigma_hat = 0.0;
  Index dof = 0;
};

struct HalfPenalizedSolution {
  Vector beta_hat;
  Vector beta_tilde;
  double lambda = 0.0;
  Vector z;
};

/// Combines per-feature scores a (original) and b (knockoff). Exact ties give 0.
inline Vector combine(const Vector& a, const Vector& b, Combiner c) {
  Vector w(a.size());
  for (Index j = 0; j < a.size(); ++j) {
    const double x = std::abs(a(j)), y = std::abs(b(j));
    if (c == Combiner::Difference) {
      w(j) = x - y;
    } else {
      w(j) = x > y ? x : (x < y ? -y : 0.0);
    }
  }
  return w;
}

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

namespace detail {

inline void check_response(const KnockoffModel& m, const Vector& y) {
  if (y.size() != m.n()) {
    throw Error(ErrorCode::InvalidArgument,
                "response length " + std::to_string(y.size()) + " does not match n = " + std::to_string(m.n()));
  }
  if (!y.allFinite()) throw Error(ErrorCode::InvalidArgument, "response has non-finite entries");
}

inline StatVector make_stat(Vector a, Vector b, StatKind kind, Combiner c) {
  StatVector out;
  out.w = combine(a, b, c);
  out.original = std::move(a);
  out.knockoff = std::move(b);
  out.kind = kind;
  out.combiner = c;
  return out;
}

// beta^ + beta~ and beta^ - beta~ of the least-squares fit on [X X~].
struct LsBlocks {
  Vector sum;
  Vector diff;
};

// With tie_zero_s, a pair with s_j = 0 has X_j = X~_j and takes the
// minimum-norm split beta^_j = beta~_j.
inline LsBlocks ls_blocks(const KnockoffModel& m, const Vector& y, bool tie_zero_s = false) {
  check_response(m, y);
  const Vector& s = m.s_values();
  if (!tie_zero_s && s.size() > 0 && s.minCoeff() <= kUnselectableS) {
    throw Error(ErrorCode::SingularGram, "block S/2 of the augmented Gram is singular (some s_i = 0)");
  }
  if (!m.sum_block()) {
    throw Error(ErrorCode::SingularGram, "block Sigma - S/2 of the augmented Gram is not positive definite");
  }
  LsBlocks b;
  b.sum = m.sum_block()->solve(0.5 * (m.x() + m.xtilde()).transpose() * y);
  b.diff = ((m.x() - m.xtilde()).transpose() * y).cwiseQuotient(s);
  for (Index j = 0; j < s.size(); ++j) {
    if (s(j) <= kUnselectableS) b.diff(j) = 0.0;
  }
  return b;
}

}  // namespace detail

/// Least-squares coefficients (beta^, beta~) of y on [X X~] via the decoupled block form.
inline HalfPenalizedSolution least_squares(const KnockoffModel& m, const Vector& y, bool tie_zero_s = false) {
  const detail::LsBlocks b = detail::ls_blocks(m, y, tie_zero_s);
  return {0.5 * (b.sum + b.diff), 0.5 * (b.sum - b.diff), 0.0, Vector::Ones(m.p())};
}

inline StatVector stat_marginal_corr(const KnockoffModel& m, const Vector& y, Combiner c = Combiner::Difference) {
  detail::check_response(m, y);
  return detail::make_stat(m.x().transpose() * y, m.xtilde().transpose() * y, StatKind::MarginalCorr, c);
}

inline StatVector stat_least_squares(const KnockoffModel& m, const Vector& y, Combiner c = Combiner::Difference,
                                     bool tie_zero_s = false) {
  HalfPenalizedSolution sol = least_squares(m, y, tie_zero_s);
  return detail::make_stat(std::move(sol.beta_hat), std::move(sol.beta_tilde), StatKind::LeastSquares, c);
}

/// argmin 1/2 ||y - X b^ - X~ b~||^2 + lambda ||b^ - b~||_1, in closed form.
inline HalfPenalizedSolution half_lasso(const KnockoffModel& m, const Vector& y, double lambda,
                                        bool tie_zero_s = false) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  const detail::LsBlocks b = detail::ls_blocks(m, y, tie_zero_s);
  const Vector& s = m.s_values();
  Vector d(b.diff.size());
  for (Index j = 0; j < d.size(); ++j) {
    d(j) = s(j) <= kUnselectableS ? 0.0 : soft_threshold(b.diff(j), 2.0 * lambda / s(j));
  }
  return {0.5 * (b.sum + d), 0.5 * (b.sum - d), lambda, Vector::Ones(m.p())};
}

/// Default weights z_j = sqrt(s_j / 2), floored at sqrt(kUnselectableS / 2).
inline Vector default_half_lasso_weights(const KnockoffModel& m) {
  return (0.5 * m.s_values().cwiseMax(kUnselectableS)).cwiseSqrt();
}

/// argmin 1/2 ||y - X Z^{-1} b^ - X~ Z^{-1} b~||^2 + lambda ||b^ - b~||_1.
inline HalfPenalizedSolution weighted_half_lasso(const KnockoffModel& m, const Vector& y, double lambda,
                                                 const Vector& z, bool tie_zero_s = false) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  if (z.size() != m.p()) throw Error(ErrorCode::InvalidWeight, "weight vector length must equal p");
  if (!z.allFinite() || (z.array() <= 0.0).any()) throw Error(ErrorCode::InvalidWeight, "weights must be positive");
  const detail::LsBlocks b = detail::ls_blocks(m, y, tie_zero_s);
  const Vector& s = m.s_values();
  const Vector zs = z.cwiseProduct(b.sum);
  Vector d(b.diff.size());
  for (Index j = 0; j < d.size(); ++j) {
    d(j) = s(j) <= kUnselectableS ? 0.0 : soft_threshold(z(j) * b.diff(j), 2.0 * lambda * z(j) * z(j) / s(j));
  }
  return {0.5 * (zs + d), 0.5 * (zs - d), lambda, z};
}

/// Half-penalized fit with the negative penalty -lambda sum mu_i |b^_i - b~_i|.
inline HalfPenalizedSolution neg_half_lasso(const KnockoffModel& m, const Vector& y, double lambda,
                                            const Vector& mu, bool tie_zero_s = false) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  if (mu.size() != m.p()) throw Error(ErrorCode::InvalidWeight, "mu length must equal p");
  if (!mu.allFinite() || (mu.array() < 0.0).any()) throw Error(ErrorCode::InvalidWeight, "mu must be nonnegative");
  const detail::LsBlocks b = detail::ls_blocks(m, y, tie_zero_s);
  const Vector& s = m.s_values();
  Vector push(b.diff.size());
  for (Index j = 0; j < push.size(); ++j) {
    const double sg = b.diff(j) > 0.0 ? 1.0 : (b.diff(j) < 0.0 ? -1.0 : 0.0);
    push(j) = sg == 0.0 ? 0.0 : lambda * mu(j) / s(j) * sg;
  }
  return {0.5 * (b.sum + b.diff) + push, 0.5 * (b.sum - b.diff) - push, lambda, Vector::Ones(m.p())};
}

/// sigma^ = ||U^T y|| / sqrt(n - 2p).
inline NoiseEstimate estimate_sigma(const KnockoffModel& m, const Vector& y) {
  detail::check_response(m, y);
  if (m.u().cols() == 0) {
    throw Error(ErrorCode::NoComplement, "noise estimate needs n > 2p and a model carrying the complement basis");
  }
  NoiseEstimate e;
  e.dof = m.u().cols();
  e.sigma_hat = (m.u().transpose() * y).norm() / std::sqrt(static_cast<double>(e.dof));
  return e;
}

/// Half lasso with penalty lambda * sigma^.
inline HalfPenalizedSolution half_lasso_sigma_scaled(const KnockoffModel& m, const Vector& y, double lambda = 1.0,
                                                     bool tie_zero_s = false) {
  const NoiseEstimate e = estimate_sigma(m, y);
  return half_lasso(m, y, lambda * e.sigma_hat, tie_zero_s);
}

/// lambda_max * ratio^(k / (K - 1)), k = 0..K-1.
inline Vector lambda_grid(double lambda_max, const PathConfig& cfg) {
  if (cfg.num_lambda < 2) throw Error(ErrorCode::InvalidArgument, "num_lambda must be at least 2");
  if (!(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "lambda_min_ratio must lie in (0, 1)");
  }
  Vector g(cfg.num_lambda);
  const double step = std::log(cfg.lambda_min_ratio) / (cfg.num_lambda - 1);
  for (int k = 0; k < cfg.num_lambda; ++k) g(k) = lambda_max * std::exp(step * k);
  return g;
}

namespace detail {

// Exact minimizer of 1/2 x^T H x - r^T x + lam ||x||_1 over x in R^2.
inline std::pair<double, double> lasso_2d(double h11, double h12, double h22, double r1, double r2, double lam) {
  auto objective = [&](double a, double b) {
    return 0.5 * (h11 * a * a + 2.0 * h12 * a * b + h22 * b * b) - r1 * a - r2 * b + lam * (std::abs(a) + std::abs(b));
  };
  std::pair<double, double> best{0.0, 0.0};
  double best_f = 0.0;
  auto consider = [&](double a, double b) {
    const double f = objective(a, b);
    if (f < best_f) {
      best_f = f;
      best = {a, b};
    }
  };
  consider(soft_threshold(r1, lam) / h11, 0.0);
  consider(0.0, soft_threshold(r2, lam) / h22);
  const double det = h11 * h22 - h12 * h12;
  if (det > 1e-14 * h11 * h22) {
    for (double s1 : {-1.0, 1.0}) {
      for (double s2 : {-1.0, 1.0}) {
        const double u1 = r1 - lam * s1, u2 = r2 - lam * s2;
        const double a = (h22 * u1 - h12 * u2) / det, b = (h11 * u2 - h12 * u1) / det;
        if (a * s1 > 0.0 && b * s2 > 0.0) consider(a, b);
      }
    }
  }
  return best;
}

}  // namespace detail

/// Entry values of the Lasso path: Z_j is the largest grid lambda at which
/// coefficient j is nonzero (0 if it never enters). Works on the Gram matrix G
/// and correlations c = A^T y of any design A. With pair_offset = h > 0 (and
/// q = 2h), coordinates j and j + h are updated jointly, which keeps descent
/// fast when a column and its knockoff nearly coincide.
inline Vector lasso_entry_values(const Matrix& g, const Vector& c, const PathConfig& cfg = {}, Index pair_offset = 0) {
  const Index q = c.size();
  Vector z = Vector::Zero(q);
  if (q == 0) return z;
  if (pair_offset < 0 || (pair_offset > 0 && q != 2 * pair_offset)) {
    throw Error(ErrorCode::InvalidArgument, "pair_offset must be half the number of coordinates");
  }
  const double lmax = c.cwiseAbs().maxCoeff();
  if (!(lmax > 0.0)) return z;
  const Vector grid = lambda_grid(lmax, cfg);
  const Vector diag = g.diagonal();
  if ((diag.array() <= 0.0).any()) throw Error(ErrorCode::SingularGram, "Lasso path needs nonzero columns");
  Vector b = Vector::Zero(q);
  Vector r = c;  // c - G b
  std::vector<char> entered(static_cast<std::size_t>(q), 0);
  Index n_entered = 0;
  const Index h = pair_offset;
  for (int k = 0; k < cfg.num_lambda && n_entered < q; ++k) {
    const double lam = grid(k);
    auto move = [&](Index j, double nb) {
      const double delta = nb - b(j);
      if (delta == 0.0) return 0.0;
      r.noalias() -= delta * g.col(j);
      b(j) = nb;
      return std::abs(delta);
    };
    // Full sweeps alternate with sweeps over the current nonzeros until a full
    // sweep moves no coefficient by more than tol relative to the largest one.
    auto sweep = [&](bool full) {
      double change = 0.0;
      if (h == 0) {
        for (Index j = 0; j < q; ++j) {
          if (!full && b(j) == 0.0) continue;
          change = std::max(change, move(j, soft_threshold(r(j) + diag(j) * b(j), lam) / diag(j)));
        }
        return change;
      }
      for (Index j = 0; j < h; ++j) {
        const Index t = j + h;
        if (!full && b(j) == 0.0 && b(t) == 0.0) continue;
        const double h12 = g(j, t);
        const double r1 = r(j) + diag(j) * b(j) + h12 * b(t);
        const double r2 = r(t) + diag(t) * b(t) + h12 * b(j);
        const auto [a1, a2] = detail::lasso_2d(diag(j), h12, diag(t), r1, r2, lam);
        change = std::max(change, move(j, a1));
        change = std::max(change, move(t, a2));
      }
      return change;
    };
    int sweeps = 0;
    for (;;) {
      if (++sweeps > cfg.max_sweeps) {
        throw Error(ErrorCode::PathFailure, "coordinate descent did not converge at lambda index " + std::to_string(k));
      }
      if (sweep(true) < cfg.tol * std::max(1.0, b.cwiseAbs().maxCoeff())) break;
      while (sweeps < cfg.max_sweeps) {
        ++sweeps;
        if (sweep(false) < cfg.tol * std::max(1.0, b.cwiseAbs().maxCoeff())) break;
      }
    }
    for (Index j = 0; j < q; ++j) {
      if (!entered[j] && b(j) != 0.0) {
        entered[j] = 1;
        z(j) = lam;
        ++n_entered;
      }
    }
  }
  return z;
}

inline StatVector stat_lasso_path(const KnockoffModel& m, const Vector& y, const PathConfig& cfg = {},
                                  Combiner c = Combiner::SignedMax) {
  detail::check_response(m, y);
  const Vector z = lasso_entry_values(m.gram(), m.augmented().transpose() * y, cfg, m.p());
  const Index p = m.p();
  return detail::make_stat(z.head(p), z.tail(p), StatKind::LassoPath, c);
}

/// Forward selection by single-column deflation of the correlations. Stops once
/// every correlation is numerically zero; unentered columns keep Z = 0.
inline Vector forward_selection_entry(const Matrix& g, const Vector& c0) {
  const Index q = c0.size();
  Vector z = Vector::Zero(q);
  Vector c = c0;
  const double c_scale = q > 0 ? c0.cwiseAbs().maxCoeff() : 0.0;
  if (!(c_scale > 0.0)) return z;
  std::vector<char> used(static_cast<std::size_t>(q), 0);
  for (Index step = 1; step <= q; ++step) {
    Index best = -1;
    double best_val = -1.0;
    for (Index j = 0; j < q; ++j) {
      if (!used[j] && std::abs(c(j)) > best_val) {
        best_val = std::abs(c(j));
        best = j;
      }
    }
    if (best < 0 || best_val <= 1e-12 * c_scale) break;
    used[best] = 1;
    z(best) = static_cast<double>(q - step + 1);
    c.noalias() -= (c(best) / g(best, best)) * g.col(best);
  }
  return z;
}

inline StatVector stat_forward_selection(const KnockoffModel& m, const Vector& y, Combiner c = Combiner::SignedMax) {
  detail::check_response(m, y);
  const Vector z = forward_selection_entry(m.gram(), m.augmented().transpose() * y);
  return detail::make_stat(z.head(m.p()), z.tail(m.p()), StatKind::ForwardSelection, c);
}

struct OmpTrace {
  Vector z;                   // entry values, 2p - step + 1
  std::vector<Index> order;   // columns in entry order
  Vector residual;            // final residual
};

/// Orthogonal matching pursuit on the columns of A with a full least-squares refit per step.
inline OmpTrace omp_path(const Matrix& a, const Vector& y, double stop_norm = 1e-10) {
  const Index n = a.rows(), q = a.cols();
  OmpTrace t;
  t.z = Vector::Zero(q);
  t.residual = y;
  std::vector<char> used(static_cast<std::size_t>(q), 0);
  Matrix l = Matrix::Zero(std::min(n, q), std::min(n, q));  // Cholesky factor of G_AA
  Matrix cols(n, 0);
  Vector aty(0);
  for (Index step = 1; step <= q; ++step) {
    if (t.residual.norm() < stop_norm) break;
    const Vector corr = a.transpose() * t.residual;
    Index best = -1;
    double best_val = -1.0;
    for (Index j = 0; j < q; ++j) {
      if (!used[j] && std::abs(corr(j)) > best_val) {
        best_val = std::abs(corr(j));
        best = j;
      }
    }
    if (best_val <= 1e-10 * a.col(best).norm() * y.norm()) break;
    const Index k = static_cast<Index>(t.order.size());
    if (k >= n) throw Error(ErrorCode::SingularGram, "OMP active set exceeds the number of rows");
    const Vector col = a.col(best);
    const Vector g_new = cols.transpose() * col;
    Vector w = g_new;
    if (k > 0) l.topLeftCorner(k, k).triangularView<Eigen::Lower>().solveInPlace(w);
    const double gjj = col.squaredNorm();
    const double d2 = gjj - w.squaredNorm();
    if (!(d2 > 1e-10 * gjj)) {
      used[best] = 1;  // numerically inside the active span: never enters
      continue;
    }
    l.row(k).head(k) = w.transpose();
    l(k, k) = std::sqrt(d2);
    used[best] = 1;
    t.order.push_back(best);
    t.z(best) = static_cast<double>(q - k);
    cols.conservativeResize(n, k + 1);
    cols.col(k) = col;
    aty.conservativeResize(k + 1);
    aty(k) = col.dot(y);
    const auto lk = l.topLeftCorner(k + 1, k + 1).triangularView<Eigen::Lower>();
    Vector coef = lk.solve(aty);
    lk.transpose().solveInPlace(coef);
    t.residual = y - cols * coef;
  }
  return t;
}

inline StatVector stat_omp(const KnockoffModel& m, const Vector& y, Combiner c = Combiner::SignedMax) {
  detail::check_response(m, y);
  const Vector z = omp_path(m.augmented(), y).z;
  return detail::make_stat(z.head(m.p()), z.tail(m.p()), StatKind::Omp, c);
}

struct StatisticOptions {
  StatisticOptions() = default;
  explicit StatisticOptions(StatKind k) : kind(k) {}

  StatKind kind = StatKind::LeastSquares;
  std::optional<Combiner> combiner;  // default per kind
  std::optional<double> lambda;      // 0.5 for the half-penalized fits
  std::optional<Vector> z;           // weighted half lasso; default sqrt(s / 2)
  std::optional<Vector> mu;          // negative half lasso; default s
  bool sigma_scaled = false;         // half lasso with penalty lambda * sigma^ (default lambda 1)
  bool tie_zero_s = false;           // LS family: W_j = 0 for s_j = 0 instead of SingularGram
  PathConfig path;
};

inline StatVector stat_from_solution(HalfPenalizedSolution sol, StatKind kind, Combiner c) {
  return detail::make_stat(sol.beta_hat.cwiseQuotient(sol.z), sol.beta_tilde.cwiseQuotient(sol.z), kind, c);
}

inline StatVector compute_statistic(const KnockoffModel& m, const Vector& y, const StatisticOptions& opt = {}) {
  const Combiner c = opt.combiner.value_or(default_combiner(opt.kind));
  switch (opt.kind) {
    case StatKind::MarginalCorr: return stat_marginal_corr(m, y, c);
    case StatKind::LeastSquares: return stat_least_squares(m, y, c, opt.tie_zero_s);
    case StatKind::HalfLasso:
      if (opt.sigma_scaled) {
        return stat_from_solution(half_lasso_sigma_scaled(m, y, opt.lambda.value_or(1.0), opt.tie_zero_s), opt.kind, c);
      }
      return stat_from_solution(half_lasso(m, y, opt.lambda.value_or(0.5), opt.tie_zero_s), opt.kind, c);
    case StatKind::WeightedHalfLasso:
      return stat_from_solution(weighted_half_lasso(m, y, opt.lambda.value_or(0.5),
                                                    opt.z.value_or(default_half_lasso_weights(m)), opt.tie_zero_s),
                                opt.kind, c);
    case StatKind::NegHalfLasso:
      return stat_from_solution(
          neg_half_lasso(m, y, opt.lambda.value_or(0.5), opt.mu.value_or(m.s_values()), opt.tie_zero_s), opt.kind, c);
    case StatKind::LassoPath: return stat_lasso_path(m, y, opt.path, c);
    case StatKind::ForwardSelection: return stat_forward_selection(m, y, c);
    case StatKind::Omp: return stat_omp(m, y, c);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown statistic");
}

}  // namespace knockoff
