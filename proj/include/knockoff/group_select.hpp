#pragma once

// Group-level selection: the PCA prototype filter, the Dai-Barber group knockoff
// filter and the Reid-Tibshirani prototype filter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "knockoff/knockoff_core.hpp"
#include "knockoff/rng.hpp"
#include "knockoff/selection.hpp"
#include "knockoff/statistics.hpp"

namespace knockoff {

/// Partition of {0..p-1} into nonempty groups.
class GroupStructure {
 public:
  GroupStructure() = default;

  GroupStructure(std::vector<std::vector<Index>> groups, Index p) : groups_(std::move(groups)), p_(p) {
    owner_.assign(static_cast<std::size_t>(p), -1);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g].empty()) throw Error(ErrorCode::InvalidArgument, "group " + std::to_string(g + 1) + " is empty");
      for (Index j : groups_[g]) {
        if (j < 0 || j >= p) {
          throw Error(ErrorCode::InvalidArgument, "group index " + std::to_string(j + 1) + " out of range");
        }
        if (owner_[j] >= 0) throw Error(ErrorCode::InvalidArgument, "feature " + std::to_string(j + 1) + " is in two groups");
        owner_[j] = static_cast<Index>(g);
      }
    }
    for (Index j = 0; j < p; ++j) {
      if (owner_[j] < 0) throw Error(ErrorCode::InvalidArgument, "feature " + std::to_string(j + 1) + " is in no group");
    }
  }

  /// Consecutive groups with the given sizes.
  static GroupStructure contiguous(const std::vector<Index>& sizes) {
    std::vector<std::vector<Index>> g;
    Index at = 0;
    for (Index sz : sizes) {
      std::vector<Index> cur(static_cast<std::size_t>(sz));
      std::iota(cur.begin(), cur.end(), at);
      at += sz;
      g.push_back(std::move(cur));
    }
    return GroupStructure(std::move(g), at);
  }

  static GroupStructure singletons(Index p) { return contiguous(std::vector<Index>(static_cast<std::size_t>(p), 1)); }

  Index size() const { return static_cast<Index>(groups_.size()); }
  Index p() const { return p_; }
  const std::vector<Index>& group(Index g) const { return groups_[static_cast<std::size_t>(g)]; }
  const std::vector<std::vector<Index>>& groups() const { return groups_; }
  Index group_of(Index j) const { return owner_[static_cast<std::size_t>(j)]; }

 private:
  std::vector<std::vector<Index>> groups_;
  std::vector<Index> owner_;
  Index p_ = 0;
};

inline Matrix select_columns(const Matrix& x, const std::vector<Index>& cols) {
  Matrix out(x.rows(), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Index>(i)) = x.col(cols[i]);
  return out;
}

struct GroupSvd {
  std::vector<ThinSvd> parts;  // X_Ci = U_i diag(d_i) V_i^T
};

inline GroupSvd pca_reformulate(const Matrix& x, const GroupStructure& g) {
  if (g.p() != x.cols()) throw Error(ErrorCode::InvalidArgument, "group structure does not match the number of columns");
  GroupSvd out;
  for (Index i = 0; i < g.size(); ++i) {
    ThinSvd svd = thin_svd(select_columns(x, g.group(i)));
    const double dmax = svd.d.size() ? svd.d(0) : 0.0;
    if (!(dmax > 0.0) || svd.d(svd.d.size() - 1) <= 1e-10 * dmax) {
      throw Error(ErrorCode::RankDeficientGroup, "group " + std::to_string(i + 1) + " is rank deficient");
    }
    out.parts.push_back(std::move(svd));
  }
  return out;
}

/// alpha_Ci = D_i V_i^T beta_Ci, stacked group by group.
inline std::vector<Vector> group_coordinates(const GroupSvd& svd, const GroupStructure& g, const Vector& beta) {
  std::vector<Vector> out;
  for (Index i = 0; i < g.size(); ++i) {
    Vector b(static_cast<Index>(g.group(i).size()));
    for (std::size_t k = 0; k < g.group(i).size(); ++k) b(static_cast<Index>(k)) = beta(g.group(i)[k]);
    const ThinSvd& s = svd.parts[static_cast<std::size_t>(i)];
    out.push_back(s.d.asDiagonal() * (s.v.q.transpose() * b));
  }
  return out;
}

struct GroupSelectionResult {
  double threshold = std::numeric_limits<double>::infinity();
  std::vector<Index> selected;  // group indices, 0-based
  Vector w_group;
  Offset offset = Offset::KnockoffPlus;
  double q = 0.2;
};

inline GroupSelectionResult threshold_groups(const Vector& w_group, double q, Offset offset) {
  const SelectionResult r = knockoff_threshold(w_group, q, offset);
  return {r.threshold, r.selected, w_group, offset, q};
}

inline EvalReport group_evaluate(const GroupSelectionResult& r, const std::vector<Index>& truth_groups) {
  return evaluate(r.selected, truth_groups);
}

/// Groups whose coefficient block is not identically zero.
inline std::vector<Index> signal_groups(const GroupStructure& g, const Vector& beta) {
  std::vector<Index> out;
  for (Index i = 0; i < g.size(); ++i) {
    for (Index j : g.group(i)) {
      if (beta(j) != 0.0) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

/// Sum of prototype statistics per group.
inline Vector sum_by_group(const Vector& w, const std::vector<Index>& owner, Index k) {
  Vector out = Vector::Zero(k);
  for (std::size_t i = 0; i < owner.size(); ++i) out(owner[i]) += w(static_cast<Index>(i));
  return out;
}

// ---------------------------------------------------------------------------
// PCA prototype filter

struct PcaFilterOptions {
  Index prototypes_per_group = 1;
  StatisticOptions stat{StatKind::LassoPath};
  double q = 0.2;
  Offset offset = Offset::KnockoffPlus;
  double alpha = 0.5;
  double beta = 1.0;
};

/// Everything of the PCA filter that does not depend on y.
struct PcaPrototypeModel {
  GroupSvd svd;
  LocalizedKnockoffModel loc;
  KnockoffModel proto{Matrix(0, 0), Matrix(0, 0), SVector{Vector(0)}, Matrix(0, 0)};
  std::vector<Index> owner;  // group of each prototype column
  Index groups = 0;
  bool equivariant_fallback = false;

  /// ||U_P,i - U~_P,i||^2 for every prototype.
  Vector pair_distances() const { return (loc.u_p - loc.ut_p).colwise().squaredNorm().transpose(); }
};

inline PcaPrototypeModel build_pca_prototypes(const Matrix& x, const GroupStructure& g, const PcaFilterOptions& opt = {}) {
  if (opt.prototypes_per_group < 1) throw Error(ErrorCode::InvalidArgument, "prototypes_per_group must be at least 1");
  PcaPrototypeModel m;
  m.svd = pca_reformulate(x, g);
  m.groups = g.size();
  const Index n = x.rows();
  Index k = 0;
  for (Index i = 0; i < g.size(); ++i) k += std::min<Index>(opt.prototypes_per_group, m.svd.parts[i].u.cols());
  const Index p = x.cols();
  if (n < p + k) {
    throw Error(ErrorCode::InsufficientRows, "PCA prototype filter needs n >= p + k (n=" + std::to_string(n) +
                                                 ", p=" + std::to_string(p) + ", k=" + std::to_string(k) + ")");
  }
  Matrix up(n, k), uq(n, p - k);
  Index ip = 0, iq = 0;
  for (Index i = 0; i < g.size(); ++i) {
    const Matrix& u = m.svd.parts[i].u.q;
    const Index l = std::min<Index>(opt.prototypes_per_group, u.cols());
    for (Index c = 0; c < u.cols(); ++c) {
      if (c < l) {
        up.col(ip++) = u.col(c);
        m.owner.push_back(i);
      } else {
        uq.col(iq++) = u.col(c);
      }
    }
  }
  const SymMatrix cg = localized_constraint_gram(up, uq);
  SVector sp;
  try {
    sp = s_modified_sdp(cg, opt.alpha, opt.beta);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SdpFailure && e.code() != ErrorCode::InfeasibleConstraint) throw;
    sp = s_equivariant(cg);
    m.equivariant_fallback = true;
  }
  m.loc = build_localized_knockoff(up, uq, sp.s);
  m.proto = prototype_model(m.loc, sp.method);
  return m;
}

/// Group statistics on a prototype-level model; W_i sums the statistics of group i's prototypes.
inline GroupSelectionResult select_prototype_groups(const KnockoffModel& proto, const std::vector<Index>& owner,
                                                    Index groups, const Vector& y, const StatisticOptions& stat,
                                                    double q, Offset offset) {
  const StatVector w = compute_statistic(proto, y, stat);
  return threshold_groups(sum_by_group(w.w, owner, groups), q, offset);
}

inline GroupSelectionResult pca_prototype_select(const PcaPrototypeModel& m, const Vector& y,
                                                 const PcaFilterOptions& opt = {}) {
  return select_prototype_groups(m.proto, m.owner, m.groups, y, opt.stat, opt.q, opt.offset);
}

inline GroupSelectionResult pca_prototype_filter(const Matrix& x, const Vector& y, const GroupStructure& g,
                                                 const PcaFilterOptions& opt = {}) {
  return pca_prototype_select(build_pca_prototypes(x, g, opt), y, opt);
}

// ---------------------------------------------------------------------------
// Dai-Barber group knockoffs

struct GroupKnockoffModel {
  Matrix x;
  Matrix xtilde;
  Matrix s_mat;   // block-diagonal S
  double gamma = 0.0;
  Matrix gram;    // [X X~]^T [X X~]
  std::vector<std::vector<Index>> blocks;  // 2k blocks over the augmented columns
  Vector weights;                          // sqrt(|C_i|), repeated for the knockoff blocks
};

/// S_i = gamma Sigma_{G_i G_i}, gamma = min(1, 2 lambda_min(D Sigma D)), D = blockdiag(Sigma_{G_i G_i}^{-1/2}).
inline GroupKnockoffModel build_group_knockoff(const Matrix& x, const GroupStructure& g) {
  if (g.p() != x.cols()) throw Error(ErrorCode::InvalidArgument, "group structure does not match the number of columns");
  const Index n = x.rows(), p = x.cols();
  if (n < 2 * p) {
    throw Error(ErrorCode::InsufficientRows, "group knockoffs need n >= 2p (n=" + std::to_string(n) + ", p=" +
                                                 std::to_string(p) + ")");
  }
  const Matrix sigma = gram(x).matrix();
  Matrix d = Matrix::Zero(p, p);
  Matrix blocks = Matrix::Zero(p, p);
  for (Index i = 0; i < g.size(); ++i) {
    const auto& idx = g.group(i);
    const Index sz = static_cast<Index>(idx.size());
    Matrix sub(sz, sz);
    for (Index a = 0; a < sz; ++a)
      for (Index b = 0; b < sz; ++b) sub(a, b) = sigma(idx[a], idx[b]);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sub);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
      throw Error(ErrorCode::RankDeficientGroup, "group " + std::to_string(i + 1) + " is rank deficient");
    }
    const Matrix isq = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                       es.eigenvectors().transpose();
    for (Index a = 0; a < sz; ++a)
      for (Index b = 0; b < sz; ++b) {
        d(idx[a], idx[b]) = isq(a, b);
        blocks(idx[a], idx[b]) = sub(a, b);
      }
  }
  GroupKnockoffModel m;
  m.gamma = std::min(1.0, 2.0 * min_eig(Matrix(d * sigma * d)));
  if (!(m.gamma > 0.0)) throw Error(ErrorCode::InfeasibleS, "group knockoff scale gamma is not positive");
  m.s_mat = m.gamma * blocks;
  GeneralKnockoff k = build_knockoff_general(x, m.s_mat);
  m.x = x;
  m.xtilde = std::move(k.xtilde);
  Matrix aug(n, 2 * p);
  aug << m.x, m.xtilde;
  m.gram = aug.transpose() * aug;
  m.gram = 0.5 * (m.gram + m.gram.transpose()).eval();
  m.weights.resize(2 * g.size());
  for (Index i = 0; i < g.size(); ++i) {
    m.blocks.push_back(g.group(i));
    m.weights(i) = std::sqrt(static_cast<double>(g.group(i).size()));
  }
  for (Index i = 0; i < g.size(); ++i) {
    std::vector<Index> kb = g.group(i);
    for (Index& j : kb) j += p;
    m.blocks.push_back(std::move(kb));
    m.weights(g.size() + i) = m.weights(i);
  }
  return m;
}

/// Weighted group-Lasso path by block coordinate descent. Z_b is the largest grid
/// lambda at which block b is nonzero.
inline Vector group_lasso_entry_values(const Matrix& gm, const Vector& c, const std::vector<std::vector<Index>>& blocks,
                                       const Vector& weights, const PathConfig& cfg = {}) {
  const Index nb = static_cast<Index>(blocks.size());
  Vector z = Vector::Zero(nb);
  double lmax = 0.0;
  for (Index b = 0; b < nb; ++b) {
    double nrm = 0.0;
    for (Index j : blocks[b]) nrm += c(j) * c(j);
    lmax = std::max(lmax, std::sqrt(nrm) / weights(b));
  }
  if (!(lmax > 0.0)) return z;
  const Vector grid = lambda_grid(lmax, cfg);

  // Per-block Gram, its top eigenvalue and the coefficient block.
  std::vector<Matrix> gbb(static_cast<std::size_t>(nb));
  std::vector<double> lip(static_cast<std::size_t>(nb));
  std::vector<Vector> coef(static_cast<std::size_t>(nb));
  for (Index b = 0; b < nb; ++b) {
    const auto& idx = blocks[b];
    const Index sz = static_cast<Index>(idx.size());
    gbb[b].resize(sz, sz);
    for (Index i = 0; i < sz; ++i)
      for (Index k = 0; k < sz; ++k) gbb[b](i, k) = gm(idx[i], idx[k]);
    lip[b] = Eigen::SelfAdjointEigenSolver<Matrix>(gbb[b], Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    if (!(lip[b] > 0.0)) throw Error(ErrorCode::SingularGram, "group Lasso block has a zero Gram");
    coef[b] = Vector::Zero(sz);
  }
  Vector r = c;  // c - G beta
  std::vector<char> entered(static_cast<std::size_t>(nb), 0);
  Index n_entered = 0;
  for (int k = 0; k < cfg.num_lambda && n_entered < nb; ++k) {
    const double lam = grid(k);
    for (int sweep = 0;; ++sweep) {
      if (sweep >= cfg.max_sweeps) {
        throw Error(ErrorCode::PathFailure, "block coordinate descent did not converge at lambda index " + std::to_string(k));
      }
      double change = 0.0;
      for (Index b = 0; b < nb; ++b) {
        const auto& idx = blocks[b];
        const Index sz = static_cast<Index>(idx.size());
        Vector rb(sz);
        for (Index i = 0; i < sz; ++i) rb(i) = r(idx[i]);
        const Vector rho = rb + gbb[b] * coef[b];  // block correlation with the block removed
        const double t = lam * weights(b);
        Vector nb_coef;
        if (rho.norm() <= t) {
          nb_coef = Vector::Zero(sz);
        } else if (sz == 1) {
          nb_coef = Vector::Constant(1, soft_threshold(rho(0), t) / gbb[b](0, 0));
        } else {
          // prox-gradient on 1/2 v^T G_bb v - rho^T v + t ||v||
          nb_coef = coef[b];
          const double step = 1.0 / lip[b];
          for (int it = 0; it < 10000; ++it) {
            Vector u = nb_coef - step * (gbb[b] * nb_coef - rho);
            const double un = u.norm();
            const Vector next = un > step * t ? Vector((1.0 - step * t / un) * u) : Vector(Vector::Zero(sz));
            const double mv = (next - nb_coef).cwiseAbs().maxCoeff();
            nb_coef = next;
            if (mv < 0.1 * cfg.tol) break;
          }
        }
        const Vector delta = nb_coef - coef[b];
        const double dmax = delta.cwiseAbs().maxCoeff();
        if (dmax > 0.0) {
          for (Index i = 0; i < sz; ++i) r.noalias() -= delta(i) * gm.col(idx[i]);
          coef[b] = nb_coef;
          change = std::max(change, dmax);
        }
      }
      if (change < cfg.tol) break;
    }
    for (Index b = 0; b < nb; ++b) {
      if (!entered[b] && coef[b].cwiseAbs().maxCoeff() > 0.0) {
        entered[b] = 1;
        z(b) = lam;
        ++n_entered;
      }
    }
  }
  return z;
}

struct GroupKnockoffOptions {
  double q = 0.2;
  Offset offset = Offset::KnockoffPlus;
  PathConfig path;
};

inline GroupSelectionResult group_knockoff_select(const GroupKnockoffModel& m, const Vector& y,
                                                  const GroupKnockoffOptions& opt = {}) {
  if (y.size() != m.x.rows()) throw Error(ErrorCode::InvalidArgument, "response length does not match n");
  Matrix aug(m.x.rows(), 2 * m.x.cols());
  aug << m.x, m.xtilde;
  const Vector z = group_lasso_entry_values(m.gram, aug.transpose() * y, m.blocks, m.weights, opt.path);
  const Index k = static_cast<Index>(m.blocks.size()) / 2;
  return threshold_groups(combine(z.head(k), z.tail(k), Combiner::SignedMax), opt.q, opt.offset);
}

inline GroupSelectionResult group_knockoff_filter(const Matrix& x, const Vector& y, const GroupStructure& g,
                                                  const GroupKnockoffOptions& opt = {}) {
  return group_knockoff_select(build_group_knockoff(x, g), y, opt);
}

// ---------------------------------------------------------------------------
// Reid-Tibshirani prototype filter

enum class RtConstruction {
  FullDesign,  // knockoffs of all of X2 (n2 >= 2p), restricted to the prototype columns
  Localized,   // localized knockoffs of the prototype columns within X2 (n2 >= p + k)
};

struct RtOptions {
  double n1_fraction = 1.0 / 3.0;
  std::uint64_t split_seed = 0;
  RtConstruction construction = RtConstruction::FullDesign;
  SBuildOptions s{SMethod::Sdp};
  StatisticOptions stat{StatKind::LassoPath};
  double q = 0.2;
  Offset offset = Offset::KnockoffPlus;
};

/// Row split and the y-independent part of the construction.
struct RtDesign {
  std::vector<Index> rows1, rows2;
  Matrix x1, x2;  // unit-norm columns within each part
  std::optional<KnockoffModel> full;  // FullDesign only
};

inline RtDesign build_rt_design(const Matrix& x, const RtOptions& opt = {}) {
  const Index n = x.rows();
  const auto n1 = static_cast<Index>(std::floor(opt.n1_fraction * static_cast<double>(n)));
  if (n1 < 1 || n1 >= n) throw Error(ErrorCode::InvalidArgument, "row split leaves an empty part");
  RtDesign d;
  CounterRng rng(opt.split_seed, 0, StreamRole::Split);
  const std::vector<Index> perm = rng.permutation<Index>(n);
  d.rows1.assign(perm.begin(), perm.begin() + n1);
  d.rows2.assign(perm.begin() + n1, perm.end());
  std::sort(d.rows1.begin(), d.rows1.end());
  std::sort(d.rows2.begin(), d.rows2.end());
  d.x1 = normalize_columns(x(d.rows1, Eigen::all));
  d.x2 = normalize_columns(x(d.rows2, Eigen::all));
  if (opt.construction == RtConstruction::FullDesign) d.full = make_knockoffs(d.x2, opt.s);
  return d;
}

/// Prototype of each group: the column with the largest |X_j^(1)T y^(1)|, lowest index on ties.
inline std::vector<Index> rt_prototypes(const Matrix& x1, const Vector& y1, const GroupStructure& g) {
  const Vector c = x1.transpose() * y1;
  std::vector<Index> proto;
  for (Index i = 0; i < g.size(); ++i) {
    Index best = g.group(i).front();
    for (Index j : g.group(i)) {
      if (std::abs(c(j)) > std::abs(c(best))) best = j;
    }
    proto.push_back(best);
  }
  return proto;
}

/// Prototype-level knockoff model on X2.
inline KnockoffModel rt_prototype_model(const RtDesign& d, const std::vector<Index>& proto, const RtOptions& opt) {
  const Index k = static_cast<Index>(proto.size());
  if (opt.construction == RtConstruction::FullDesign) {
    const KnockoffModel& f = *d.full;
    Vector s(k);
    for (Index i = 0; i < k; ++i) s(i) = f.s_values()(proto[i]);
    return KnockoffModel(select_columns(f.x(), proto), select_columns(f.xtilde(), proto), SVector{s, f.s().method, false},
                         Matrix(f.n(), 0));
  }
  std::vector<char> is_proto(static_cast<std::size_t>(d.x2.cols()), 0);
  for (Index j : proto) is_proto[j] = 1;
  std::vector<Index> rest;
  for (Index j = 0; j < d.x2.cols(); ++j)
    if (!is_proto[j]) rest.push_back(j);
  const Matrix up = select_columns(d.x2, proto), uq = select_columns(d.x2, rest);
  const SVector sp = build_s(localized_constraint_gram(up, uq), opt.s);
  return prototype_model(build_localized_knockoff(up, uq, sp.s), sp.method);
}

inline GroupSelectionResult rt_select(const RtDesign& d, const Vector& y, const GroupStructure& g,
                                      const RtOptions& opt = {}) {
  if (y.size() != static_cast<Index>(d.rows1.size() + d.rows2.size())) {
    throw Error(ErrorCode::InvalidArgument, "response length does not match n");
  }
  const Vector y1 = y(d.rows1), y2 = y(d.rows2);
  const std::vector<Index> proto = rt_prototypes(d.x1, y1, g);
  const KnockoffModel m = rt_prototype_model(d, proto, opt);
  std::vector<Index> owner(proto.size());
  std::iota(owner.begin(), owner.end(), Index{0});
  return select_prototype_groups(m, owner, g.size(), y2, opt.stat, opt.q, opt.offset);
}

inline GroupSelectionResult reid_tibshirani_filter(const Matrix& x, const Vector& y, const GroupStructure& g,
                                                   const RtOptions& opt = {}) {
  if (g.p() != x.cols()) throw Error(ErrorCode::InvalidArgument, "group structure does not match the number of columns");
  const auto n1 = static_cast<Index>(std::floor(opt.n1_fraction * static_cast<double>(x.rows())));
  const Index n2 = x.rows() - n1;
  const Index need = opt.construction == RtConstruction::FullDesign ? 2 * x.cols() : x.cols() + g.size();
  if (n2 < need) {
    throw Error(ErrorCode::InsufficientRows, "second split has " + std::to_string(n2) + " rows, needs " +
                                                 std::to_string(need));
  }
  return rt_select(build_rt_design(x, opt), y, g, opt);
}

}  // namespace knockoff
