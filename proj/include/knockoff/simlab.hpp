#pragma once

// Seeded design / signal generators and the Monte Carlo experiment driver.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "knockoff/group_select.hpp"
#include "knockoff/knockoff_core.hpp"
#include "knockoff/rng.hpp"
#include "knockoff/selection.hpp"
#include "knockoff/statistics.hpp"

namespace knockoff {

using Json = nlohmann::json;

enum class DesignKind { TwoBlockSign, FourGroupAlt, GroupEqui, GroupTwoSizes, IidGauss, ExplicitCex };

constexpr std::string_view to_string(DesignKind k) {
  switch (k) {
    case DesignKind::TwoBlockSign: return "two-block-sign";
    case DesignKind::FourGroupAlt: return "four-group-alt";
    case DesignKind::GroupEqui: return "group-equi";
    case DesignKind::GroupTwoSizes: return "group-two-sizes";
    case DesignKind::IidGauss: return "iid-gauss";
    case DesignKind::ExplicitCex: return "explicit-cex";
  }
  return "?";
}

inline DesignKind parse_design_kind(std::string_view s) {
  for (DesignKind k : {DesignKind::TwoBlockSign, DesignKind::FourGroupAlt, DesignKind::GroupEqui,
                       DesignKind::GroupTwoSizes, DesignKind::IidGauss, DesignKind::ExplicitCex}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown design kind '" + std::string(s) + "'");
}

/// Block layout as (count, size) runs, e.g. {{1, 60}, {1, 40}} or {{100, 5}, {20, 25}}.
using BlockRuns = std::vector<std::pair<Index, Index>>;

inline std::vector<Index> expand_runs(const BlockRuns& runs) {
  std::vector<Index> out;
  for (const auto& [count, size] : runs) {
    if (count < 0 || size < 1) throw Error(ErrorCode::InvalidSpec, "block runs need count >= 0 and size >= 1");
    for (Index i = 0; i < count; ++i) out.push_back(size);
  }
  return out;
}

struct DesignSpec {
  DesignKind kind = DesignKind::IidGauss;
  Index n = 0;
  Index p = 0;  // IidGauss only; otherwise implied by the blocks
  // TwoBlockSign / ExplicitCex: {A, B}; FourGroupAlt: {A1, A2, B1, B2}; group kinds: one entry per group.
  BlockRuns blocks;
  double rho = 0.5;   // TwoBlockSign, GroupEqui, ExplicitCex
  double rho1 = 0.3;  // FourGroupAlt
  double rho2 = 0.9;  // FourGroupAlt
  double gamma = 0.0; // between-group factor of the group kinds
  bool orthogonal_groups = false;  // project groups onto mutually orthogonal subspaces (gamma = 0 only)
  std::uint64_t seed = 1;

  std::vector<Index> sizes() const { return expand_runs(blocks); }

  Index dim() const {
    if (kind == DesignKind::IidGauss) return p;
    Index s = 0;
    for (Index b : sizes()) s += b;
    return s;
  }
};

/// Target covariance of the Gaussian kinds.
inline Matrix implied_covariance(const DesignSpec& spec) {
  const std::vector<Index> sz = spec.sizes();
  const Index p = spec.dim();
  Matrix s = Matrix::Identity(p, p);
  std::vector<Index> block(static_cast<std::size_t>(p));
  {
    Index at = 0;
    for (std::size_t b = 0; b < sz.size(); ++b)
      for (Index i = 0; i < sz[b]; ++i) block[at++] = static_cast<Index>(b);
  }
  switch (spec.kind) {
    case DesignKind::TwoBlockSign:
      if (sz.size() != 2) throw Error(ErrorCode::InvalidSpec, "two-block-sign needs blocks {A, B}");
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j)
          if (i != j) s(i, j) = block[i] == block[j] ? spec.rho : -spec.rho;
      break;
    case DesignKind::FourGroupAlt: {
      if (sz.size() != 4) throw Error(ErrorCode::InvalidSpec, "four-group-alt needs blocks {A1, A2, B1, B2}");
      // blocks 0,1 form A; 2,3 form B; blocks 1 and 3 are the strongly correlated cores.
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) {
          if (i == j) continue;
          const bool ai = block[i] < 2, aj = block[j] < 2;
          if (ai != aj) {
            s(i, j) = -spec.rho1;
          } else if (block[i] == block[j] && (block[i] == 1 || block[i] == 3)) {
            s(i, j) = spec.rho2;
          } else {
            s(i, j) = spec.rho1;
          }
        }
      break;
    }
    case DesignKind::GroupEqui:
    case DesignKind::GroupTwoSizes:
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j)
          if (i != j) s(i, j) = block[i] == block[j] ? spec.rho : spec.gamma * spec.rho;
      break;
    case DesignKind::IidGauss: break;
    case DesignKind::ExplicitCex: throw Error(ErrorCode::InvalidSpec, "explicit-cex has no sampling covariance");
  }
  return s;
}

/// X = [v; aI; 0] with a = sqrt(1 - rho), v_i = +-lambda a, lambda = sqrt(rho / (1 - rho)).
inline Matrix explicit_cex_design(const DesignSpec& spec) {
  const std::vector<Index> sz = spec.sizes();
  if (sz.size() != 2) throw Error(ErrorCode::InvalidSpec, "explicit-cex needs blocks {A, B}");
  if (!(spec.rho >= 0.0 && spec.rho < 1.0)) throw Error(ErrorCode::InvalidSpec, "explicit-cex needs 0 <= rho < 1");
  const Index p = sz[0] + sz[1];
  const Index n = spec.n > 0 ? spec.n : p + 1;
  if (n < p + 1) throw Error(ErrorCode::InvalidSpec, "explicit-cex needs n >= p + 1");
  const double a = std::sqrt(1.0 - spec.rho);
  const double lam = std::sqrt(spec.rho / (1.0 - spec.rho));
  Matrix x = Matrix::Zero(n, p);
  for (Index i = 0; i < p; ++i) {
    x(0, i) = (i < sz[0] ? 1.0 : -1.0) * lam * a;
    x(1 + i, i) = a;
  }
  return x;
}

struct DesignDraw {
  Matrix x;
  int redraws = 0;
};

namespace detail {

inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t v : parts) h = splitmix64(h ^ splitmix64(v));
  return h;
}

inline Matrix standard_normal(CounterRng& rng, Index n, Index p) {
  Matrix z(n, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) z(i, j) = rng.normal();
  return z;
}

inline void orthogonalize_groups(Matrix& x, const std::vector<Index>& sizes) {
  Matrix basis(x.rows(), 0);
  Index at = 0;
  for (Index sz : sizes) {
    auto blk = x.middleCols(at, sz);
    if (basis.cols() > 0) blk -= basis * (basis.transpose() * blk);
    Eigen::HouseholderQR<Matrix> qr(blk);
    const Matrix q = qr.householderQ() * Matrix::Identity(x.rows(), sz);
    basis.conservativeResize(Eigen::NoChange, basis.cols() + sz);
    basis.rightCols(sz) = q;
    at += sz;
  }
}

}  // namespace detail

/// Draws a design with unit-norm columns. Gaussian kinds are redrawn (up to 100
/// times) when the sample Gram has min eigenvalue below 1e-10.
inline DesignDraw gen_design(const DesignSpec& spec, std::uint64_t stream = 0) {
  DesignDraw out;
  if (spec.kind == DesignKind::ExplicitCex) {
    out.x = normalize_columns(explicit_cex_design(spec));
    return out;
  }
  const Index p = spec.dim();
  if (p < 1 || spec.n < 1) throw Error(ErrorCode::InvalidSpec, "design needs n >= 1 and p >= 1");
  if (spec.orthogonal_groups && spec.gamma != 0.0) {
    throw Error(ErrorCode::InvalidSpec, "orthogonal groups require gamma = 0");
  }
  const Matrix sigma = implied_covariance(spec);
  if (!(min_eig(sigma) > 0.0)) {
    throw Error(ErrorCode::InvalidSpec, std::string(to_string(spec.kind)) + ": implied covariance is not positive definite");
  }
  Eigen::LLT<Matrix> llt(sigma);
  const Matrix lt = llt.matrixU();
  for (int attempt = 0; attempt < 100; ++attempt) {
    CounterRng rng(spec.seed, detail::stream_key({stream, static_cast<std::uint64_t>(attempt)}), StreamRole::Design);
    Matrix x = detail::standard_normal(rng, spec.n, p);
    if (spec.kind != DesignKind::IidGauss) x = x * lt;
    if (spec.orthogonal_groups) detail::orthogonalize_groups(x, spec.sizes());
    bool ok = true;
    for (Index j = 0; j < p && ok; ++j) ok = x.col(j).norm() > 0.0;
    if (ok) {
      x = normalize_columns(x);
      ok = spec.n >= p && min_eig(gram(x)) >= 1e-10;
    }
    if (ok) {
      out.x = std::move(x);
      out.redraws = attempt;
      return out;
    }
  }
  throw Error(ErrorCode::InvalidSpec, "could not draw a full-rank design in 100 attempts");
}

enum class SignalKind { OverS, FixedAmplitude, PlusMinus };

constexpr std::string_view to_string(SignalKind k) {
  switch (k) {
    case SignalKind::OverS: return "over-s";
    case SignalKind::FixedAmplitude: return "fixed";
    case SignalKind::PlusMinus: return "plus-minus";
  }
  return "?";
}

inline SignalKind parse_signal_kind(std::string_view s) {
  for (SignalKind k : {SignalKind::OverS, SignalKind::FixedAmplitude, SignalKind::PlusMinus}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown signal kind '" + std::string(s) + "'");
}

struct SignalSpec {
  SignalKind kind = SignalKind::FixedAmplitude;
  double amplitude = 1.0;
  std::vector<Index> support;  // 0-based
  std::vector<double> scale;   // per support entry; empty means all 1
  bool drop_zero_s = false;    // OverS: s_j = 0 gives beta_j = 0 (a null) instead of ZeroSAtSignal
  std::uint64_t seed = 1;
};

struct Signal {
  Vector beta;
  std::vector<Index> truth;  // sorted
};

/// OverS: beta_j = scale_j M / s_j; FixedAmplitude: scale_j M; PlusMinus: +-scale_j M with fair signs.
inline Signal gen_signal(const SignalSpec& spec, const SVector& s, std::uint64_t stream = 0) {
  const Index p = s.size();
  if (!spec.scale.empty() && spec.scale.size() != spec.support.size()) {
    throw Error(ErrorCode::InvalidSpec, "signal scale must match the support size");
  }
  Signal out;
  out.beta = Vector::Zero(p);
  CounterRng rng(spec.seed, stream, StreamRole::Sign);
  for (std::size_t i = 0; i < spec.support.size(); ++i) {
    const Index j = spec.support[i];
    if (j < 0 || j >= p) throw Error(ErrorCode::InvalidSpec, "signal index " + std::to_string(j + 1) + " out of range");
    const double sc = spec.scale.empty() ? 1.0 : spec.scale[i];
    double b = sc * spec.amplitude;
    if (spec.kind == SignalKind::OverS) {
      if (s.s(j) <= kUnselectableS) {
        if (spec.drop_zero_s) continue;
        throw Error(ErrorCode::ZeroSAtSignal, "s is zero at signal index " + std::to_string(j + 1));
      }
      b /= s.s(j);
    } else if (spec.kind == SignalKind::PlusMinus) {
      if (rng.next() >> 63) b = -b;
    }
    out.beta(j) = b;
    out.truth.push_back(j);
  }
  std::sort(out.truth.begin(), out.truth.end());
  out.truth.erase(std::unique(out.truth.begin(), out.truth.end()), out.truth.end());
  return out;
}

/// `count` distinct entries of `pool`, uniformly at random, returned sorted.
inline std::vector<Index> random_subset(CounterRng& rng, std::vector<Index> pool, Index count) {
  if (count < 0 || count > static_cast<Index>(pool.size())) {
    throw Error(ErrorCode::InvalidSpec, "cannot draw " + std::to_string(count) + " of " + std::to_string(pool.size()));
  }
  for (Index i = 0; i < count; ++i) {
    const auto j = static_cast<Index>(i + rng.below(static_cast<std::uint64_t>(pool.size() - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be written
/// to per-index slots by fn; the call order across workers is unspecified.
inline void parallel_for(Index n, int threads, const std::function<void(Index)>& fn) {
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int nt = static_cast<int>(std::min<Index>(n, threads > 0 ? threads : hw));
  if (nt <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const Index i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          next.store(n);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Experiments

enum class SupportPattern {
  PerBlock,             // fraction `sparsity` of every design block
  Random,               // `count` (or sparsity * p) indices over all features
  FirstInGroups,        // first `per_group` features of the first `groups` groups
  FirstOfRandomGroups,  // first feature of `group_counts[c]` random groups of size class c
};

inline std::string_view to_string(SupportPattern s) {
  switch (s) {
    case SupportPattern::PerBlock: return "per-block";
    case SupportPattern::Random: return "random";
    case SupportPattern::FirstInGroups: return "first-in-groups";
    case SupportPattern::FirstOfRandomGroups: return "first-of-random-groups";
  }
  return "?";
}

inline SupportPattern parse_support_pattern(std::string_view s) {
  for (SupportPattern k : {SupportPattern::PerBlock, SupportPattern::Random, SupportPattern::FirstInGroups,
                           SupportPattern::FirstOfRandomGroups}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown support pattern '" + std::string(s) + "'");
}

struct SignalConfig {
  SignalKind kind = SignalKind::PlusMinus;
  double amplitude = 3.5;
  SupportPattern pattern = SupportPattern::Random;
  double sparsity = 0.2;
  Index count = 0;  // Random: overrides sparsity when > 0
  std::vector<double> block_scale;  // PerBlock: per design block multiplier
  Index groups = 5;
  Index per_group = 1;
  std::vector<Index> group_counts;  // FirstOfRandomGroups, one per run of the design blocks
  bool drop_zero_s = false;  // OverS: s_j = 0 makes j a null and ties its LS-family W_j at 0
};

struct ExperimentConfig {
  std::string preset;
  std::string scale = "desk";
  std::uint64_t seed = 1;
  int trials = 100;
  int designs = 5;
  double q = 0.2;
  double sigma = 1.0;
  std::vector<std::string> methods;
  std::vector<std::string> offsets{"knockoff+"};
  std::string sweep = "M";
  std::vector<double> values;
  double n_factor = 3.0;  // n = n_factor * p when positive, else design.n
  DesignSpec design;
  SignalConfig signal;
  SBuildOptions s{SMethod::ModifiedSdp, 0.5, 0.75};  // also defines beta = M / s for over-s signals
  std::map<std::string, SBuildOptions> method_s;      // per-statistic override of s
  PathConfig path;
  double rt_n1_fraction = 1.0 / 3.0;
  Index prototypes_per_group = 1;
};

inline Json s_to_json(const SBuildOptions& s) {
  return Json{{"method", std::string(to_string(s.method))}, {"alpha", s.alpha}, {"beta", s.beta}};
}

inline SBuildOptions s_from_json(const Json& j) {
  const auto m = parse_s_method(j.at("method").get<std::string>());
  if (!m) throw Error(ErrorCode::InvalidSpec, "unknown s method");
  SBuildOptions o{*m, 0.5, 1.0};
  if (j.contains("alpha")) o.alpha = j.at("alpha").get<double>();
  if (j.contains("beta")) o.beta = j.at("beta").get<double>();
  return o;
}

inline Json to_json(const ExperimentConfig& c) {
  Json blocks = Json::array();
  Json method_s = Json::object();
  for (const auto& [m, so] : c.method_s) method_s[m] = s_to_json(so);
  for (const auto& [count, size] : c.design.blocks) blocks.push_back({count, size});
  return Json{
      {"preset", c.preset},
      {"scale", c.scale},
      {"seed", c.seed},
      {"trials", c.trials},
      {"designs", c.designs},
      {"q", c.q},
      {"sigma", c.sigma},
      {"methods", c.methods},
      {"offsets", c.offsets},
      {"sweep", c.sweep},
      {"values", c.values},
      {"n_factor", c.n_factor},
      {"design",
       {{"kind", std::string(to_string(c.design.kind))},
        {"n", c.design.n},
        {"p", c.design.p},
        {"blocks", blocks},
        {"rho", c.design.rho},
        {"rho1", c.design.rho1},
        {"rho2", c.design.rho2},
        {"gamma", c.design.gamma},
        {"orthogonal_groups", c.design.orthogonal_groups}}},
      {"signal",
       {{"kind", std::string(to_string(c.signal.kind))},
        {"amplitude", c.signal.amplitude},
        {"pattern", std::string(to_string(c.signal.pattern))},
        {"sparsity", c.signal.sparsity},
        {"count", c.signal.count},
        {"block_scale", c.signal.block_scale},
        {"groups", c.signal.groups},
        {"per_group", c.signal.per_group},
        {"group_counts", c.signal.group_counts},
        {"drop_zero_s", c.signal.drop_zero_s}}},
      {"s", s_to_json(c.s)},
      {"method_s", method_s},
      {"path", {{"num_lambda", c.path.num_lambda}, {"lambda_min_ratio", c.path.lambda_min_ratio}}},
      {"rt_n1_fraction", c.rt_n1_fraction},
      {"prototypes_per_group", c.prototypes_per_group},
  };
}

inline ExperimentConfig config_from_json(const Json& j) {
  try {
    ExperimentConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.scale = j.at("scale").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.trials = j.at("trials").get<int>();
    c.designs = j.at("designs").get<int>();
    c.q = j.at("q").get<double>();
    c.sigma = j.at("sigma").get<double>();
    c.methods = j.at("methods").get<std::vector<std::string>>();
    c.offsets = j.at("offsets").get<std::vector<std::string>>();
    c.sweep = j.at("sweep").get<std::string>();
    c.values = j.at("values").get<std::vector<double>>();
    c.n_factor = j.at("n_factor").get<double>();
    const Json& d = j.at("design");
    c.design.kind = parse_design_kind(d.at("kind").get<std::string>());
    c.design.n = d.at("n").get<Index>();
    c.design.p = d.at("p").get<Index>();
    c.design.blocks.clear();
    for (const Json& b : d.at("blocks")) c.design.blocks.emplace_back(b.at(0).get<Index>(), b.at(1).get<Index>());
    c.design.rho = d.at("rho").get<double>();
    c.design.rho1 = d.at("rho1").get<double>();
    c.design.rho2 = d.at("rho2").get<double>();
    c.design.gamma = d.at("gamma").get<double>();
    c.design.orthogonal_groups = d.at("orthogonal_groups").get<bool>();
    const Json& s = j.at("signal");
    c.signal.kind = parse_signal_kind(s.at("kind").get<std::string>());
    c.signal.amplitude = s.at("amplitude").get<double>();
    c.signal.pattern = parse_support_pattern(s.at("pattern").get<std::string>());
    c.signal.sparsity = s.at("sparsity").get<double>();
    c.signal.count = s.at("count").get<Index>();
    c.signal.block_scale = s.at("block_scale").get<std::vector<double>>();
    c.signal.groups = s.at("groups").get<Index>();
    c.signal.per_group = s.at("per_group").get<Index>();
    c.signal.group_counts = s.at("group_counts").get<std::vector<Index>>();
    c.signal.drop_zero_s = s.value("drop_zero_s", false);
    c.s = s_from_json(j.at("s"));
    c.method_s.clear();
    if (j.contains("method_s")) {
      for (const auto& [m, so] : j.at("method_s").items()) {
        if (!so.is_null()) c.method_s[m] = s_from_json(so);
      }
    }
    c.path.num_lambda = j.at("path").at("num_lambda").get<int>();
    c.path.lambda_min_ratio = j.at("path").at("lambda_min_ratio").get<double>();
    c.rt_n1_fraction = j.at("rt_n1_fraction").get<double>();
    c.prototypes_per_group = j.at("prototypes_per_group").get<Index>();
    if (c.trials < 1 || c.designs < 1) throw Error(ErrorCode::InvalidSpec, "trials and designs must be positive");
    if (!(c.q > 0.0 && c.q <= 1.0)) throw Error(ErrorCode::InvalidSpec, "q must lie in (0, 1]");
    return c;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("bad experiment config: ") + e.what());
  }
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table1",    "null",          "altsign",    "pca_vs_rt",
                                              "group_compare", "group_sizes", "fdr_iid"};
  return names;
}

/// Preset defaults at "desk" (reduced) or "paper" scale.
inline std::optional<ExperimentConfig> preset_config(const std::string& name, const std::string& scale = "desk") {
  if (scale != "desk" && scale != "paper") throw Error(ErrorCode::InvalidSpec, "scale must be desk or paper");
  const bool paper = scale == "paper";
  ExperimentConfig c;
  c.preset = name;
  c.scale = scale;
  if (name == "table1" || name == "null") {
    c.design.kind = DesignKind::TwoBlockSign;
    c.design.blocks = paper ? BlockRuns{{1, 600}, {1, 400}} : BlockRuns{{1, 60}, {1, 40}};
    c.design.rho = 0.5;
    c.signal.kind = SignalKind::OverS;
    c.signal.pattern = SupportPattern::PerBlock;
    c.signal.sparsity = 0.2;
    c.signal.block_scale = {0.9, 1.0};
    c.methods = {"ls", "mc"};
    c.offsets = {"knockoff", "knockoff+"};
    // With only 12 + 8 signals the block sums behind the sign pattern need a
    // well-concentrated sample Gram; n = 3p lets 1/s_i outliers flip them.
    c.n_factor = 10.0;
    c.trials = paper ? 200 : 100;
    c.designs = paper ? 10 : 5;
    if (name == "table1") {
      c.values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    } else {
      c.sweep = "none";
      c.values = {0};
      c.signal.amplitude = 0.0;
      c.signal.sparsity = 0.0;
    }
    return c;
  }
  if (name == "altsign") {
    c.design.kind = DesignKind::FourGroupAlt;
    const Index a1 = paper ? 200 : 40;
    c.design.blocks = {{1, a1}, {1, 16}, {1, a1}, {1, 8}};
    c.design.rho1 = 0.3;
    c.design.rho2 = 0.9;
    c.signal.kind = SignalKind::OverS;
    c.signal.amplitude = 6.0;
    c.signal.pattern = SupportPattern::Random;
    c.signal.sparsity = 0.2;
    c.methods = {"ls", "weighted-half-lasso", "lasso-path", "fs", "omp"};
    c.sweep = "k";
    if (paper) {
      c.values = {20, 40, 60, 80, 100, 120, 140, 160, 180, 200};
    } else {
      c.values = {4, 8, 16};
    }
    c.trials = paper ? 200 : 200;
    c.designs = paper ? 10 : 10;
    return c;
  }
  if (name == "pca_vs_rt") {
    c.design.kind = DesignKind::GroupEqui;
    c.design.blocks = {{10, 10}};
    c.design.rho = 0.5;
    c.design.gamma = 0.0;
    c.design.orthogonal_groups = true;
    c.n_factor = 4.0;
    c.signal.kind = SignalKind::FixedAmplitude;
    c.signal.pattern = SupportPattern::FirstInGroups;
    c.signal.groups = 5;
    c.signal.per_group = 1;
    c.signal.amplitude = 5.0;
    c.methods = {"pca", "reid-tibshirani"};
    c.s = {SMethod::Sdp, 0.5, 1.0};
    c.values = paper ? std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9} : std::vector<double>{1, 3, 5, 7, 9};
    c.trials = paper ? 5000 : 100;
    c.designs = paper ? 20 : 5;
    return c;
  }
  if (name == "group_compare" || name == "group_sizes") {
    c.design.kind = name == "group_compare" ? DesignKind::GroupEqui : DesignKind::GroupTwoSizes;
    c.design.gamma = 0.0;
    c.design.rho = 0.5;
    c.signal.kind = SignalKind::PlusMinus;
    c.signal.amplitude = 3.5;
    c.signal.pattern = SupportPattern::FirstOfRandomGroups;
    c.s = {SMethod::Sdp, 0.5, 1.0};
    c.trials = 100;
    c.designs = paper ? 10 : 5;
    if (name == "group_compare") {
      c.design.blocks = paper ? BlockRuns{{200, 5}} : BlockRuns{{40, 5}};
      c.signal.group_counts = {20};
      c.methods = {"pca", "group-knockoff", "reid-tibshirani"};
      c.sweep = "rho";
      c.values = paper ? std::vector<double>{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}
                       : std::vector<double>{0.5, 0.9};
    } else {
      c.design.blocks = paper ? BlockRuns{{100, 5}, {20, 25}} : BlockRuns{{20, 5}, {4, 25}};
      c.signal.group_counts = {4, 1};
      c.methods = {"pca", "group-knockoff"};
      c.sweep = "k1";
      c.values = paper ? std::vector<double>{4, 8, 12, 16, 20, 24, 28, 32, 36, 40}
                       : std::vector<double>{4, 8, 12, 16};
    }
    return c;
  }
  if (name == "fdr_iid") {
    c.design.kind = DesignKind::IidGauss;
    c.design.p = paper ? 1000 : 100;
    c.signal.kind = SignalKind::PlusMinus;
    c.signal.amplitude = 3.5;
    c.signal.pattern = SupportPattern::Random;
    c.signal.count = paper ? 200 : 20;
    c.methods = {"mc", "ls", "half-lasso", "weighted-half-lasso", "neg-half-lasso", "lasso-path", "fs", "omp"};
    c.sweep = "none";
    c.values = {3.5};
    c.trials = 200;
    c.designs = 10;
    return c;
  }
  return std::nullopt;
}

/// Resolves a preset and applies a JSON merge patch of overrides on top of its defaults.
inline ExperimentConfig resolve_config(const std::string& preset, const std::string& scale, const Json& overrides) {
  auto base = preset_config(preset, scale);
  if (!base) throw Error(ErrorCode::InvalidSpec, "unknown preset '" + preset + "'");
  Json j = to_json(*base);
  if (!overrides.is_null()) {
    if (!overrides.is_object()) throw Error(ErrorCode::InvalidSpec, "overrides must be a JSON object");
    j.merge_patch(overrides);
  }
  j["preset"] = preset;
  j["scale"] = scale;
  return config_from_json(j);
}

struct ResultRow {
  std::string param;
  double value = 0.0;
  std::string method;
  std::string offset;
  FdrSummary summary;
  double wall_seconds = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  int redraws = 0;
};

namespace detail {

inline Offset parse_offset(const std::string& s) {
  if (s == "knockoff") return Offset::Knockoff;
  if (s == "knockoff+") return Offset::KnockoffPlus;
  throw Error(ErrorCode::InvalidSpec, "unknown offset '" + s + "'");
}

inline bool is_group_method(const std::string& m) {
  return m == "pca" || m == "group-knockoff" || m == "reid-tibshirani";
}

/// Applies a sweep value to a copy of the configuration.
inline ExperimentConfig at_point(const ExperimentConfig& base, double v) {
  ExperimentConfig c = base;
  const std::string& s = base.sweep;
  if (s == "M") {
    c.signal.amplitude = v;
  } else if (s == "k") {
    if (c.design.blocks.size() != 4) throw Error(ErrorCode::InvalidSpec, "sweep k needs a four-block design");
    const auto k = static_cast<Index>(std::llround(v));
    c.design.blocks[1].second = 2 * k;
    c.design.blocks[3].second = k;
  } else if (s == "rho") {
    c.design.rho = v;
  } else if (s == "gamma") {
    c.design.gamma = v;
  } else if (s == "config") {
    c.signal.per_group = static_cast<Index>(std::llround(v));
  } else if (s == "k1") {
    const auto k1 = static_cast<Index>(std::llround(v));
    c.signal.group_counts = {k1, std::max<Index>(1, k1 / 4)};
  } else if (s == "sigma") {
    c.sigma = v;
  } else if (s != "none") {
    throw Error(ErrorCode::InvalidSpec, "unknown sweep parameter '" + s + "'");
  }
  c.design.p = c.design.kind == DesignKind::IidGauss ? c.design.p : c.design.dim();
  if (c.n_factor > 0.0) c.design.n = static_cast<Index>(std::llround(c.n_factor * static_cast<double>(c.design.dim())));
  return c;
}

inline std::vector<Index> draw_support(const ExperimentConfig& c, CounterRng& rng) {
  const std::vector<Index> sizes = c.design.kind == DesignKind::IidGauss ? std::vector<Index>{c.design.p}
                                                                         : c.design.sizes();
  std::vector<Index> start;
  Index at = 0;
  for (Index s : sizes) {
    start.push_back(at);
    at += s;
  }
  const Index p = at;
  std::vector<Index> out;
  switch (c.signal.pattern) {
    case SupportPattern::PerBlock:
      for (std::size_t b = 0; b < sizes.size(); ++b) {
        std::vector<Index> pool(static_cast<std::size_t>(sizes[b]));
        std::iota(pool.begin(), pool.end(), start[b]);
        const auto cnt = static_cast<Index>(std::llround(c.signal.sparsity * static_cast<double>(sizes[b])));
        for (Index j : random_subset(rng, pool, cnt)) out.push_back(j);
      }
      break;
    case SupportPattern::Random: {
      std::vector<Index> pool(static_cast<std::size_t>(p));
      std::iota(pool.begin(), pool.end(), Index{0});
      const Index cnt = c.signal.count > 0 ? c.signal.count
                                           : static_cast<Index>(std::llround(c.signal.sparsity * static_cast<double>(p)));
      out = random_subset(rng, pool, cnt);
      break;
    }
    case SupportPattern::FirstInGroups:
      if (c.signal.groups > static_cast<Index>(sizes.size())) throw Error(ErrorCode::InvalidSpec, "too many signal groups");
      for (Index g = 0; g < c.signal.groups; ++g) {
        if (c.signal.per_group > sizes[g]) throw Error(ErrorCode::InvalidSpec, "per_group exceeds the group size");
        for (Index i = 0; i < c.signal.per_group; ++i) out.push_back(start[g] + i);
      }
      break;
    case SupportPattern::FirstOfRandomGroups: {
      // Size classes follow the runs of the design blocks.
      const BlockRuns& runs = c.design.blocks;
      if (c.signal.group_counts.size() != runs.size()) {
        throw Error(ErrorCode::InvalidSpec, "group_counts needs one entry per block run");
      }
      Index g0 = 0;
      for (std::size_t r = 0; r < runs.size(); ++r) {
        std::vector<Index> pool(static_cast<std::size_t>(runs[r].first));
        std::iota(pool.begin(), pool.end(), g0);
        for (Index g : random_subset(rng, pool, c.signal.group_counts[r])) out.push_back(start[g]);
        g0 += runs[r].first;
      }
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<double> support_scale(const ExperimentConfig& c, const std::vector<Index>& support) {
  if (c.signal.block_scale.empty()) return {};
  const std::vector<Index> sizes = c.design.sizes();
  if (c.signal.block_scale.size() != sizes.size()) throw Error(ErrorCode::InvalidSpec, "block_scale needs one entry per block");
  std::vector<double> out;
  for (Index j : support) {
    Index at = 0;
    for (std::size_t b = 0; b < sizes.size(); ++b) {
      if (j < at + sizes[b]) {
        out.push_back(c.signal.block_scale[b]);
        break;
      }
      at += sizes[b];
    }
  }
  return out;
}

// One design with everything that does not depend on the noise.
struct PreparedDesign {
  Matrix x;
  Signal signal;
  std::vector<Index> truth_groups;
  std::map<std::string, KnockoffModel> models;  // by s_key
  std::optional<GroupStructure> groups;
  std::optional<PcaPrototypeModel> pca;
  std::optional<GroupKnockoffModel> gk;
  std::optional<RtDesign> rt;
  int redraws = 0;
};

inline std::string s_key(const SBuildOptions& s) {
  return std::string(to_string(s.method)) + "/" + std::to_string(s.alpha) + "/" + std::to_string(s.beta);
}

inline const SBuildOptions& s_for_method(const ExperimentConfig& c, const std::string& m) {
  const auto it = c.method_s.find(m);
  return it == c.method_s.end() ? c.s : it->second;
}

inline RtOptions rt_options(const ExperimentConfig& c, std::uint64_t split_seed) {
  RtOptions o;
  o.n1_fraction = c.rt_n1_fraction;
  o.split_seed = split_seed;
  o.s = c.s;
  o.stat = StatisticOptions{StatKind::LassoPath};
  o.stat.path = c.path;
  o.q = c.q;
  return o;
}

inline PreparedDesign prepare_design(const ExperimentConfig& c, std::uint64_t point, std::uint64_t d) {
  PreparedDesign pd;
  bool group_mode = false, single_mode = false;
  for (const auto& m : c.methods) (is_group_method(m) ? group_mode : single_mode) = true;
  for (int attempt = 0; attempt < 50; ++attempt) {
    DesignSpec spec = c.design;
    spec.seed = c.seed;
    const DesignDraw draw = gen_design(spec, stream_key({point, d, static_cast<std::uint64_t>(attempt)}));
    pd.redraws += draw.redraws;
    pd.x = draw.x;
    const Index p = pd.x.cols();
    CounterRng srng(c.seed, stream_key({point, d}), StreamRole::Support);
    SignalSpec sig;
    sig.kind = c.signal.kind;
    sig.amplitude = c.signal.amplitude;
    sig.support = draw_support(c, srng);
    sig.scale = support_scale(c, sig.support);
    sig.drop_zero_s = c.signal.drop_zero_s;
    sig.seed = c.seed;
    SVector s_for_signal{Vector::Ones(p), SMethod::Equivariant, false};
    pd.models.clear();
    if (single_mode || c.signal.kind == SignalKind::OverS) {
      pd.models.emplace(s_key(c.s), make_knockoffs(pd.x, c.s));
      s_for_signal = pd.models.at(s_key(c.s)).s();
    }
    try {
      pd.signal = gen_signal(sig, s_for_signal, stream_key({point, d}));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroSAtSignal) throw;
      ++pd.redraws;
      continue;  // draw another design
    }
    for (const auto& m : c.methods) {
      if (is_group_method(m)) continue;
      const SBuildOptions& so = s_for_method(c, m);
      if (!pd.models.count(s_key(so))) pd.models.emplace(s_key(so), make_knockoffs(pd.x, so));
    }
    if (group_mode) {
      pd.groups = GroupStructure::contiguous(c.design.sizes());
      pd.truth_groups = signal_groups(*pd.groups, pd.signal.beta);
      for (const auto& m : c.methods) {
        if (m == "pca") {
          PcaFilterOptions o;
          o.prototypes_per_group = c.prototypes_per_group;
          pd.pca = build_pca_prototypes(pd.x, *pd.groups, o);
        } else if (m == "group-knockoff") {
          pd.gk = build_group_knockoff(pd.x, *pd.groups);
        } else if (m == "reid-tibshirani") {
          const RtOptions o = rt_options(c, stream_key({c.seed, point, d, 0x5EED}));
          const Index n2 = pd.x.rows() - static_cast<Index>(std::floor(o.n1_fraction * static_cast<double>(pd.x.rows())));
          if (n2 < 2 * p) throw Error(ErrorCode::InsufficientRows, "Reid-Tibshirani split leaves n2 < 2p");
          pd.rt = build_rt_design(pd.x, o);
        }
      }
    }
    return pd;
  }
  throw Error(ErrorCode::ZeroSAtSignal, "s stayed zero at a signal index after 50 design draws");
}

inline std::string context(const ExperimentConfig& c, double v, Index trial) {
  std::ostringstream os;
  os << "[preset " << c.preset << ", " << c.sweep << "=" << v << ", trial " << trial << "] ";
  return os.str();
}

}  // namespace detail

struct RunOptions {
  int threads = 0;
};

inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& run = {}) {
  ExperimentReport rep;
  rep.config = cfg;
  if (cfg.methods.empty()) throw Error(ErrorCode::InvalidSpec, "experiment has no methods");
  std::vector<Offset> offsets;
  for (const auto& o : cfg.offsets) offsets.push_back(detail::parse_offset(o));
  std::vector<std::optional<StatKind>> kinds;
  for (const auto& m : cfg.methods) {
    if (detail::is_group_method(m)) {
      kinds.push_back(std::nullopt);
    } else {
      const auto k = parse_stat_kind(m);
      if (!k) throw Error(ErrorCode::InvalidSpec, "unknown method '" + m + "'");
      kinds.push_back(k);
    }
  }
  const Index n_methods = static_cast<Index>(cfg.methods.size());
  const Index n_off = static_cast<Index>(offsets.size());

  for (std::size_t pi = 0; pi < cfg.values.size(); ++pi) {
    const auto t0 = std::chrono::steady_clock::now();
    const double v = cfg.values[pi];
    const ExperimentConfig c = detail::at_point(cfg, v);
    const Index designs = std::min<Index>(c.designs, c.trials);
    std::vector<detail::PreparedDesign> prepared(static_cast<std::size_t>(designs));
    parallel_for(designs, run.threads, [&](Index d) {
      try {
        prepared[d] = detail::prepare_design(c, pi, static_cast<std::uint64_t>(d));
      } catch (const Error& e) {
        throw Error(e.code(), detail::context(c, v, -1) + e.what());
      }
    });
    for (const auto& pd : prepared) rep.redraws += pd.redraws;

    // results[trial][method * n_off + offset]
    std::vector<std::vector<EvalReport>> results(static_cast<std::size_t>(c.trials));
    parallel_for(c.trials, run.threads, [&](Index t) {
      const detail::PreparedDesign& pd = prepared[static_cast<std::size_t>(t * designs / c.trials)];
      CounterRng nrng(c.seed, detail::stream_key({pi, static_cast<std::uint64_t>(t)}), StreamRole::Noise);
      Vector y = pd.x * pd.signal.beta;
      for (Index i = 0; i < y.size(); ++i) y(i) += c.sigma * nrng.normal();
      std::vector<EvalReport>& row = results[static_cast<std::size_t>(t)];
      row.resize(static_cast<std::size_t>(n_methods * n_off));
      try {
        for (Index mi = 0; mi < n_methods; ++mi) {
          const std::string& m = c.methods[mi];
          if (kinds[mi]) {
            StatisticOptions so{*kinds[mi]};
            so.path = c.path;
            so.tie_zero_s = c.signal.drop_zero_s;
            const StatVector w = compute_statistic(pd.models.at(detail::s_key(detail::s_for_method(c, m))), y, so);
            for (Index oi = 0; oi < n_off; ++oi) {
              row[mi * n_off + oi] = evaluate(knockoff_threshold(w.w, c.q, offsets[oi]), pd.signal.truth);
            }
            continue;
          }
          for (Index oi = 0; oi < n_off; ++oi) {
            GroupSelectionResult r;
            if (m == "pca") {
              PcaFilterOptions o;
              o.prototypes_per_group = c.prototypes_per_group;
              o.stat.path = c.path;
              o.q = c.q;
              o.offset = offsets[oi];
              r = pca_prototype_select(*pd.pca, y, o);
            } else if (m == "group-knockoff") {
              GroupKnockoffOptions o;
              o.q = c.q;
              o.offset = offsets[oi];
              o.path = c.path;
              r = group_knockoff_select(*pd.gk, y, o);
            } else {
              RtOptions o = detail::rt_options(c, 0);
              o.offset = offsets[oi];
              r = rt_select(*pd.rt, y, *pd.groups, o);
            }
            row[mi * n_off + oi] = group_evaluate(r, pd.truth_groups);
          }
        }
      } catch (const Error& e) {
        throw Error(e.code(), detail::context(c, v, t) + e.what());
      }
    });
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (Index mi = 0; mi < n_methods; ++mi) {
      for (Index oi = 0; oi < n_off; ++oi) {
        std::vector<EvalReport> col;
        col.reserve(results.size());
        for (const auto& r : results) col.push_back(r[mi * n_off + oi]);
        ResultRow row;
        row.param = c.sweep;
        row.value = v;
        row.method = c.methods[mi];
        row.offset = c.offsets[oi];
        row.summary = monte_carlo_fdr(col, c.q);
        row.wall_seconds = wall;
        rep.rows.push_back(std::move(row));
      }
    }
  }
  return rep;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// One row per (point, method, offset). The wall-time column is opt-in because it
/// is the only field that differs between otherwise identical runs.
inline std::string report_csv(const ExperimentReport& r, bool timing = false) {
  std::ostringstream os;
  os << "preset,param,value,method,offset,trials,fdr,fdr_se,power,power_se,mfdr,mfdr_se,mean_selected";
  if (timing) os << ",wall_seconds";
  os << "\n";
  for (const ResultRow& row : r.rows) {
    const FdrSummary& s = row.summary;
    os << r.config.preset << ',' << row.param << ',' << format_number(row.value) << ',' << row.method << ','
       << row.offset << ',' << s.trials << ',' << format_number(s.fdr) << ',' << format_number(s.fdr_se) << ','
       << format_number(s.power) << ',' << format_number(s.power_se) << ',' << format_number(s.mfdr) << ','
       << format_number(s.mfdr_se) << ',' << format_number(s.mean_selected);
    if (timing) os << ',' << format_number(row.wall_seconds);
    os << "\n";
  }
  return os.str();
}

inline Json report_json(const ExperimentReport& r, bool timing = false) {
  Json rows = Json::array();
  for (const ResultRow& row : r.rows) {
    const FdrSummary& s = row.summary;
    Json j{{"param", row.param},     {"value", row.value},     {"method", row.method},
           {"offset", row.offset},   {"trials", s.trials},     {"fdr", s.fdr},
           {"fdr_se", s.fdr_se},     {"power", s.power},       {"power_se", s.power_se},
           {"mfdr", s.mfdr},         {"mfdr_se", s.mfdr_se},   {"mean_selected", s.mean_selected}};
    if (timing) j["wall_seconds"] = row.wall_seconds;
    rows.push_back(std::move(j));
  }
  return Json{{"config", to_json(r.config)}, {"redraws", r.redraws}, {"rows", rows}};
}

}  // namespace knockoff
