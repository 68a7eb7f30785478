// Acceptance checks. Prints one PASS/FAIL line per check and exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "knockoff/knockoff.hpp"

using namespace knockoff;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix sigma_ab(double a, double b) {
  Matrix s(3, 3);
  s << 1, b, a, b, 1, a, a, a, 1;
  return s;
}

bool fdr_ok(const FdrSummary& s, double q) { return s.fdr <= q + 3.0 * s.fdr_se; }

std::string row_text(const ResultRow& r) {
  return r.method + "/" + r.offset + "@" + fmt("%g", r.value) + " fdr " + fmt("%.3f", r.summary.fdr) + "±" +
         fmt("%.3f", r.summary.fdr_se) + " power " + fmt("%.3f", r.summary.power);
}

const ResultRow* find_row(const ExperimentReport& r, const std::string& method, const std::string& offset,
                          double value) {
  for (const ResultRow& row : r.rows) {
    if (row.method == method && row.offset == offset && std::abs(row.value - value) < 1e-9) return &row;
  }
  return nullptr;
}

ExperimentReport run_preset(const std::string& name, const std::string& overrides) {
  return run_experiment(resolve_config(name, "desk", Json::parse(overrides)));
}

// Correlated design: common factor of weight 0.6 plus iid noise, unit columns.
Matrix factor_design(Index n, Index p, std::uint64_t seed) {
  CounterRng rng(seed, 0, StreamRole::Design);
  Matrix x(n, p);
  for (Index i = 0; i < n; ++i) {
    const double f = rng.normal();
    for (Index j = 0; j < p; ++j) x(i, j) = 0.6 * f + rng.normal();
  }
  return normalize_columns(x);
}

Vector noise(std::uint64_t seed, std::uint64_t trial, Index n, double sigma) {
  CounterRng rng(seed, trial, StreamRole::Noise);
  Vector e(n);
  for (Index i = 0; i < n; ++i) e(i) = sigma * rng.normal();
  return e;
}

Outcome construction_exactness() {
  const Index ps[] = {5, 20, 60};
  const SMethod methods[] = {SMethod::Equivariant, SMethod::Sdp, SMethod::ModifiedSdp};
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Index p = ps[i % 3];
    const Matrix x = factor_design(3 * p, p, 100 + static_cast<std::uint64_t>(i));
    const KnockoffModel m = make_knockoffs(x, SBuildOptions{methods[(i / 3) % 3], 0.5, 1.0});
    const KnockoffReport r = validate_knockoff(m);
    worst = std::max({worst, r.gram_error, r.cross_error, r.complement_error, r.difference_error});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-8 && secs < 30.0, "max invariant error " + fmt("%.2e", worst)};
}

Outcome sdp_oracle() {
  struct Case {
    double a, b, s;
  };
  bool ok = true;
  std::string d;
  for (const Case c : {Case{0.8, 0.4, 0.24}, Case{0.9, 0.7, 0.16}, Case{0.7, 0.4, 0.84}}) {
    const SymMatrix sig(sigma_ab(c.a, c.b));
    const Vector s = s_sdp(sig).s;
    ok = ok && std::abs(s(0) - c.s) <= 0.01 && std::abs(s(1) - c.s) <= 0.01 && std::abs(s(2)) <= 0.01;
    const double lo = s_modified_sdp(sig, 0.5).s.minCoeff() - 0.5 * min_eig(sig);
    ok = ok && lo >= -1e-6;
    d += "(" + fmt("%.3f", s(0)) + "," + fmt("%.3f", s(1)) + "," + fmt("%.3f", s(2)) + ") msdp margin " +
         fmt("%.1e", lo) + " ";
  }
  return {ok, d};
}

Outcome table1_contrast() {
  const ExperimentReport r = run_preset("table1", R"({"values":[1,3,5]})");
  bool ok = true;
  std::string d;
  for (double m : {1.0, 3.0, 5.0}) {
    const ResultRow* ls = find_row(r, "ls", "knockoff+", m);
    if (!ls) return {false, "missing ls row"};
    ok = ok && fdr_ok(ls->summary, 0.2) && (m < 3.0 || ls->summary.power >= 0.9);
    d += row_text(*ls) + "; ";
    for (const char* off : {"knockoff", "knockoff+"}) {
      const ResultRow* mc = find_row(r, "mc", off, m);
      if (!mc) return {false, "missing mc row"};
      ok = ok && mc->summary.power <= 0.05;
      d += row_text(*mc) + "; ";
    }
  }
  return {ok, d};
}

Outcome alternating_sign() {
  const ExperimentReport r = run_preset("altsign", R"({"values":[8]})");
  bool ok = true;
  std::string d;
  for (const ResultRow& row : r.rows) {
    if (row.offset != "knockoff+") continue;
    const bool weak = row.method == "lasso-path" || row.method == "fs";
    ok = ok && fdr_ok(row.summary, 0.2) && (weak ? row.summary.power <= 0.40 : row.summary.power >= 0.80);
    d += row_text(row) + "; ";
  }
  return {ok, d};
}

Outcome fdr_control() {
  const ExperimentReport r = run_preset("fdr_iid", "{}");
  bool ok = true;
  int rows = 0;
  std::string d;
  for (const ResultRow& row : r.rows) {
    if (row.offset != "knockoff+") continue;
    ++rows;
    ok = ok && fdr_ok(row.summary, 0.2);
    d += row_text(row) + "; ";
  }
  return {ok && rows == 8, d};
}

// FISTA on (u, d) = (b^ + b~, b^ - b~): 1/2 ||y - A_u u - A_d d||^2 + lambda ||d||_1.
void prox_gradient(const KnockoffModel& m, const Vector& y, double lambda, Vector& bh, Vector& bt) {
  const Index p = m.p();
  Matrix a(m.n(), 2 * p);
  a << 0.5 * (m.x() + m.xtilde()), 0.5 * (m.x() - m.xtilde());
  const Matrix g = a.transpose() * a;
  const Vector c = a.transpose() * y;
  const double step = 1.0 / eigenvalues(SymMatrix(g)).maxCoeff();
  Vector z = Vector::Zero(2 * p), prev = z, v = z;
  double t = 1.0;
  for (int it = 0; it < 200000; ++it) {
    Vector next = v - step * (g * v - c);
    for (Index j = p; j < 2 * p; ++j) next(j) = soft_threshold(next(j), step * lambda);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    v = next + ((t - 1.0) / tn) * (next - z);
    prev = z;
    z = next;
    t = tn;
    if (it > 10 && (z - prev).cwiseAbs().maxCoeff() < 1e-14) break;
  }
  bh = 0.5 * (z.head(p) + z.tail(p));
  bt = 0.5 * (z.head(p) - z.tail(p));
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Outcome half_lasso_closed_form() {
  double worst = 0.0;
  int sign_failures = 0;
  for (int i = 0; i < 100; ++i) {
    const Index p = 4 + i % 9;
    const Index n = 3 * p + 5;
    const auto seed = 500 + static_cast<std::uint64_t>(i);
    const KnockoffModel m = make_knockoffs(factor_design(n, p, seed), SBuildOptions{SMethod::ModifiedSdp, 0.5, 0.75});
    Vector beta = Vector::Zero(p);
    for (Index j = 0; j < p; j += 2) beta(j) = (j % 4 == 0 ? 2.0 : -1.5);
    const Vector y = m.x() * beta + noise(seed, 0, n, 1.0);
    const double lambda = 0.2 + 0.1 * (i % 5);
    const HalfPenalizedSolution hl = half_lasso(m, y, lambda);
    Vector bh, bt;
    prox_gradient(m, y, lambda, bh, bt);
    worst = std::max({worst, (hl.beta_hat - bh).cwiseAbs().maxCoeff(), (hl.beta_tilde - bt).cwiseAbs().maxCoeff()});
    const HalfPenalizedSolution ls = least_squares(m, y);
    for (Index j = 0; j < p; ++j) {
      const double a = sgn(hl.beta_hat(j) - hl.beta_tilde(j));
      if (a != 0.0 && a != sgn(ls.beta_hat(j) - ls.beta_tilde(j))) ++sign_failures;
    }
  }
  return {worst < 1e-6 && sign_failures == 0,
          "sup-norm gap " + fmt("%.2e", worst) + ", sign violations " + fmt("%g", sign_failures)};
}

Outcome noise_estimator() {
  const Index p = 50, n = 2 * p + 400;
  const double sigma = 2.0;
  const KnockoffModel m = make_knockoffs(factor_design(n, p, 7), SBuildOptions{SMethod::ModifiedSdp, 0.5, 0.75});
  Vector beta = Vector::Zero(p);
  beta.head(10).setConstant(1.5);
  const Vector mu = m.x() * beta;
  double sum = 0.0, swap_gap = 0.0;
  double dof = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vector y = mu + noise(11, static_cast<std::uint64_t>(t), n, sigma);
    const NoiseEstimate e = estimate_sigma(m, y);
    dof = static_cast<double>(e.dof);
    sum += e.sigma_hat * e.sigma_hat * dof / (sigma * sigma);
    if (t < 20) {
      Matrix xs = m.x(), xts = m.xtilde();
      const Index j = t % p;
      xs.col(j).swap(xts.col(j));
      const KnockoffModel swapped(xs, xts, m.s(), m.u());
      swap_gap = std::max(swap_gap, std::abs(estimate_sigma(swapped, y).sigma_hat - e.sigma_hat));
    }
  }
  const double mean = sum / 1000.0;
  const double band = 3.0 * std::sqrt(2.0 * dof) / std::sqrt(1000.0);
  return {std::abs(mean - dof) <= band && swap_gap <= 1e-12 && dof == 400.0,
          "mean " + fmt("%.2f", mean) + " vs dof " + fmt("%g", dof) + " ± " + fmt("%.2f", band) + ", swap gap " +
              fmt("%.1e", swap_gap)};
}

Outcome pca_orthogonality() {
  ExperimentConfig c = detail::at_point(resolve_config("pca_vs_rt", "desk", Json::object()), 5.0);
  double worst = 0.0;
  const GroupStructure g = GroupStructure::contiguous(c.design.sizes());
  for (std::uint64_t d = 1; d <= 5; ++d) {
    c.design.seed = d;
    const PcaPrototypeModel m = build_pca_prototypes(gen_design(c.design).x, g);
    worst = std::max(worst, (m.pair_distances().array() - 2.0).abs().maxCoeff());
  }
  const ExperimentReport r = run_preset("pca_vs_rt", R"({"values":[5]})");
  const ResultRow* pca = find_row(r, "pca", "knockoff+", 5.0);
  const ResultRow* rt = find_row(r, "reid-tibshirani", "knockoff+", 5.0);
  if (!pca || !rt) return {false, "missing rows"};
  const bool ok = worst <= 1e-8 && fdr_ok(pca->summary, 0.2) && fdr_ok(rt->summary, 0.2) &&
                  pca->summary.power >= rt->summary.power + 0.15;
  return {ok, "max |d - 2| " + fmt("%.1e", worst) + "; " + row_text(*pca) + "; " + row_text(*rt)};
}

Outcome group_comparison() {
  const ExperimentReport r = run_preset("group_compare", "{}");
  bool ok = true;
  std::string d;
  for (double rho : {0.5, 0.9}) {
    const ResultRow* pca = find_row(r, "pca", "knockoff+", rho);
    const ResultRow* gk = find_row(r, "group-knockoff", "knockoff+", rho);
    const ResultRow* rt = find_row(r, "reid-tibshirani", "knockoff+", rho);
    if (!pca || !gk || !rt) return {false, "missing rows"};
    ok = ok && fdr_ok(pca->summary, 0.2) && fdr_ok(gk->summary, 0.2) &&
         std::abs(pca->summary.power - gk->summary.power) <= 0.15;
    if (rho == 0.9) ok = ok && rt->summary.power < std::min(pca->summary.power, gk->summary.power);
    d += row_text(*pca) + "; " + row_text(*gk) + "; " + row_text(*rt) + "; ";
  }
  return {ok, d};
}

Outcome z_score_bound() {
  DesignSpec spec;
  spec.kind = DesignKind::FourGroupAlt;
  spec.blocks = {{1, 10}, {1, 4}, {1, 10}, {1, 2}};
  spec.n = 3 * spec.dim();
  spec.seed = 3;
  const Matrix x = gen_design(spec).x;
  const Index p = x.cols(), n = x.rows();
  const Vector s = make_knockoffs(x, SBuildOptions{SMethod::ModifiedSdp, 0.5, 0.75}).s_values();
  const double M = 3.0;
  std::vector<Index> support;
  Vector beta = Vector::Zero(p);
  for (Index j = 0; j < p; j += 3) {
    support.push_back(j);
    beta(j) = M / s(j);
  }
  const Matrix sigma = x.transpose() * x;
  const Eigen::LLT<Matrix> llt(sigma);
  const Vector sinv_diag = llt.solve(Matrix::Identity(p, p)).diagonal();
  Vector mean = Vector::Zero(p);
  for (int t = 0; t < 1000; ++t) {
    const Vector b = llt.solve(x.transpose() * (x * beta + noise(21, static_cast<std::uint64_t>(t), n, 1.0)));
    mean += b.cwiseQuotient(sinv_diag.cwiseSqrt()) / 1000.0;
  }
  double lowest = std::numeric_limits<double>::infinity();
  for (Index j : support) lowest = std::min(lowest, mean(j));
  const double bound = M / std::sqrt(2.0) - 0.1;
  return {lowest >= bound, "min non-null mean Z " + fmt("%.3f", lowest) + " vs " + fmt("%.3f", bound)};
}

// Smallest t among nonzero |w_j| that meets the ratio, found by scanning every entry.
double brute_threshold(const Vector& w, double q, double off) {
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < w.size(); ++i) {
    const double t = std::abs(w(i));
    if (t == 0.0 || t >= best) continue;
    double pos = 0.0, neg = 0.0;
    for (Index j = 0; j < w.size(); ++j) {
      if (w(j) >= t) pos += 1.0;
      if (w(j) <= -t) neg += 1.0;
    }
    if ((off + neg) / std::max(1.0, pos) <= q) best = t;
  }
  return best;
}

Outcome threshold_brute_force() {
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    CounterRng rng(31, static_cast<std::uint64_t>(i), StreamRole::Signal);
    const auto p = static_cast<Index>(1 + rng.next() % 12);
    Vector w(p);
    for (Index j = 0; j < p; ++j) {
      // Small integers give ties and zeros; a positive bias gives finite thresholds.
      w(j) = static_cast<double>(static_cast<int>(rng.next() % 9) - 3);
    }
    const double q = 0.1 + 0.1 * static_cast<double>(i % 5);
    for (Offset off : {Offset::Knockoff, Offset::KnockoffPlus}) {
      const SelectionResult r = knockoff_threshold(w, q, off);
      const double t = brute_threshold(w, q, off == Offset::KnockoffPlus ? 1.0 : 0.0);
      std::vector<Index> sel;
      for (Index j = 0; j < p; ++j) {
        if (w(j) >= t) sel.push_back(j);
      }
      if (r.threshold != t || r.selected != sel) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%g", mismatches) + " mismatches in 2000 comparisons"};
}

}  // namespace

// Optional arguments pick checks by number, e.g. `acceptance 1 2 11`.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"construction exactness", construction_exactness},
      {"sdp oracle values", sdp_oracle},
      {"two-block contrast", table1_contrast},
      {"alternating sign", alternating_sign},
      {"fdr control, iid design", fdr_control},
      {"half lasso closed form", half_lasso_closed_form},
      {"noise estimator", noise_estimator},
      {"pca prototype orthogonality", pca_orthogonality},
      {"group comparison", group_comparison},
      {"z-score bound", z_score_bound},
      {"threshold brute force", threshold_brute_force},
  };
  int failed = 0;
  std::vector<bool> wanted(checks.size(), argc < 2);
  for (int a = 1; a < argc; ++a) {
    const auto k = static_cast<std::size_t>(std::atoi(argv[a]));
    if (k >= 1 && k <= checks.size()) wanted[k - 1] = true;
  }
  for (std::size_t i = 0; i < checks.size(); ++i) {
    if (!wanted[i]) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, checks[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
