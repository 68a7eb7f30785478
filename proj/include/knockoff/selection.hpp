#pragma once

// Knockoff / knockoff+ thresholding and FDR / power bookkeeping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "knockoff/numkernel.hpp"

namespace knockoff {

enum class Offset { Knockoff = 0, KnockoffPlus = 1 };

struct SelectionResult {
  double threshold = std::numeric_limits<double>::infinity();
  std::vector<Index> selected;  // sorted, 0-based
  Offset offset = Offset::Knockoff;
  double q = 0.2;
};

/// T = min{t in {|w_j| : w_j != 0} : (offset + #{w_j <= -t}) / max(1, #{w_j >= t}) <= q}.
inline SelectionResult knockoff_threshold(const Vector& w, double q, Offset offset = Offset::KnockoffPlus) {
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "q must lie in (0, 1]");
  SelectionResult r;
  r.offset = offset;
  r.q = q;
  std::vector<double> pos, neg, cand;
  for (Index j = 0; j < w.size(); ++j) {
    if (w(j) > 0.0) pos.push_back(w(j));
    if (w(j) < 0.0) neg.push_back(-w(j));
    if (w(j) != 0.0) cand.push_back(std::abs(w(j)));
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  const double off = offset == Offset::KnockoffPlus ? 1.0 : 0.0;
  for (double t : cand) {
    const auto n_pos = static_cast<double>(pos.end() - std::lower_bound(pos.begin(), pos.end(), t));
    const auto n_neg = static_cast<double>(neg.end() - std::lower_bound(neg.begin(), neg.end(), t));
    if ((off + n_neg) / std::max(1.0, n_pos) <= q) {
      r.threshold = t;
      break;
    }
  }
  if (std::isfinite(r.threshold)) {
    for (Index j = 0; j < w.size(); ++j) {
      if (w(j) >= r.threshold) r.selected.push_back(j);
    }
  }
  return r;
}

struct EvalReport {
  double fdp = 0.0;
  double power = 0.0;
  Index n_selected = 0;
  Index n_true_selected = 0;
  Index n_truth = 0;
};

inline EvalReport evaluate(const std::vector<Index>& selected, const std::vector<Index>& truth) {
  const std::set<Index> t(truth.begin(), truth.end());
  EvalReport e;
  e.n_selected = static_cast<Index>(selected.size());
  e.n_truth = static_cast<Index>(t.size());
  for (Index j : selected) e.n_true_selected += t.count(j) ? 1 : 0;
  const Index false_sel = e.n_selected - e.n_true_selected;
  e.fdp = static_cast<double>(false_sel) / static_cast<double>(std::max<Index>(e.n_selected, 1));
  e.power = static_cast<double>(e.n_true_selected) / static_cast<double>(std::max<Index>(e.n_truth, 1));
  return e;
}

inline EvalReport evaluate(const SelectionResult& r, const std::vector<Index>& truth) {
  return evaluate(r.selected, truth);
}

struct FdrSummary {
  Index trials = 0;
  double fdr = 0.0;
  double fdr_se = 0.0;
  double power = 0.0;
  double power_se = 0.0;
  double mfdr = 0.0;
  double mfdr_se = 0.0;
  double mean_selected = 0.0;
};

namespace detail {

inline void mean_se(const std::vector<double>& v, double& mean, double& se) {
  const double n = static_cast<double>(v.size());
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
}

}  // namespace detail

/// Mean FDP, power and mFDR (false / (selected + 1/q)) over trials, with standard errors.
inline FdrSummary monte_carlo_fdr(const std::vector<EvalReport>& trials, double q) {
  if (trials.empty()) throw Error(ErrorCode::EmptyInput, "monte_carlo_fdr needs at least one trial");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "q must lie in (0, 1]");
  std::vector<double> fdp, pow, mf;
  double sel = 0.0;
  for (const EvalReport& e : trials) {
    fdp.push_back(e.fdp);
    pow.push_back(e.power);
    const double false_sel = static_cast<double>(e.n_selected - e.n_true_selected);
    mf.push_back(false_sel / (static_cast<double>(e.n_selected) + 1.0 / q));
    sel += static_cast<double>(e.n_selected);
  }
  FdrSummary s;
  s.trials = static_cast<Index>(trials.size());
  detail::mean_se(fdp, s.fdr, s.fdr_se);
  detail::mean_se(pow, s.power, s.power_se);
  detail::mean_se(mf, s.mfdr, s.mfdr_se);
  s.mean_selected = sel / static_cast<double>(trials.size());
  return s;
}

}  // namespace knockoff
