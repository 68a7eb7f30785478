#include <gtest/gtest.h>

#include <random>

#include "knockoff/selection.hpp"
#include "knockoff/statistics.hpp"
#include "test_util.hpp"

using namespace knockoff;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Exhaustive search over every t > 0 at which the ratio can change.
double brute_threshold(const Vector& w, double q, double off) {
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < w.size(); ++i) {
    const double t = std::abs(w(i));
    if (t == 0.0) continue;
    double neg = 0, pos = 0;
    for (Index j = 0; j < w.size(); ++j) {
      neg += w(j) <= -t ? 1 : 0;
      pos += w(j) >= t ? 1 : 0;
    }
    if ((off + neg) / std::max(1.0, pos) <= q) best = std::min(best, t);
  }
  return best;
}

}  // namespace

TEST(Threshold, KnockoffExample) {
  const SelectionResult r = knockoff_threshold(vec({3, 2, 1, -1}), 0.5, Offset::Knockoff);
  EXPECT_EQ(r.threshold, 1.0);
  EXPECT_EQ(r.selected, (std::vector<Index>{0, 1, 2}));
}

TEST(Threshold, KnockoffPlusExample) {
  // t = 1: (1 + 1) / 3 > 0.5; t = 2: (1 + 0) / 2 = 0.5.
  const SelectionResult r = knockoff_threshold(vec({3, 2, 1, -1}), 0.5, Offset::KnockoffPlus);
  EXPECT_EQ(r.threshold, 2.0);
  EXPECT_EQ(r.selected, (std::vector<Index>{0, 1}));
  EXPECT_TRUE(knockoff_threshold(vec({3, 2, 1, -1}), 0.4, Offset::KnockoffPlus).selected.empty());
}

TEST(Threshold, AllNegativeSelectsNothing) {
  const SelectionResult r = knockoff_threshold(vec({-1, -2, -0.5}), 0.5, Offset::Knockoff);
  EXPECT_TRUE(std::isinf(r.threshold));
  EXPECT_TRUE(r.selected.empty());
  EXPECT_TRUE(knockoff_threshold(Vector::Zero(5), 0.2).selected.empty());
}

TEST(Threshold, ZerosCountNowhere) {
  const SelectionResult r = knockoff_threshold(vec({0, 0, 2, 0}), 0.5, Offset::Knockoff);
  EXPECT_EQ(r.threshold, 2.0);
  EXPECT_EQ(r.selected, (std::vector<Index>{2}));
}

TEST(Threshold, RejectsBadQ) {
  EXPECT_THROW(knockoff_threshold(vec({1}), 0.0), Error);
  EXPECT_THROW(knockoff_threshold(vec({1}), 1.5), Error);
}

TEST(Threshold, BruteForceEquivalence) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> len(1, 12), val(-4, 6);
  for (int rep = 0; rep < 2000; ++rep) {
    Vector w(len(gen));
    for (Index j = 0; j < w.size(); ++j) w(j) = val(gen) * 0.5;
    for (double q : {0.1, 0.2, 0.5}) {
      for (Offset o : {Offset::Knockoff, Offset::KnockoffPlus}) {
        const SelectionResult r = knockoff_threshold(w, q, o);
        EXPECT_EQ(r.threshold, brute_threshold(w, q, o == Offset::KnockoffPlus ? 1.0 : 0.0));
        for (Index j : r.selected) EXPECT_GT(w(j), 0.0);
      }
    }
  }
}

TEST(Threshold, MonotoneInQAndScaleInvariant) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd(0.5, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    Vector w(30);
    for (Index j = 0; j < 30; ++j) w(j) = nd(gen);
    std::size_t prev = 0;
    for (double q : {0.05, 0.1, 0.2, 0.3, 0.5, 1.0}) {
      const SelectionResult r = knockoff_threshold(w, q);
      EXPECT_GE(r.selected.size(), prev);
      prev = r.selected.size();
      EXPECT_EQ(knockoff_threshold(3.7 * w, q).selected, r.selected);
    }
  }
}

TEST(Evaluate, Examples) {
  EvalReport e = evaluate(std::vector<Index>{0, 1}, std::vector<Index>{0, 1});
  EXPECT_EQ(e.fdp, 0.0);
  EXPECT_EQ(e.power, 1.0);
  e = evaluate(std::vector<Index>{0, 1, 2, 3}, std::vector<Index>{0, 1, 2});
  EXPECT_DOUBLE_EQ(e.fdp, 0.25);
  EXPECT_EQ(e.power, 1.0);
  e = evaluate(std::vector<Index>{}, std::vector<Index>{0, 1, 2});
  EXPECT_EQ(e.fdp, 0.0);
  EXPECT_EQ(e.power, 0.0);
}

TEST(MonteCarlo, Summaries) {
  EvalReport a, b;
  a.n_selected = 2;
  a.n_true_selected = 2;
  a.fdp = 0.0;
  b.n_selected = 2;
  b.n_true_selected = 1;
  b.fdp = 0.5;
  const FdrSummary s = monte_carlo_fdr({a, b}, 0.2);
  EXPECT_DOUBLE_EQ(s.fdr, 0.25);
  EXPECT_DOUBLE_EQ(s.fdr_se, 0.25);
  EXPECT_DOUBLE_EQ(s.mfdr, 0.5 * (1.0 / 7.0));
  EXPECT_DOUBLE_EQ(s.mean_selected, 2.0);

  const FdrSummary z = monte_carlo_fdr(std::vector<EvalReport>(4), 0.2);
  EXPECT_EQ(z.fdr, 0.0);
  EXPECT_EQ(z.power, 0.0);
  EXPECT_EQ(z.mfdr, 0.0);
  EXPECT_THROW(monte_carlo_fdr({}, 0.2), Error);
}

TEST(MonteCarlo, NullModelFdrControlled) {
  const Matrix x = knockoff::testing::random_design(60, 12, 77);
  const KnockoffModel m = make_knockoffs(x, SBuildOptions{SMethod::ModifiedSdp, 0.5, 0.75});
  std::vector<EvalReport> reps;
  const double q = 0.2;
  for (int t = 0; t < 200; ++t) {
    const Vector y = knockoff::testing::random_vector(60, 3000 + t);
    const StatVector w = compute_statistic(m, y, StatisticOptions(StatKind::LeastSquares));
    reps.push_back(evaluate(knockoff_threshold(w.w, q, Offset::KnockoffPlus), {}));
  }
  const FdrSummary s = monte_carlo_fdr(reps, q);
  EXPECT_LE(s.fdr, q + 3 * s.fdr_se);
  EXPECT_EQ(s.power, 0.0);
}
