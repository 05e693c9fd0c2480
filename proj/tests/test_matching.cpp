#include "linkfed/matching.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "linkfed/rng.hpp"

using linkfed::CandidatePairSet;
using linkfed::Matching;

namespace {

// Exhaustive maximum-weight perfect matching over all n! assignments.
// Independent oracle for the Hungarian solver and the greedy ratio checks.
double best_assignment_total(const Eigen::MatrixXd& sim) {
  const int n = static_cast<int>(sim.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += sim(i, perm[i]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

void expect_valid(const Matching& m, int n_a, int n_b) {
  std::vector<int> seen_a(n_a, 0), seen_b(n_b, 0);
  for (const auto& [ia, ib] : m.matched_pairs) {
    ASSERT_GE(ia, 0);
    ASSERT_LT(ia, n_a);
    ASSERT_GE(ib, 0);
    ASSERT_LT(ib, n_b);
    ++seen_a[ia];
    ++seen_b[ib];
  }
  for (int c : seen_a) EXPECT_LE(c, 1);
  for (int c : seen_b) EXPECT_LE(c, 1);
}

Eigen::MatrixXd random_sim(linkfed::Rng& rng, int n_a, int n_b) {
  Eigen::MatrixXd s(n_a, n_b);
  for (int i = 0; i < n_a; ++i)
    for (int j = 0; j < n_b; ++j) s(i, j) = rng.uniform_real(-1.0, 1.0);
  return s;
}

}  // namespace

TEST(CosineSimilarity, IdenticalDirectionIsOne) {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 1, 0;
  EXPECT_DOUBLE_EQ(linkfed::cosine_similarity(a, b), 1.0);
}

TEST(CosineSimilarity, OrthogonalIsZero) {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  EXPECT_DOUBLE_EQ(linkfed::cosine_similarity(a, b), 0.0);
}

TEST(CosineSimilarity, HandComputedValue) {
  Eigen::VectorXd a(3), b(3);
  a << 1, 2, 3;
  b << 4, 5, 6;
  // 32 / (sqrt(14) * sqrt(77))
  EXPECT_NEAR(linkfed::cosine_similarity(a, b), 0.974631846, 5e-10);
}

TEST(CosineSimilarity, ZeroNormGivesZero) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd b(3);
  b << 1, 2, 3;
  EXPECT_DOUBLE_EQ(linkfed::cosine_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(linkfed::cosine_similarity(b, a), 0.0);
}

TEST(CosineSimilarity, LengthMismatchThrows) {
  Eigen::VectorXd a(2), b(3);
  a.setOnes();
  b.setOnes();
  EXPECT_THROW((void)linkfed::cosine_similarity(a, b), std::invalid_argument);
}

TEST(CosineSimilarity, MatrixMatchesScalarCalls) {
  linkfed::Rng rng(11);
  Eigen::MatrixXd A(3, 4), B(3, 5);
  for (int i = 0; i < A.size(); ++i) A(i) = rng.gaussian();
  for (int i = 0; i < B.size(); ++i) B(i) = rng.gaussian();
  const Eigen::MatrixXd S = linkfed::cosine_matrix(A, B);
  ASSERT_EQ(S.rows(), 4);
  ASSERT_EQ(S.cols(), 5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j)
      EXPECT_NEAR(S(i, j), linkfed::cosine_similarity(A.col(i), B.col(j)), 1e-14);
}

TEST(GreedyMatch, Singleton) {
  Eigen::MatrixXd s(1, 1);
  s << 1.0;
  const Matching m = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
  ASSERT_EQ(m.matched_pairs.size(), 1u);
  EXPECT_EQ(m.matched_pairs[0], std::make_pair(0, 0));
  EXPECT_DOUBLE_EQ(m.total_similarity, 1.0);
}

TEST(GreedyMatch, TwoByTwoKnownSuboptimal) {
  Eigen::MatrixXd s(2, 2);
  s << 0.9, 0.8, 0.8, 0.1;
  const Matching greedy = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
  ASSERT_EQ(greedy.matched_pairs.size(), 2u);
  EXPECT_EQ(greedy.matched_pairs[0], std::make_pair(0, 0));
  EXPECT_EQ(greedy.matched_pairs[1], std::make_pair(1, 1));
  EXPECT_NEAR(greedy.total_similarity, 1.0, 1e-12);

  // Optimal assignment takes the anti-diagonal; after the +1 shift greedy
  // stays within the factor-2 guarantee.
  Eigen::MatrixXd shifted = s.array() + 1.0;
  const Matching g2 = linkfed::greedy_match(CandidatePairSet::from_matrix(shifted));
  const Matching h2 = linkfed::hungarian_match(CandidatePairSet::from_matrix(shifted));
  EXPECT_NEAR(h2.total_similarity, 3.6, 1e-12);
  EXPECT_GE(g2.total_similarity, 0.5 * h2.total_similarity);
}

TEST(GreedyMatch, AllEqualUsesTieBreak) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(3, 3, 0.5);
  const Matching m = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
  ASSERT_EQ(m.matched_pairs.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(m.matched_pairs[i], std::make_pair(i, i));
}

TEST(GreedyMatch, EmptyPairSetGivesEmptyMatching) {
  CandidatePairSet s;
  s.n_a = 0;
  s.n_b = 0;
  const Matching m = linkfed::greedy_match(s);
  EXPECT_TRUE(m.matched_pairs.empty());
  EXPECT_DOUBLE_EQ(m.total_similarity, 0.0);
}

TEST(GreedyMatch, UnbalancedReportsUnmatched) {
  Eigen::MatrixXd s(2, 3);
  s << 0.5, 0.1, 0.9, 0.2, 0.8, 0.3;
  const Matching m = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
  EXPECT_EQ(m.matched_pairs.size(), 2u);
  EXPECT_TRUE(m.unmatched_a.empty());
  ASSERT_EQ(m.unmatched_b.size(), 1u);
  expect_valid(m, 2, 3);
}

TEST(GreedyMatch, TotalEqualsSumOfPairScores) {
  linkfed::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 8));
    const Eigen::MatrixXd s = random_sim(rng, n, n);
    const Matching m = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
    expect_valid(m, n, n);
    double total = 0.0;
    for (const auto& [ia, ib] : m.matched_pairs) total += s(ia, ib);
    const double scale = std::max(1.0, std::abs(total));
    EXPECT_NEAR(m.total_similarity, total, 1e-12 * scale);
  }
}

TEST(GreedyMatch, Deterministic) {
  linkfed::Rng rng(21);
  const Eigen::MatrixXd s = random_sim(rng, 6, 6);
  const Matching m1 = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
  const Matching m2 = linkfed::greedy_match(CandidatePairSet::from_matrix(s));
  EXPECT_EQ(m1.matched_pairs, m2.matched_pairs);
  EXPECT_DOUBLE_EQ(m1.total_similarity, m2.total_similarity);
}

TEST(GreedyMatch, SparseCandidateListRespected) {
  // Only three candidate pairs; greedy must never match outside them.
  CandidatePairSet s;
  s.n_a = 2;
  s.n_b = 2;
  s.sim = Eigen::MatrixXd::Zero(2, 2);
  s.sim << 0.9, 0.2, 0.0, 0.7;
  s.pairs = {{0, 0}, {0, 1}, {1, 1}};
  const Matching m = linkfed::greedy_match(s);
  ASSERT_EQ(m.matched_pairs.size(), 2u);
  EXPECT_EQ(m.matched_pairs[0], std::make_pair(0, 0));
  EXPECT_EQ(m.matched_pairs[1], std::make_pair(1, 1));
}

TEST(HungarianMatch, TwoByTwoOptimal) {
  Eigen::MatrixXd s(2, 2);
  s << 0.9, 0.8, 0.8, 0.1;
  const Matching m = linkfed::hungarian_match(CandidatePairSet::from_matrix(s));
  ASSERT_EQ(m.matched_pairs.size(), 2u);
  EXPECT_NEAR(m.total_similarity, 1.6, 1e-12);
  std::vector<std::pair<int, int>> sorted = m.matched_pairs;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted[0], std::make_pair(0, 1));
  EXPECT_EQ(sorted[1], std::make_pair(1, 0));
}

TEST(HungarianMatch, IdentityDominantMatrix) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 4);
  s.diagonal().setOnes();
  const Matching m = linkfed::hungarian_match(CandidatePairSet::from_matrix(s));
  ASSERT_EQ(m.matched_pairs.size(), 4u);
  std::vector<std::pair<int, int>> sorted = m.matched_pairs;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 4; ++i) EXPECT_EQ(sorted[i], std::make_pair(i, i));
  EXPECT_NEAR(m.total_similarity, 4.0, 1e-12);
}

TEST(HungarianMatch, MatchesFactorialOracle) {
  linkfed::Rng rng(1234);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 6));
    const Eigen::MatrixXd s = random_sim(rng, n, n);
    const Matching m = linkfed::hungarian_match(CandidatePairSet::from_matrix(s));
    expect_valid(m, n, n);
    ASSERT_EQ(static_cast<int>(m.matched_pairs.size()), n);
    EXPECT_NEAR(m.total_similarity, best_assignment_total(s), 1e-9);
  }
}

TEST(HungarianMatch, FiveByFiveAgainstAll120) {
  linkfed::Rng rng(987);
  const Eigen::MatrixXd s = random_sim(rng, 5, 5);
  const Matching m = linkfed::hungarian_match(CandidatePairSet::from_matrix(s));
  EXPECT_NEAR(m.total_similarity, best_assignment_total(s), 1e-9);
}

TEST(HungarianMatch, ShiftInvariantWithNegativeWeights) {
  linkfed::Rng rng(55);
  const Eigen::MatrixXd s = random_sim(rng, 6, 6);
  const Matching raw = linkfed::hungarian_match(CandidatePairSet::from_matrix(s));
  const Eigen::MatrixXd shifted = s.array() + 10.0;
  const Matching sh = linkfed::hungarian_match(CandidatePairSet::from_matrix(shifted));
  EXPECT_NEAR(sh.total_similarity - 6 * 10.0, raw.total_similarity, 1e-9);
}

TEST(HungarianMatch, CapEnforced) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(5, 5);
  EXPECT_THROW((void)linkfed::hungarian_match(CandidatePairSet::from_matrix(s), 4),
               std::invalid_argument);
}

TEST(ApproximationRatio, GreedyAtLeastHalfOfOptimalOnShiftedWeights) {
  linkfed::Rng rng(20240817);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 10));
    Eigen::MatrixXd cos = random_sim(rng, n, n);  // raw cosines in [-1, 1]
    Eigen::MatrixXd shifted = cos.array() + 1.0;  // nonnegative weights
    const Matching g = linkfed::greedy_match(CandidatePairSet::from_matrix(shifted));
    const Matching h = linkfed::hungarian_match(CandidatePairSet::from_matrix(shifted));
    EXPECT_GE(g.total_similarity, 0.5 * h.total_similarity - 1e-12)
        << "trial " << trial << " n=" << n;
    if (n <= 6) {
      EXPECT_NEAR(h.total_similarity, best_assignment_total(shifted), 1e-9);
    }
  }
}

TEST(CandidatePairSet, ValidationCatchesBadIndexes) {
  CandidatePairSet s;
  s.n_a = 2;
  s.n_b = 2;
  s.sim = Eigen::MatrixXd::Zero(2, 2);
  s.pairs = {{0, 0}, {2, 1}};
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(CandidatePairSet, ValidationCatchesNonFiniteScores) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 2);
  s(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(CandidatePairSet::from_matrix(s).validate(), std::invalid_argument);
}
