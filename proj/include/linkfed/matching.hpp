#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace linkfed {

// Candidate pairs for bipartite matching between n_a left records and n_b
// right records. An empty `pairs` list means the complete candidate set over
// [n_a] x [n_b]; a non-empty list restricts matching to exactly those pairs.
struct CandidatePairSet {
  int n_a = 0;
  int n_b = 0;
  Eigen::MatrixXd sim;  // n_a x n_b similarity scores
  std::vector<std::pair<int, int>> pairs;

  static CandidatePairSet from_matrix(Eigen::MatrixXd scores) {
    CandidatePairSet s;
    s.n_a = static_cast<int>(scores.rows());
    s.n_b = static_cast<int>(scores.cols());
    s.sim = std::move(scores);
    return s;
  }

  bool complete() const { return pairs.empty(); }

  void validate() const {
    if (n_a < 0 || n_b < 0) throw std::invalid_argument("CandidatePairSet: negative side size");
    if (sim.rows() != n_a || sim.cols() != n_b)
      throw std::invalid_argument("CandidatePairSet: similarity matrix shape mismatch");
    if (complete()) {
      if (!sim.allFinite())
        throw std::invalid_argument("CandidatePairSet: non-finite similarity score");
      return;
    }
    for (const auto& [ia, ib] : pairs) {
      if (ia < 0 || ia >= n_a || ib < 0 || ib >= n_b)
        throw std::invalid_argument("CandidatePairSet: pair index out of range");
      if (!std::isfinite(sim(ia, ib)))
        throw std::invalid_argument("CandidatePairSet: non-finite similarity score");
    }
  }
};

struct Matching {
  std::vector<std::pair<int, int>> matched_pairs;
  double total_similarity = 0.0;
  std::vector<int> unmatched_a;
  std::vector<int> unmatched_b;
};

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: vector lengths differ (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                ")");
  if (a.size() == 0) throw std::invalid_argument("cosine_similarity: empty vectors");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// Columns of A and B are records; result(i, j) = cosine of A.col(i), B.col(j).
inline Eigen::MatrixXd cosine_matrix(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.rows() != B.rows()) throw std::invalid_argument("cosine_matrix: feature counts differ");
  Eigen::VectorXd na = A.colwise().norm();
  Eigen::VectorXd nb = B.colwise().norm();
  Eigen::MatrixXd out = A.transpose() * B;
  for (int i = 0; i < out.rows(); ++i) {
    for (int j = 0; j < out.cols(); ++j) {
      const double denom = na[i] * nb[j];
      out(i, j) = denom == 0.0 ? 0.0 : out(i, j) / denom;
    }
  }
  return out;
}

namespace detail {

struct ScoredPair {
  double sim;
  int ia;
  int ib;
};

inline void finalize_unmatched(Matching& m, int n_a, int n_b) {
  std::vector<char> used_a(n_a, 0), used_b(n_b, 0);
  for (const auto& [ia, ib] : m.matched_pairs) {
    used_a[ia] = 1;
    used_b[ib] = 1;
  }
  for (int i = 0; i < n_a; ++i)
    if (!used_a[i]) m.unmatched_a.push_back(i);
  for (int j = 0; j < n_b; ++j)
    if (!used_b[j]) m.unmatched_b.push_back(j);
}

// Shortest-augmenting-path assignment with potentials (Jonker-Volgenant
// style), minimizing `cost` over a square matrix. Returns row -> column.
inline std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Repeatedly takes the highest-similarity remaining candidate pair and removes
// both endpoints. Ties break toward the smallest left index, then the smallest
// right index, so equal inputs always produce the same matching.
inline Matching greedy_match(const CandidatePairSet& s) {
  s.validate();
  std::vector<detail::ScoredPair> scored;
  if (s.complete()) {
    scored.reserve(static_cast<std::size_t>(s.n_a) * static_cast<std::size_t>(s.n_b));
    for (int i = 0; i < s.n_a; ++i)
      for (int j = 0; j < s.n_b; ++j) scored.push_back({s.sim(i, j), i, j});
  } else {
    scored.reserve(s.pairs.size());
    for (const auto& [ia, ib] : s.pairs) scored.push_back({s.sim(ia, ib), ia, ib});
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    if (x.ia != y.ia) return x.ia < y.ia;
    return x.ib < y.ib;
  });
  Matching m;
  std::vector<char> used_a(s.n_a, 0), used_b(s.n_b, 0);
  for (const auto& sp : scored) {
    if (used_a[sp.ia] || used_b[sp.ib]) continue;
    used_a[sp.ia] = 1;
    used_b[sp.ib] = 1;
    m.matched_pairs.emplace_back(sp.ia, sp.ib);
    m.total_similarity += sp.sim;
  }
  detail::finalize_unmatched(m, s.n_a, s.n_b);
  return m;
}

// Exact maximum-total-similarity perfect matching on a balanced complete
// instance; serves as the optimality oracle for small problems.
inline Matching hungarian_match(const CandidatePairSet& s, int cap = 64) {
  s.validate();
  if (!s.complete())
    throw std::invalid_argument("hungarian_match: requires the complete candidate set");
  if (s.n_a != s.n_b)
    throw std::invalid_argument("hungarian_match: requires a balanced instance");
  if (s.n_a > cap)
    throw std::invalid_argument("hungarian_match: instance size " + std::to_string(s.n_a) +
                                " exceeds oracle cap " + std::to_string(cap));
  Matching m;
  if (s.n_a == 0) return m;
  const std::vector<int> row_to_col = detail::min_cost_assignment(-s.sim);
  for (int i = 0; i < s.n_a; ++i) {
    m.matched_pairs.emplace_back(i, row_to_col[i]);
    m.total_similarity += s.sim(i, row_to_col[i]);
  }
  detail::finalize_unmatched(m, s.n_a, s.n_b);
  return m;
}

}  // namespace linkfed
