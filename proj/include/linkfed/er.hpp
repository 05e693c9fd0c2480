#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "linkfed/dataset.hpp"
#include "linkfed/errors.hpp"
#include "linkfed/matching.hpp"
#include "linkfed/rng.hpp"

namespace linkfed {

// Everything a resolution strategy may look at (the two peer views) plus the
// ground-truth column map, which is used only to assemble the joined dataset
// and score the result afterwards.
struct ErContext {
  PeerView a;
  PeerView b;
  std::vector<int> b_col_to_truth;
  std::vector<std::string> feature_names;
};

struct ErMatch {
  Matching matching;
  std::vector<std::string> warnings;
  int label_swaps = 0;         // label-noise strategy: swaps actually performed
  int learned_discarded = -1;  // learned strategy: pairs dropped below the median
};

struct ResolvedSample {
  LabeledDataset dataset;        // joined view, anchor labels in position order
  std::vector<int> permutation;  // position i's shuffle block is truth record permutation[i]
  double class_mismatch_rate = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

inline void require_shared_signal(const PeerView& a, const PeerView& b) {
  if (a.shared.rows() == 0 || b.shared.rows() == 0)
    throw config_error("resolution needs a shared matching signal on both peers");
  if (a.m() != b.m())
    throw data_error("peers disagree on record count: " + std::to_string(a.m()) + " vs " +
                     std::to_string(b.m()));
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<int>& cols) {
  Eigen::MatrixXd out(m.rows(), cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<int>(c)) = m.col(cols[c]);
  return out;
}

inline void append_greedy_block(const PeerView& a, const PeerView& b, const std::vector<int>& ia,
                                const std::vector<int>& ib,
                                std::vector<std::pair<int, int>>& pairs) {
  if (ia.empty() || ib.empty()) return;
  const Eigen::MatrixXd sim =
      cosine_matrix(select_columns(a.shared, ia), select_columns(b.shared, ib));
  const Matching local = greedy_match(CandidatePairSet::from_matrix(sim));
  for (const auto& [la, lb] : local.matched_pairs) pairs.emplace_back(ia[la], ib[lb]);
}

// Greedy matching within each claimed class, then a greedy residual pass over
// whatever the class blocks could not absorb, so the result is a bijection
// even when the two sides disagree on class counts.
inline ErMatch per_class_with_labels(const PeerView& a, const PeerView& b,
                                     const Eigen::VectorXd& b_labels) {
  require_shared_signal(a, b);
  if (!a.labels) throw config_error("anchor view must carry labels");
  const int m = a.m();

  std::vector<int> a_pos, a_neg, b_pos, b_neg;
  for (int i = 0; i < m; ++i) ((*a.labels)[i] > 0 ? a_pos : a_neg).push_back(i);
  for (int j = 0; j < m; ++j) (b_labels[j] > 0 ? b_pos : b_neg).push_back(j);

  ErMatch out;
  std::vector<std::pair<int, int>>& pairs = out.matching.matched_pairs;
  append_greedy_block(a, b, a_pos, b_pos, pairs);
  append_greedy_block(a, b, a_neg, b_neg, pairs);

  std::vector<bool> used_a(m, false), used_b(m, false);
  for (const auto& [ia, ib] : pairs) {
    used_a[ia] = true;
    used_b[ib] = true;
  }
  std::vector<int> rest_a, rest_b;
  for (int i = 0; i < m; ++i) {
    if (!used_a[i]) rest_a.push_back(i);
    if (!used_b[i]) rest_b.push_back(i);
  }
  if (rest_a.size() != rest_b.size())
    throw data_error("class blocks left unbalanced residuals");
  append_greedy_block(a, b, rest_a, rest_b, pairs);

  std::sort(pairs.begin(), pairs.end());
  double total = 0.0;
  for (const auto& [ia, ib] : pairs)
    total += cosine_similarity(a.shared.col(ia), b.shared.col(ib));
  out.matching.total_similarity = total;
  return out;
}

}  // namespace detail

// Complete greedy cosine matching over the shared signal; labels play no role.
inline ErMatch match_greedy(const PeerView& a, const PeerView& b) {
  detail::require_shared_signal(a, b);
  ErMatch out;
  out.matching = greedy_match(CandidatePairSet::from_matrix(cosine_matrix(a.shared, b.shared)));
  std::sort(out.matching.matched_pairs.begin(), out.matching.matched_pairs.end());
  return out;
}

// Class-aware variant driven by the labels the shuffle peer holds.
inline ErMatch match_per_class(const PeerView& a, const PeerView& b) {
  if (!b.labels) throw config_error("class-aware resolution needs labels on the shuffle peer");
  return detail::per_class_with_labels(a, b, *b.labels);
}

// Class-aware matching where the shuffle peer holds no labels at all: an
// initial greedy match propagates anchor labels to the confident half, a
// nearest-neighbor vote inside the shuffle peer labels the rest, and the
// class blocks are rematched under those predictions.
inline ErMatch match_learned(const PeerView& a, const PeerView& b, int k) {
  detail::require_shared_signal(a, b);
  if (!a.labels) throw config_error("anchor view must carry labels");
  if (k < 1) throw config_error("neighbor count must be at least 1");
  const int m = a.m();
  ErMatch out;

  const Eigen::MatrixXd sim = cosine_matrix(a.shared, b.shared);
  const Matching first = greedy_match(CandidatePairSet::from_matrix(sim));

  std::vector<double> pair_sims;
  pair_sims.reserve(m);
  for (const auto& [ia, ib] : first.matched_pairs) pair_sims.push_back(sim(ia, ib));
  std::vector<double> sorted = pair_sims;
  std::sort(sorted.begin(), sorted.end());
  const double median = (sorted[(m - 1) / 2] + sorted[m / 2]) / 2.0;

  Eigen::VectorXd predicted = Eigen::VectorXd::Zero(m);
  std::vector<int> labeled, unlabeled;
  std::vector<bool> has_label(m, false);
  for (std::size_t p = 0; p < first.matched_pairs.size(); ++p) {
    const auto& [ia, ib] = first.matched_pairs[p];
    if (pair_sims[p] < median) continue;  // ties with the median survive
    predicted[ib] = (*a.labels)[ia];
    has_label[ib] = true;
  }
  for (int j = 0; j < m; ++j) (has_label[j] ? labeled : unlabeled).push_back(j);
  out.learned_discarded = static_cast<int>(unlabeled.size());

  if (!unlabeled.empty()) {
    int k_used = k;
    if (k_used > static_cast<int>(labeled.size())) {
      k_used = static_cast<int>(labeled.size());
      out.warnings.push_back("neighbor count clamped to " + std::to_string(k_used) +
                             " labeled records");
    }
    const Eigen::MatrixXd full = b.full_view();
    for (int u : unlabeled) {
      std::vector<std::pair<double, int>> dist;
      dist.reserve(labeled.size());
      for (int l : labeled) dist.emplace_back((full.col(u) - full.col(l)).norm(), l);
      std::sort(dist.begin(), dist.end());
      double vote = 0.0;
      for (int n = 0; n < k_used; ++n) vote += predicted[dist[n].second];
      predicted[u] = vote >= 0.0 ? 1.0 : -1.0;  // exact tie defaults to the positive class
    }
  }

  ErMatch final_match = detail::per_class_with_labels(a, b, predicted);
  final_match.warnings.insert(final_match.warnings.begin(), out.warnings.begin(),
                              out.warnings.end());
  final_match.learned_discarded = out.learned_discarded;
  return final_match;
}

// Class-aware matching under corrupted labels: m * p_prime swaps each exchange
// the claimed labels of one positive and one negative record, then the usual
// class-aware pass runs on the corrupted claims.
inline ErMatch match_noisy(const PeerView& a, const PeerView& b, double p_prime,
                           std::uint64_t seed) {
  if (p_prime < 0.0 || p_prime > 1.0) throw config_error("label noise rate must lie in [0, 1]");
  if (!b.labels) throw config_error("class-aware resolution needs labels on the shuffle peer");
  Eigen::VectorXd noisy = *b.labels;
  Rng rng(seed);
  const int performed = detail::swap_class_labels(noisy, p_prime, rng);
  ErMatch out = detail::per_class_with_labels(a, b, noisy);
  out.label_swaps = performed;
  const long long target = std::llround(a.m() * p_prime);
  if (performed < target)
    out.warnings.push_back("label swaps exhausted a class after " + std::to_string(performed) +
                           " of " + std::to_string(target));
  return out;
}

// Builds the joined training view from a bijective matching. Anchor rows keep
// their true record, shuffle rows carry the matched record's clean values,
// labels stay with the anchor positions.
inline ResolvedSample resolve(const ErContext& ctx, const ErMatch& match) {
  if (!ctx.a.labels) throw config_error("anchor view must carry labels");
  const int m = ctx.a.m();
  if (static_cast<int>(match.matching.matched_pairs.size()) != m)
    throw data_error("resolution matched " + std::to_string(match.matching.matched_pairs.size()) +
                     " of " + std::to_string(m) + " records");
  if (static_cast<int>(ctx.b_col_to_truth.size()) != m)
    throw data_error("column map size does not match record count");

  std::vector<int> pi(m, -1);
  std::vector<bool> used_b(m, false);
  for (const auto& [ia, ib] : match.matching.matched_pairs) {
    if (ia < 0 || ia >= m || ib < 0 || ib >= m || pi[ia] != -1 || used_b[ib])
      throw data_error("resolution is not a bijection");
    pi[ia] = ctx.b_col_to_truth[ib];
    used_b[ib] = true;
  }

  const int d = static_cast<int>(ctx.a.own_ids.size() + ctx.b.own_ids.size());
  std::vector<int> coverage(d, 0);
  for (int r : ctx.a.own_ids)
    if (r >= 0 && r < d) coverage[r]++;
  for (int r : ctx.b.own_ids)
    if (r >= 0 && r < d) coverage[r]++;
  for (int r = 0; r < d; ++r)
    if (coverage[r] != 1) throw data_error("peer views do not partition the feature rows");

  ResolvedSample res;
  res.permutation = pi;
  res.warnings = match.warnings;
  res.dataset.X.resize(d, m);
  res.dataset.y = *ctx.a.labels;
  if (!ctx.feature_names.empty()) res.dataset.feature_names = ctx.feature_names;

  std::vector<int> b_col_of_position(m, -1);
  for (const auto& [ia, ib] : match.matching.matched_pairs) b_col_of_position[ia] = ib;
  for (int i = 0; i < m; ++i) {
    for (std::size_t r = 0; r < ctx.a.own_ids.size(); ++r)
      res.dataset.X(ctx.a.own_ids[r], i) = ctx.a.own(static_cast<int>(r), i);
    for (std::size_t r = 0; r < ctx.b.own_ids.size(); ++r)
      res.dataset.X(ctx.b.own_ids[r], i) = ctx.b.own(static_cast<int>(r), b_col_of_position[i]);
  }

  int cross = 0;
  for (int i = 0; i < m; ++i) cross += (*ctx.a.labels)[i] != (*ctx.a.labels)[pi[i]] ? 1 : 0;
  res.class_mismatch_rate = static_cast<double>(cross) / m;
  return res;
}

inline ResolvedSample greedy_er(const ErContext& ctx) {
  return resolve(ctx, match_greedy(ctx.a, ctx.b));
}

inline ResolvedSample greedy_er_per_class(const ErContext& ctx) {
  return resolve(ctx, match_per_class(ctx.a, ctx.b));
}

inline ResolvedSample greedy_er_learned_classes(const ErContext& ctx, int k) {
  return resolve(ctx, match_learned(ctx.a, ctx.b, k));
}

inline ResolvedSample greedy_er_noisy_classes(const ErContext& ctx, double p_prime,
                                              std::uint64_t seed) {
  return resolve(ctx, match_noisy(ctx.a, ctx.b, p_prime, seed));
}

// Reference resolution from the ground-truth column map.
inline ResolvedSample ideal_er(const ErContext& ctx) {
  const int m = ctx.a.m();
  ErMatch match;
  std::vector<int> col_of_truth(m, -1);
  for (int j = 0; j < m; ++j) {
    const int truth = ctx.b_col_to_truth[j];
    if (truth < 0 || truth >= m || col_of_truth[truth] != -1)
      throw data_error("ground-truth column map is not a permutation");
    col_of_truth[truth] = j;
  }
  for (int i = 0; i < m; ++i) match.matching.matched_pairs.emplace_back(i, col_of_truth[i]);
  return resolve(ctx, match);
}

}  // namespace linkfed
