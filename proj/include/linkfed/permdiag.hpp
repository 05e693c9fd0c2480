#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "linkfed/dataset.hpp"
#include "linkfed/errors.hpp"
#include "linkfed/losses.hpp"
#include "linkfed/rng.hpp"

namespace linkfed {

// A permutation written as an ordered product of position swaps, together
// with the count of swaps that act across classes.
struct TranspositionSequence {
  std::vector<std::pair<int, int>> swaps;
  int T_plus = 0;

  int T() const { return static_cast<int>(swaps.size()); }
  double rho() const { return swaps.empty() ? 0.0 : static_cast<double>(T_plus) / T(); }
};

// Applies the swaps to the identity arrangement: entry i of the result is the
// record whose shuffle block ends up at position i.
inline std::vector<int> replay(const TranspositionSequence& seq, int m) {
  std::vector<int> pi(m);
  std::iota(pi.begin(), pi.end(), 0);
  for (const auto& [u, v] : seq.swaps) {
    if (u < 0 || u >= m || v < 0 || v >= m)
      throw data_error("swap index out of range for " + std::to_string(m) + " positions");
    std::swap(pi[u], pi[v]);
  }
  return pi;
}

// Minimal factorization via cycle decomposition: each cycle, walked from its
// smallest position, contributes length-1 adjacent swaps along the walk.
inline TranspositionSequence factorize(const std::vector<int>& pi, const Eigen::VectorXd& y) {
  const int m = static_cast<int>(pi.size());
  if (y.size() != m) throw data_error("label vector length does not match permutation");
  std::vector<int> count(m, 0);
  for (int v : pi) {
    if (v < 0 || v >= m || count[v]++ > 0) throw data_error("input is not a permutation");
  }
  TranspositionSequence seq;
  std::vector<bool> visited(m, false);
  for (int s = 0; s < m; ++s) {
    if (visited[s]) continue;
    std::vector<int> cycle;
    for (int i = s; !visited[i]; i = pi[i]) {
      visited[i] = true;
      cycle.push_back(i);
    }
    for (std::size_t j = 0; j + 1 < cycle.size(); ++j) {
      seq.swaps.emplace_back(cycle[j], cycle[j + 1]);
      if (y[cycle[j]] != y[cycle[j + 1]]) ++seq.T_plus;
    }
  }
  return seq;
}

// Largest exponent in (0, 1] for which the factorization size satisfies
// T <= (m / xi)^((1 - exponent) / 2); empty when no such exponent exists.
inline std::optional<double> bounded_exponent(double xi, int T, int m) {
  if (T <= 1 || xi <= 0.0) return 1.0;
  const double ratio = m / xi;
  if (ratio <= 1.0) return std::nullopt;
  const double exponent = 1.0 - 2.0 * std::log(static_cast<double>(T)) / std::log(ratio);
  if (exponent <= 0.0) return std::nullopt;
  return std::min(1.0, exponent);
}

// The factor (xi / m)^exponent scaling every downstream guarantee. Zero when
// there are no swaps or no error mass; empty when no valid exponent exists.
inline std::optional<double> c_of_m(double xi, std::optional<double> alpha, int T, int m) {
  if (T == 0 || xi <= 0.0) return 0.0;
  if (!alpha.has_value()) return std::nullopt;
  return std::pow(xi / m, *alpha);
}

struct AccuracyProfile {
  double epsilon = 0.0;  // this estimator always reports the epsilon = 0 profile
  double tau = 0.0;
  double xi = 0.0;
  std::optional<double> alpha = 1.0;
  bool unbounded_violation = false;
};

namespace detail {

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), X.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<int>(r)) = X.row(rows[r]);
  return out;
}

inline Eigen::VectorXd gather_entries(const Eigen::VectorXd& w, const std::vector<int>& rows) {
  Eigen::VectorXd out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[static_cast<int>(r)] = w[rows[r]];
  return out;
}

}  // namespace detail

// Exact zero-epsilon accuracy profile of a swap sequence: tau is the largest
// projection error the sequence can produce along any direction, which for
// epsilon = 0 is the largest Euclidean norm among all intermediate shuffle
// displacements, swapped anchor differences, and moved shuffle differences.
inline AccuracyProfile estimate_accuracy(const LabeledDataset& S,
                                         const TranspositionSequence& seq,
                                         const PartitionSpec& part) {
  S.validate();
  part.validate(S.d());
  const int m = S.m();
  const Eigen::MatrixXd XA = detail::gather_rows(S.X, part.anchor);
  const Eigen::MatrixXd XS = detail::gather_rows(S.X, part.shuffle);

  std::vector<int> cur(m);
  std::iota(cur.begin(), cur.end(), 0);
  double tau = 0.0;
  for (const auto& [u, v] : seq.swaps) {
    if (u < 0 || u >= m || v < 0 || v >= m)
      throw data_error("swap index out of range for " + std::to_string(m) + " positions");
    tau = std::max(tau, (XA.col(u) - XA.col(v)).norm());
    tau = std::max(tau, (XS.col(cur[u]) - XS.col(cur[v])).norm());
    std::swap(cur[u], cur[v]);
    tau = std::max(tau, (XS.col(cur[u]) - XS.col(u)).norm());
    tau = std::max(tau, (XS.col(cur[v]) - XS.col(v)).norm());
  }

  AccuracyProfile profile;
  profile.tau = tau;
  profile.xi = tau / S.max_column_norm();
  profile.alpha = bounded_exponent(profile.xi, seq.T(), m);
  profile.unbounded_violation = !profile.alpha.has_value();
  return profile;
}

struct RefinedAccuracy {
  double epsilon = 0.0;
  double tau = 0.0;
  double xi = 0.0;
};

// Sampled search for a smaller aggregate error: trades epsilon against the
// tau needed to cover every constraint along a pool of probe directions. The
// result is an estimate (the direction pool is finite), reported separately
// from the certified zero-epsilon profile.
inline RefinedAccuracy refine_accuracy(const LabeledDataset& S, const TranspositionSequence& seq,
                                       const PartitionSpec& part, int n_random = 128) {
  S.validate();
  part.validate(S.d());
  const int m = S.m();
  const int d = S.d();
  const Eigen::MatrixXd XA = detail::gather_rows(S.X, part.anchor);
  const Eigen::MatrixXd XS = detail::gather_rows(S.X, part.shuffle);

  struct Entry {
    Eigen::VectorXd err;            // subvector on the owning peer's rows
    const std::vector<int>* rows;   // which rows the subvector lives on
    int i1 = 0, i2 = -1;            // reference records; i2 < 0 means single
  };
  std::vector<Entry> entries;
  std::set<std::pair<int, int>> seen_displacements;
  std::vector<int> cur(m);
  std::iota(cur.begin(), cur.end(), 0);
  for (const auto& [u, v] : seq.swaps) {
    if (u < 0 || u >= m || v < 0 || v >= m)
      throw data_error("swap index out of range for " + std::to_string(m) + " positions");
    entries.push_back({XA.col(u) - XA.col(v), &part.anchor, u, v});
    entries.push_back({XS.col(cur[u]) - XS.col(cur[v]), &part.shuffle, cur[u], cur[v]});
    std::swap(cur[u], cur[v]);
    for (int pos : {u, v}) {
      if (cur[pos] == pos || !seen_displacements.insert({pos, cur[pos]}).second) continue;
      entries.push_back({XS.col(cur[pos]) - XS.col(pos), &part.shuffle, pos, -1});
    }
  }

  std::vector<Eigen::VectorXd> dirs;
  Rng rng(0x2ef1e3d1u);
  for (int k = 0; k < n_random; ++k) dirs.push_back(rng.unit_vector(d));
  for (const Entry& e : entries) {
    const double norm = e.err.norm();
    if (norm == 0.0) continue;
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(d);
    for (std::size_t r = 0; r < e.rows->size(); ++r) padded[(*e.rows)[r]] = e.err[r] / norm;
    dirs.push_back(padded);
  }

  const std::size_t ne = entries.size();
  const std::size_t nw = dirs.size();
  std::vector<double> lhs(ne * nw, 0.0), ref(ne * nw, 0.0);
  for (std::size_t w = 0; w < nw; ++w) {
    for (std::size_t e = 0; e < ne; ++e) {
      const Entry& entry = entries[e];
      lhs[e * nw + w] = std::abs(entry.err.dot(detail::gather_entries(dirs[w], *entry.rows)));
      double r = std::abs(S.X.col(entry.i1).dot(dirs[w]));
      if (entry.i2 >= 0) r = std::max(r, std::abs(S.X.col(entry.i2).dot(dirs[w])));
      ref[e * nw + w] = r;
    }
  }

  const double x_star = S.max_column_norm();
  RefinedAccuracy best;
  best.xi = std::numeric_limits<double>::infinity();
  for (double eps : {0.0,  0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3,
                     0.4,  0.5,  0.6,  0.7,  0.8, 0.9,  1.0}) {
    double tau_needed = 0.0;
    for (std::size_t idx = 0; idx < ne * nw; ++idx)
      tau_needed = std::max(tau_needed, lhs[idx] - eps * ref[idx]);
    const double xi = eps + tau_needed / x_star;
    if (xi < best.xi) {
      best.epsilon = eps;
      best.tau = tau_needed;
      best.xi = xi;
    }
  }
  if (entries.empty()) best = RefinedAccuracy{};  // nothing to cover
  return best;
}

struct KeyParams {
  double delta_theta = 0.0;  // classifier scale: norm of the reference times max feature norm
  double delta_perm = 0.0;   // permutation penalty: sqrt(xi) rho / 4
  double delta_set = 0.0;    // normalized mean-operator norm
  std::optional<double> c_of_m;
};

inline KeyParams compute_key_params(const Eigen::VectorXd& theta0, const LabeledDataset& S,
                                    const AccuracyProfile& profile,
                                    const TranspositionSequence& seq) {
  if (theta0.size() != S.d()) throw config_error("parameter dimension does not match data");
  KeyParams kp;
  const double x_star = S.max_column_norm();
  kp.delta_theta = theta0.norm() * x_star;
  kp.delta_perm = std::sqrt(profile.xi) * seq.rho() / 4.0;
  kp.delta_set = mean_operator(S).norm() / (S.m() * x_star);
  kp.c_of_m = c_of_m(profile.xi, profile.alpha, seq.T(), S.m());
  return kp;
}

namespace detail {

// Probe pool for the curvature floor: the principal axes of the observation
// Gram matrix (these expose flat directions exactly) plus fixed-seed random
// unit directions.
inline std::vector<Eigen::VectorXd> curvature_directions(const Eigen::MatrixXd& X, int n_random) {
  std::vector<Eigen::VectorXd> dirs;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X * X.transpose());
  for (int k = 0; k < es.eigenvectors().cols(); ++k) dirs.push_back(es.eigenvectors().col(k));
  Rng rng(0xca11b3a7u);
  for (int k = 0; k < n_random; ++k) dirs.push_back(rng.unit_vector(static_cast<int>(X.rows())));
  return dirs;
}

}  // namespace detail

// Smallest curvature the data term contributes in the flattest direction.
// For positive c this scans a direction pool for the least stretch variance;
// for negative c the worst case is the top Gram eigenvalue, used exactly.
inline double curvature_floor(const LabeledDataset& S, double c, double epsilon, double tau,
                              int n_random = 256) {
  if (c == 0.0) throw config_error("quadratic coefficient c must be nonzero");
  const int m = S.m();
  if (c < 0.0) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S.X * S.X.transpose(),
                                                            Eigen::EigenvaluesOnly);
    const double mu_sup = es.eigenvalues().maxCoeff() / m;
    return c * ((1.0 + epsilon) * (1.0 + epsilon) * mu_sup + tau * tau);
  }
  double v_min = std::numeric_limits<double>::infinity();
  for (const Eigen::VectorXd& w : detail::curvature_directions(S.X, n_random)) {
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < m; ++i) {
      const double stretch = std::abs(S.X.col(i).dot(w));
      sum += stretch;
      sum_sq += stretch * stretch;
    }
    const double mean = sum / m;
    v_min = std::min(v_min, sum_sq / m - mean * mean);
  }
  v_min = std::max(v_min, 0.0);  // clip eigen-direction roundoff
  return c * (1.0 - epsilon) * (1.0 - epsilon) * v_min;
}

struct ClauseReport {
  bool pass = false;
  double margin = 0.0;
};

struct CalibrationReport {
  ClauseReport regularization;  // ridge strength covers the worst-case curvature
  ClauseReport data_size;       // m >= 4 xi
  double curvature_floor = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;

  bool pass() const { return regularization.pass && data_size.pass; }
};

namespace detail {

inline double regularization_rhs(double b, double c) {
  double bound = 1.0 / (2.0 * std::abs(c));
  if (b != 0.0) bound = std::min(bound, 1.0 / std::abs(b));
  return 0.5 * bound;
}

}  // namespace detail

inline CalibrationReport check_calibration(const LabeledDataset& S, const TaylorLossSpec& spec,
                                           const AccuracyProfile& profile) {
  S.validate();
  if (spec.c == 0.0) throw config_error("quadratic coefficient c must be nonzero");
  CalibrationReport rep;
  rep.curvature_floor = curvature_floor(S, spec.c, profile.epsilon, profile.tau);
  rep.rhs = detail::regularization_rhs(spec.b, spec.c);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.Gamma, Eigen::EigenvaluesOnly);
  const double x_star = S.max_column_norm();
  const double denom = rep.curvature_floor / 2.0 + spec.gamma * es.eigenvalues().minCoeff();
  if (denom <= 0.0) {
    rep.lhs = std::numeric_limits<double>::infinity();
    rep.regularization.pass = false;
    rep.regularization.margin = -std::numeric_limits<double>::infinity();
  } else {
    rep.lhs = x_star * x_star / denom;
    rep.regularization.pass = rep.lhs <= rep.rhs;
    rep.regularization.margin = rep.rhs - rep.lhs;
  }
  rep.data_size.margin = S.m() - 4.0 * profile.xi;
  rep.data_size.pass = rep.data_size.margin >= 0.0;
  return rep;
}

// Smallest ridge weight that satisfies the regularization clause, from
// solving the clause for gamma at equality.
inline double min_gamma_for_calibration(const LabeledDataset& S, const TaylorLossSpec& spec,
                                        const AccuracyProfile& profile) {
  if (spec.c == 0.0) throw config_error("quadratic coefficient c must be nonzero");
  const double floor = curvature_floor(S, spec.c, profile.epsilon, profile.tau);
  const double rhs = detail::regularization_rhs(spec.b, spec.c);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.Gamma, Eigen::EigenvaluesOnly);
  const double lambda_min = es.eigenvalues().minCoeff();
  if (lambda_min <= 0.0) throw config_error("regularizer matrix must be positive definite");
  const double x_star = S.max_column_norm();
  return std::max(0.0, (x_star * x_star / rhs - floor / 2.0) / lambda_min);
}

}  // namespace linkfed
