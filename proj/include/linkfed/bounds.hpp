#pragma once

// Exact replay of how the regularized Taylor-loss minimizer moves when pairs
// of shuffle-side blocks are swapped, plus the closed-form budgets that cap
// that movement: relative drift, the margin above which decisions cannot
// flip, the training-loss gap, and a generalization estimate.
//
// Each swap changes the observation Gram matrix by a symmetric rank-two
// term, so the system inverse advances by two Sherman-Morrison steps folded
// into a single update V' = V + V U V. The chain keeps dense re-inversions
// as the authoritative values and tracks how far the rank-two recursion
// strays from them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linkfed/dataset.hpp"
#include "linkfed/errors.hpp"
#include "linkfed/losses.hpp"
#include "linkfed/permdiag.hpp"

namespace linkfed {

struct DriftStep {
  int u = 0, v = 0;          // swapped positions
  int u_bar = 0, v_bar = 0;  // records sitting at those positions beforehand
  Eigen::VectorXd a_plus;    // anchor-block difference of the two positions, zero-padded
  Eigen::VectorXd b_plus;    // shuffle-block difference of the two moved records, zero-padded
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;  // quadratic forms of a_plus, b_plus under V
  double zeta = 0.0;                    // rank-two update determinant factor
  Eigen::MatrixXd U;       // symmetric update core: V' = V + V U V
  Eigen::MatrixXd Lambda;  // V U, the multiplicative part of the parameter step
  Eigen::VectorXd eps;     // mean-operator increment, (y_v - y_u) b_plus
  Eigen::VectorXd lambda;  // additive forcing, nu V' eps
  double lambda_max = 0.0;         // largest eigenvalue of Lambda
  double min_transfer_eig = 0.0;   // smallest eigenvalue of I + Lambda

  double max_abs_c() const {
    return std::max({std::abs(c0), std::abs(c1), std::abs(c2)});
  }
};

struct DriftChain {
  double nu = 0.0;        // forcing scale, -b / (2|c|)
  double nu_prime = 0.0;  // effective ridge weight, m gamma / |c|
  double sign_c = 1.0;
  std::vector<Eigen::MatrixXd> V;      // dense system inverses, one per state
  std::vector<Eigen::VectorXd> mu;     // mean operators, one per state
  std::vector<Eigen::VectorXd> theta;  // minimizers nu V mu, one per state
  std::vector<DriftStep> steps;
  double max_sm_rel_error = 0.0;  // worst rank-two-recursion vs dense-inverse gap
  double xhat_star = 0.0;         // largest column norm seen across all states
  std::vector<std::string> warnings;

  int T() const { return static_cast<int>(steps.size()); }
};

namespace detail {

inline Eigen::VectorXd padded_difference(const Eigen::MatrixXd& X, const std::vector<int>& rows,
                                         int col_a, int col_b) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  for (int r : rows) out[r] = X(r, col_a) - X(r, col_b);
  return out;
}

struct SymmetricInverse {
  Eigen::MatrixXd inverse;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
};

inline SymmetricInverse invert_symmetric(const Eigen::MatrixXd& M, int state) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  if (es.info() != Eigen::Success)
    throw config_error("eigendecomposition failed at state " + std::to_string(state));
  SymmetricInverse out;
  out.eigenvalues = es.eigenvalues();
  out.eigenvectors = es.eigenvectors();
  const double scale = out.eigenvalues.cwiseAbs().maxCoeff();
  if (out.eigenvalues.cwiseAbs().minCoeff() <= 1e-12 * std::max(1.0, scale))
    throw config_error("drift system matrix is singular at state " + std::to_string(state));
  out.inverse = out.eigenvectors * out.eigenvalues.cwiseInverse().asDiagonal() *
                out.eigenvectors.transpose();
  return out;
}

// U such that (V^{-1} - s(ab' + ba'))^{-1} = V + V U V; throws when either
// of the two folded rank-one updates has a vanishing pivot.
inline Eigen::MatrixXd rank_two_core(const Eigen::MatrixXd& V, const Eigen::VectorXd& a,
                                     const Eigen::VectorXd& b, double sign, int step,
                                     double* out_c0 = nullptr, double* out_c1 = nullptr,
                                     double* out_c2 = nullptr, double* out_zeta = nullptr) {
  const Eigen::VectorXd Va = V * a;
  const Eigen::VectorXd Vb = V * b;
  const double c0 = a.dot(Va);
  const double c1 = a.dot(Vb);
  const double c2 = b.dot(Vb);
  const double pivot = 1.0 - sign * c1;
  const double zeta = pivot * pivot - c0 * c2;
  const double scale = 1.0 + std::abs(c0 * c2) + pivot * pivot;
  if (std::abs(pivot) <= 1e-12 * (1.0 + std::abs(c1)))
    throw config_error("rank-two update pivot vanishes at swap " + std::to_string(step) +
                       " (pivot " + std::to_string(pivot) + ")");
  if (std::abs(zeta) <= 1e-12 * scale)
    throw config_error("rank-two update is singular at swap " + std::to_string(step) +
                       " (determinant factor " + std::to_string(zeta) + ")");
  if (out_c0) *out_c0 = c0;
  if (out_c1) *out_c1 = c1;
  if (out_c2) *out_c2 = c2;
  if (out_zeta) *out_zeta = zeta;
  return (c2 * (a * a.transpose()) + c0 * (b * b.transpose()) +
          (sign - c1) * (a * b.transpose() + b * a.transpose())) /
         zeta;
}

}  // namespace detail

inline DriftChain build_drift_chain(const LabeledDataset& S, const TranspositionSequence& seq,
                                    const TaylorLossSpec& spec, const PartitionSpec& part) {
  S.validate();
  spec.validate(S.d());
  part.validate(S.d());
  const int d = S.d();
  const int m = S.m();
  const int T = seq.T();
  if (T > 64)
    throw config_error("drift replay supports at most 64 swaps, got " + std::to_string(T));
  if (d > 256)
    throw config_error("drift replay supports at most 256 features, got " + std::to_string(d));
  for (const auto& sw : seq.swaps)
    if (sw.first < 0 || sw.first >= m || sw.second < 0 || sw.second >= m ||
        sw.first == sw.second)
      throw config_error("swap positions out of range");

  DriftChain chain;
  chain.sign_c = spec.c > 0.0 ? 1.0 : -1.0;
  chain.nu = -spec.b / (2.0 * std::abs(spec.c));
  chain.nu_prime = m * spec.gamma / std::abs(spec.c);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gamma_es(spec.Gamma);
  const double gamma_min = gamma_es.eigenvalues().minCoeff();
  const double v_cap = 1.0 / (chain.nu_prime * gamma_min);
  const auto check_spectrum_cap = [&](const detail::SymmetricInverse& sys, int state) {
    if (chain.sign_c < 0.0 || sys.eigenvalues.minCoeff() <= 0.0) return;
    const double v_max = sys.eigenvalues.cwiseInverse().maxCoeff();
    if (v_max > v_cap * (1.0 + 1e-9))
      chain.warnings.push_back("state " + std::to_string(state) +
                               " spectrum exceeds its ridge cap estimate");
  };

  Eigen::MatrixXd Xhat = S.X;
  std::vector<int> cur(m);
  std::iota(cur.begin(), cur.end(), 0);
  const auto system_matrix = [&]() {
    return (chain.sign_c * (Xhat * Xhat.transpose()) + chain.nu_prime * spec.Gamma).eval();
  };

  detail::SymmetricInverse sys = detail::invert_symmetric(system_matrix(), 0);
  check_spectrum_cap(sys, 0);
  chain.V.push_back(sys.inverse);
  chain.mu.push_back(Xhat * S.y);
  chain.theta.push_back(chain.nu * (chain.V[0] * chain.mu[0]));
  chain.xhat_star = S.max_column_norm();

  Eigen::MatrixXd recursive_V = sys.inverse;

  for (int s = 0; s < T; ++s) {
    const int u = seq.swaps[s].first;
    const int v = seq.swaps[s].second;
    DriftStep st;
    st.u = u;
    st.v = v;
    st.u_bar = cur[u];
    st.v_bar = cur[v];
    st.a_plus = detail::padded_difference(S.X, part.anchor, u, v);
    st.b_plus = detail::padded_difference(S.X, part.shuffle, st.u_bar, st.v_bar);

    st.U = detail::rank_two_core(chain.V[s], st.a_plus, st.b_plus, chain.sign_c, s, &st.c0,
                                 &st.c1, &st.c2, &st.zeta);
    st.Lambda = chain.V[s] * st.U;

    // The self-contained recursion advances with scalars from its own state.
    const Eigen::MatrixXd rec_U =
        detail::rank_two_core(recursive_V, st.a_plus, st.b_plus, chain.sign_c, s);
    recursive_V += recursive_V * rec_U * recursive_V;

    for (int r : part.shuffle) std::swap(Xhat(r, u), Xhat(r, v));
    std::swap(cur[u], cur[v]);
    chain.xhat_star = std::max({chain.xhat_star, Xhat.col(u).norm(), Xhat.col(v).norm()});

    // Eigenvalues of Lambda via a symmetric similarity when the state is
    // positive definite, otherwise through the general solver.
    if (sys.eigenvalues.minCoeff() > 0.0) {
      const Eigen::MatrixXd v_half = sys.eigenvectors *
                                     sys.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() *
                                     sys.eigenvectors.transpose();
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sym(v_half * st.U * v_half);
      st.lambda_max = sym.eigenvalues().maxCoeff();
      st.min_transfer_eig = 1.0 + sym.eigenvalues().minCoeff();
    } else {
      const Eigen::EigenSolver<Eigen::MatrixXd> ges(st.Lambda);
      st.lambda_max = ges.eigenvalues().real().maxCoeff();
      st.min_transfer_eig = 1.0 + ges.eigenvalues().real().minCoeff();
    }

    sys = detail::invert_symmetric(system_matrix(), s + 1);
    check_spectrum_cap(sys, s + 1);
    chain.V.push_back(sys.inverse);
    chain.max_sm_rel_error =
        std::max(chain.max_sm_rel_error,
                 (recursive_V - sys.inverse).norm() / sys.inverse.norm());
    chain.mu.push_back(Xhat * S.y);
    st.eps = (S.y[v] - S.y[u]) * st.b_plus;
    st.lambda = chain.nu * (chain.V[s + 1] * st.eps);
    chain.theta.push_back(chain.nu * (chain.V[s + 1] * chain.mu[s + 1]));
    chain.steps.push_back(std::move(st));
  }
  return chain;
}

struct DriftVerification {
  double max_step_residual = 0.0;  // recursion checked one swap at a time
  double unrolled_residual = 0.0;  // product-form reconstruction of the endpoint

  double max_residual() const { return std::max(max_step_residual, unrolled_residual); }
};

// Checks the replayed minimizers against independently solved endpoints and
// against both evaluation orders of the drift recursion. Residuals are
// normalized by 1 + the reference norm.
inline DriftVerification verify_exact_drift(const DriftChain& chain,
                                            const Eigen::VectorXd& theta0,
                                            const Eigen::VectorXd& thetaT) {
  if (chain.theta.empty()) throw config_error("drift chain has no states");
  const int d = static_cast<int>(chain.theta.front().size());
  if (theta0.size() != d || thetaT.size() != d)
    throw config_error("endpoint dimensions do not match the chain");
  const auto normed = [](const Eigen::VectorXd& diff, const Eigen::VectorXd& ref) {
    return diff.norm() / (1.0 + ref.norm());
  };

  DriftVerification out;
  out.max_step_residual = std::max(normed(chain.theta.front() - theta0, theta0),
                                   normed(chain.theta.back() - thetaT, thetaT));
  const int T = chain.T();
  for (int s = 0; s < T; ++s) {
    const Eigen::VectorXd predicted =
        chain.theta[s] + chain.steps[s].Lambda * chain.theta[s] + chain.steps[s].lambda;
    out.max_step_residual =
        std::max(out.max_step_residual, normed(chain.theta[s + 1] - predicted, chain.theta[s + 1]));
  }

  // Accumulate the transfer products back to front, so the forcing terms are
  // combined in the opposite order from the stepwise recursion above.
  Eigen::MatrixXd transfer = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd forcing = Eigen::VectorXd::Zero(d);
  for (int s = T - 1; s >= 0; --s) {
    forcing += transfer * chain.steps[s].lambda;
    transfer = (transfer * (Eigen::MatrixXd::Identity(d, d) + chain.steps[s].Lambda)).eval();
  }
  const Eigen::VectorXd rebuilt = transfer * theta0 + forcing;
  out.unrolled_residual = normed(rebuilt - thetaT, thetaT);
  return out;
}

struct DeviationBound {
  double t2_form = 0.0;               // quadratic-in-swap-count budget
  std::optional<double> cm_form;      // boundedness-exponent budget, when available

  double bound() const { return cm_form ? std::min(t2_form, *cm_form) : t2_form; }
};

inline DeviationBound deviation_bound(const KeyParams& kp, double xi, int T, int m) {
  if (kp.delta_theta <= 0.0)
    throw std::invalid_argument("relative drift needs a nonzero reference classifier");
  if (m <= 0) throw std::invalid_argument("the observation count must be positive");
  DeviationBound out;
  const double factor = 1.0 + kp.delta_perm / kp.delta_theta;
  out.t2_form = xi / m * static_cast<double>(T) * static_cast<double>(T) * factor;
  if (kp.c_of_m) out.cm_form = *kp.c_of_m * factor;
  return out;
}

// Decisions of the drifted classifier agree with the reference on every
// observation whose reference margin exceeds this threshold.
inline std::optional<double> immunity_threshold(const KeyParams& kp) {
  if (!kp.c_of_m) return std::nullopt;
  return *kp.c_of_m * (kp.delta_theta + kp.delta_perm);
}

struct LossGapBound {
  double A = 0.0;  // sensitivity factor combining mean-operator and curvature terms
  std::optional<double> rhs;
};

inline LossGapBound loss_gap_bound(const KeyParams& kp, const TaylorLossSpec& spec,
                                   double x_star, int d) {
  if (x_star <= 0.0) throw std::invalid_argument("the feature-norm cap must be positive");
  LossGapBound out;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.Gamma);
  const double gamma_max = es.eigenvalues().maxCoeff();
  out.A = std::abs(spec.b) * kp.delta_set +
          (3.0 * kp.delta_theta + 2.0 * kp.delta_perm) *
              (std::abs(spec.c) + d * spec.gamma * gamma_max / (x_star * x_star));
  if (kp.c_of_m) out.rhs = *kp.c_of_m * (kp.delta_theta + kp.delta_perm) * out.A;
  return out;
}

struct GeneralizationReport {
  double theta_star = 0.0;  // ridge-implied cap on the reference norm
  double L = 0.0;           // Lipschitz scale of the loss over that ball
  double R_star_m = 0.0;    // complexity of the linear class at this sample size
  double Q = 0.0;           // clean-data estimate: training loss + complexity + confidence
  std::optional<double> penalty;  // extra term paid for resolution errors
  std::optional<double> rhs;
  std::vector<std::string> warnings;
};

inline GeneralizationReport generalization_report(const KeyParams& kp,
                                                  const TaylorLossSpec& spec, double A,
                                                  double loss_at_theta0, double theta0_norm,
                                                  double x_star, int m, double delta,
                                                  std::optional<double> L_override = std::nullopt) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("the confidence level must lie strictly between 0 and 1");
  if (m <= 0) throw std::invalid_argument("the observation count must be positive");
  if (x_star <= 0.0) throw std::invalid_argument("the feature-norm cap must be positive");
  GeneralizationReport rep;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.Gamma);
  const double gamma_min = es.eigenvalues().minCoeff();
  rep.theta_star = std::abs(spec.b) * x_star / (2.0 * spec.gamma * gamma_min);
  if (theta0_norm > rep.theta_star * (1.0 + 1e-9))
    rep.warnings.push_back(
        spec.c > 0.0 ? "solved norm exceeds its ridge budget; check the solver inputs"
                     : "solved norm exceeds the ridge budget, which is only an estimate "
                       "when the data term is concave");
  rep.L = L_override.value_or(std::abs(spec.b) * x_star +
                              2.0 * std::abs(spec.c) * x_star * x_star * rep.theta_star);
  rep.R_star_m = x_star * rep.theta_star / std::sqrt(static_cast<double>(m));
  rep.Q = loss_at_theta0 + 2.0 * rep.L * rep.R_star_m +
          std::sqrt(std::log(2.0 / delta) / (2.0 * m));
  if (kp.c_of_m) {
    rep.penalty = *kp.c_of_m * (kp.delta_theta + kp.delta_perm) *
                  (A + 2.0 * rep.L / std::sqrt(static_cast<double>(m)));
    rep.rhs = rep.Q + *rep.penalty;
  }
  return rep;
}

// Container the run harness fills with theoretical budgets next to their
// observed counterparts. Optional fields stay empty when no valid
// boundedness exponent exists; `suppressed` records why.
struct BoundReport {
  double deviation_observed = 0.0;
  double deviation_t2 = 0.0;
  std::optional<double> deviation_rhs;
  std::optional<double> immunity_kappa;
  int immunity_errors_above = 0;
  double loss_gap_observed = 0.0;
  double loss_gap_A = 0.0;
  std::optional<double> loss_gap_rhs;
  double generalization_Q = 0.0;
  std::optional<double> generalization_rhs;
  std::vector<std::string> suppressed;
};

}  // namespace linkfed
