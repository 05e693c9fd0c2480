#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "linkfed/dataset.hpp"
#include "linkfed/errors.hpp"

namespace linkfed {

// A convex margin loss together with its value and first two derivatives at
// the origin, which is all the quadratic surrogate machinery needs.
struct SourceLoss {
  std::string name;
  std::function<double(double)> F;
  double F0 = 0.0;  // F(0)
  double F1 = 0.0;  // F'(0)
  double F2 = 0.0;  // F''(0)
  bool convex = true;
  bool rspl = true;  // proper scoring rule with invertible canonical link
};

inline SourceLoss source_loss(const std::string& name) {
  SourceLoss loss;
  loss.name = name;
  if (name == "logistic") {
    loss.F = [](double z) { return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))); };
    loss.F0 = std::log(2.0);
    loss.F1 = -0.5;
    loss.F2 = 0.25;
  } else if (name == "matsushita") {
    loss.F = [](double z) { return (std::sqrt(1.0 + z * z) - z) / 2.0; };
    loss.F0 = 0.5;
    loss.F1 = -0.5;
    loss.F2 = 0.5;
  } else if (name == "square") {
    loss.F = [](double z) { return (1.0 - z) * (1.0 - z); };
    loss.F0 = 1.0;
    loss.F1 = -2.0;
    loss.F2 = 2.0;
  } else {
    throw config_error("unknown loss '" + name + "', expected logistic, matsushita or square");
  }
  return loss;
}

// Quadratic surrogate a + (b/m) sum y_i theta.x_i + (c/m) sum (y_i theta.x_i)^2
// plus the ridge gamma theta' Gamma theta.
struct TaylorLossSpec {
  double a = 0.0;
  double b = -1.0;
  double c = 0.5;
  double gamma = 0.0;
  Eigen::MatrixXd Gamma;

  static TaylorLossSpec from_source(const SourceLoss& loss, double gamma,
                                    const Eigen::MatrixXd& Gamma) {
    TaylorLossSpec spec;
    spec.a = loss.F0;
    spec.b = loss.F1;
    spec.c = loss.F2 / 2.0;
    spec.gamma = gamma;
    spec.Gamma = Gamma;
    return spec;
  }

  void validate(int d) const {
    if (c == 0.0) throw config_error("quadratic coefficient c must be nonzero");
    if (!(gamma > 0.0)) throw config_error("ridge weight gamma must be positive");
    if (Gamma.rows() != d || Gamma.cols() != d)
      throw config_error("regularizer is " + std::to_string(Gamma.rows()) + "x" +
                         std::to_string(Gamma.cols()) + ", expected " + std::to_string(d) + "x" +
                         std::to_string(d));
    const double scale = std::max(1.0, Gamma.cwiseAbs().maxCoeff());
    if ((Gamma - Gamma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw config_error("regularizer matrix must be symmetric");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gamma,
                                                            Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw config_error("regularizer matrix must be positive definite, smallest eigenvalue " +
                         std::to_string(es.eigenvalues().minCoeff()));
  }
};

// sum_i y_i x_i, the sufficient statistic of the linear term.
inline Eigen::VectorXd mean_operator(const LabeledDataset& ds) {
  return ds.X * ds.y;
}

inline double taylor_loss_value(const LabeledDataset& ds, const TaylorLossSpec& spec,
                                const Eigen::VectorXd& theta) {
  if (theta.size() != ds.d()) throw config_error("parameter dimension does not match data");
  const Eigen::VectorXd scores = ds.X.transpose() * theta;
  double linear = 0.0, quad = 0.0;
  for (int i = 0; i < ds.m(); ++i) {
    const double edge = ds.y[i] * scores[i];
    linear += edge;
    quad += edge * edge;
  }
  const int m = ds.m();
  double value = spec.a + spec.b * linear / m + spec.c * quad / m;
  if (spec.gamma != 0.0) value += spec.gamma * theta.dot(spec.Gamma * theta);
  return value;
}

struct TaylorSolution {
  Eigen::VectorXd theta;
  bool degenerate_null = false;  // mean operator vanished, minimizer forced to zero
  double grad_norm = 0.0;
};

// Exact minimizer of the quadratic surrogate. The stationarity condition is
// (2c X X' + 2 m gamma Gamma) theta = -b mu, solved directly and polished by
// iterative refinement until the gradient shrinks below 1e-8 (1 + |mu|).
inline TaylorSolution solve_taylor(const LabeledDataset& ds, const TaylorLossSpec& spec) {
  ds.validate();
  spec.validate(ds.d());
  const int m = ds.m();
  const Eigen::VectorXd mu = mean_operator(ds);
  const Eigen::MatrixXd M =
      2.0 * spec.c * (ds.X * ds.X.transpose()) + 2.0 * m * spec.gamma * spec.Gamma;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  const double lambda_min = es.eigenvalues().minCoeff();
  const double lambda_max = es.eigenvalues().cwiseAbs().maxCoeff();
  if (lambda_min <= 1e-12 * std::max(1.0, lambda_max))
    throw config_error("quadratic objective is not positive definite, smallest curvature " +
                       std::to_string(lambda_min));

  TaylorSolution sol;
  if (mu.norm() == 0.0) {
    sol.theta = Eigen::VectorXd::Zero(ds.d());
    sol.degenerate_null = true;
    return sol;
  }

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  const Eigen::VectorXd rhs = -spec.b * mu;
  sol.theta = ldlt.solve(rhs);
  const double tolerance = 1e-8 * (1.0 + mu.norm());
  for (int pass = 0; pass < 4; ++pass) {
    const Eigen::VectorXd grad = (spec.b * mu + M * sol.theta) / m;
    sol.grad_norm = grad.norm();
    if (sol.grad_norm <= tolerance) return sol;
    sol.theta += ldlt.solve(rhs - M * sol.theta);
  }
  throw config_error("linear solve failed to reach gradient tolerance, residual " +
                     std::to_string(sol.grad_norm));
}

// Shifts a curvature floor by the loss curvature scaled with the largest
// feature norm the estimate has to cover.
inline double pick_lambda_star(const SourceLoss& loss, double lambda_circ, double xhat_star) {
  if (!loss.rspl || !loss.convex)
    throw config_error("loss '" + loss.name +
                       "' lacks the convex proper-scoring structure this rate needs");
  return lambda_circ + loss.F2 * xhat_star * xhat_star / 2.0;
}

struct BoostResult {
  Eigen::VectorXd theta;
  std::vector<double> exp_loss_trace;  // one entry per completed round
  int rounds_used = 0;
};

// Coordinate-wise boosting of a linear model under the exponential loss.
// Features are pre-scaled to [-1, 1] so each round's weight update contracts
// the loss by sqrt(1 - r^2) for edge r; returned weights undo the scaling.
inline BoostResult boost_linear(const LabeledDataset& ds, int iterations) {
  ds.validate();
  if (iterations < 1) throw config_error("boosting needs at least one round");
  const int d = ds.d();
  const int m = ds.m();

  Eigen::VectorXd scale(d);
  for (int j = 0; j < d; ++j) {
    const double s = ds.X.row(j).cwiseAbs().maxCoeff();
    scale[j] = s > 0.0 ? s : 1.0;
  }
  const Eigen::MatrixXd Xs = scale.cwiseInverse().asDiagonal() * ds.X;

  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::VectorXd theta_scaled = Eigen::VectorXd::Zero(d);
  BoostResult res;
  res.exp_loss_trace.reserve(iterations);

  for (int round = 0; round < iterations; ++round) {
    int best = 0;
    double best_edge = 0.0;
    for (int j = 0; j < d; ++j) {
      double r = 0.0;
      for (int i = 0; i < m; ++i) r += w[i] * ds.y[i] * Xs(j, i);
      if (std::abs(r) > std::abs(best_edge)) {
        best = j;
        best_edge = r;
      }
    }
    if (std::abs(best_edge) <= 1e-12) break;  // no feature carries signal any more

    const double clamp = 1.0 - 1e-12;
    const double r = std::min(clamp, std::max(-clamp, best_edge));
    const double alpha = 0.5 * std::log((1.0 + r) / (1.0 - r));
    theta_scaled[best] += alpha;

    double z = 0.0;
    for (int i = 0; i < m; ++i) {
      w[i] *= std::exp(-alpha * ds.y[i] * Xs(best, i));
      z += w[i];
    }
    w /= z;

    double loss = 0.0;
    for (int i = 0; i < m; ++i)
      loss += std::exp(-ds.y[i] * theta_scaled.dot(Xs.col(i)));
    res.exp_loss_trace.push_back(loss / m);
    res.rounds_used = round + 1;
  }

  res.theta = theta_scaled.cwiseQuotient(scale);
  return res;
}

// Per-observation margins y_i theta.x_i in observation order.
inline Eigen::VectorXd margin_profile(const LabeledDataset& ds, const Eigen::VectorXd& theta) {
  if (theta.size() != ds.d()) throw config_error("parameter dimension does not match data");
  Eigen::VectorXd margins(ds.m());
  for (int i = 0; i < ds.m(); ++i) margins[i] = ds.y[i] * theta.dot(ds.X.col(i));
  return margins;
}

}  // namespace linkfed
