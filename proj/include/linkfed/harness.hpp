#pragma once

// Experiment driver: stratified cross-validation over a vertically split
// dataset with error-prone record alignment, a choice of linear learner, a
// margin-immunity summary, and optional auditing of the drift budgets.
// Everything is deterministic given the experiment seed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "linkfed/bounds.hpp"
#include "linkfed/dataset.hpp"
#include "linkfed/er.hpp"
#include "linkfed/errors.hpp"
#include "linkfed/losses.hpp"
#include "linkfed/permdiag.hpp"
#include "linkfed/rng.hpp"

namespace linkfed {

struct ErChoice {
  enum class Kind { greedy, per_class, learned, noisy, ideal };
  Kind kind = Kind::greedy;
  int k = 0;          // neighbor count for learned:k
  double p_prime = 0.0;  // planted cross-class swap share for noisy:p
};

inline ErChoice parse_er_choice(const std::string& text) {
  ErChoice out;
  if (text == "greedy") {
    out.kind = ErChoice::Kind::greedy;
  } else if (text == "per-class") {
    out.kind = ErChoice::Kind::per_class;
  } else if (text == "ideal") {
    out.kind = ErChoice::Kind::ideal;
  } else if (text.rfind("learned:", 0) == 0) {
    out.kind = ErChoice::Kind::learned;
    const std::string arg = text.substr(8);
    std::size_t used = 0;
    try {
      out.k = std::stoi(arg, &used);
    } catch (const std::exception&) {
      throw config_error("cannot parse neighbor count in '" + text + "'");
    }
    if (used != arg.size() || out.k < 1)
      throw config_error("learned strategy needs a positive neighbor count, got '" + text + "'");
  } else if (text.rfind("noisy:", 0) == 0) {
    out.kind = ErChoice::Kind::noisy;
    const std::string arg = text.substr(6);
    std::size_t used = 0;
    try {
      out.p_prime = std::stod(arg, &used);
    } catch (const std::exception&) {
      throw config_error("cannot parse swap share in '" + text + "'");
    }
    if (used != arg.size() || out.p_prime < 0.0 || out.p_prime > 1.0)
      throw config_error("noisy strategy needs a swap share in [0, 1], got '" + text + "'");
  } else {
    throw config_error("unknown er strategy '" + text +
                       "' (expected greedy, per-class, learned:k, noisy:p, or ideal)");
  }
  return out;
}

struct ExperimentConfig {
  std::string dataset_path;  // CSV with a label column; empty means synthesize
  std::string synth_name;    // breast-wisc | transfusion, used when no path is given
  std::string label_column = "label";
  std::vector<int> anchor;   // explicit feature split; leave both empty for a random split
  std::vector<int> shuffle;
  std::vector<int> shared;   // matching-signal feature rows, required
  std::string peer_b_labels = "clean";  // absent | clean | noisy
  double label_noise_p_prime = 0.0;
  double noise_p = 0.0;      // shared-cell corruption probability
  std::uint64_t seed = 1;
  std::string er = "greedy";
  std::string learner = "taylor";  // taylor | boost
  int iterations = 1000;           // boosting rounds
  double gamma = 0.0;              // ridge weight; 0 requests auto-calibration
  std::string loss = "logistic";
  int folds = 5;
  bool audit_bounds = false;
  double delta = 0.05;  // confidence level for the generalization estimate

  void validate() const {
    if (folds < 2) throw config_error("folds must be at least 2");
    parse_er_choice(er);
    if (learner != "taylor" && learner != "boost")
      throw config_error("unknown learner '" + learner + "' (expected taylor or boost)");
    source_loss(loss);
    if (learner == "boost" && iterations < 1)
      throw config_error("boosting needs at least one round");
    if (gamma < 0.0) throw config_error("the ridge weight cannot be negative");
    if (noise_p < 0.0 || noise_p > 1.0)
      throw config_error("the noise probability must lie in [0, 1]");
    if (!(delta > 0.0 && delta < 1.0))
      throw config_error("the confidence level must lie strictly between 0 and 1");
    if (shared.empty()) throw config_error("at least one shared feature is required");
    if (anchor.empty() != shuffle.empty())
      throw config_error("provide both anchor and shuffle feature lists, or neither");
    if (peer_b_labels != "absent" && peer_b_labels != "clean" && peer_b_labels != "noisy")
      throw config_error("peer_b_labels must be absent, clean, or noisy");
    if (label_noise_p_prime < 0.0 || label_noise_p_prime > 1.0)
      throw config_error("the label noise share must lie in [0, 1]");
    if (label_column.empty()) throw config_error("the label column name cannot be empty");
    if (dataset_path.empty() && synth_name != "breast-wisc" && synth_name != "transfusion")
      throw config_error("no dataset path given and unknown synthetic name '" + synth_name +
                         "' (expected breast-wisc or transfusion)");
  }
};

inline LabeledDataset load_experiment_dataset(const ExperimentConfig& cfg) {
  if (!cfg.dataset_path.empty()) return load_csv(cfg.dataset_path, cfg.label_column);
  if (cfg.synth_name == "breast-wisc") return synthetic_breast_wisc(cfg.seed);
  return synthetic_transfusion(cfg.seed);
}

namespace detail {

inline std::string trim_copy(const std::string& s) {
  const auto from = s.find_first_not_of(" \t\r");
  if (from == std::string::npos) return "";
  return s.substr(from, s.find_last_not_of(" \t\r") - from + 1);
}

inline std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

inline double config_double(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != raw.size())
    throw config_error("config key '" + key + "' expects a number, got '" + raw + "'");
  return v;
}

inline long long config_integer(const std::string& key, const std::string& raw) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != raw.size())
    throw config_error("config key '" + key + "' expects an integer, got '" + raw + "'");
  return v;
}

inline bool config_bool(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw config_error("config key '" + key + "' expects true or false, got '" + raw + "'");
}

inline std::vector<int> config_int_list(const std::string& key, std::string raw) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']')
      throw config_error("config key '" + key + "' has an unterminated list");
    raw = raw.substr(1, raw.size() - 2);
  }
  std::vector<int> out;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ',')) {
    std::istringstream fields(item);
    std::string field;
    while (fields >> field)
      out.push_back(static_cast<int>(config_integer(key, field)));
  }
  return out;
}

}  // namespace detail

// Flat `key = value` experiment file: one assignment per line, # comments,
// optional quotes around strings, integer lists as [a, b] or a b.
inline std::map<std::string, std::string> parse_flat_config(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim_copy(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = detail::trim_copy(line.substr(0, eq));
    const std::string value = detail::trim_copy(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw config_error("config line " + std::to_string(line_no) + " is missing its " +
                         (key.empty() ? "key" : "value"));
    if (!out.emplace(key, value).second)
      throw config_error("config key '" + key + "' appears twice");
  }
  return out;
}

// Applies parsed config values; keys the predicate marks as overridden (set
// explicitly on the command line) are skipped. Keys mirror the long flags.
inline void apply_flat_config(const std::map<std::string, std::string>& values,
                              ExperimentConfig& cfg, std::string& out_dir,
                              const std::function<bool(const std::string&)>& overridden = {}) {
  for (const auto& [key, raw] : values) {
    if (overridden && overridden(key)) continue;
    const std::string text = detail::unquote(raw);
    if (key == "data") {
      cfg.dataset_path = text;
    } else if (key == "synth") {
      cfg.synth_name = text;
    } else if (key == "label-col") {
      cfg.label_column = text;
    } else if (key == "anchor") {
      cfg.anchor = detail::config_int_list(key, raw);
    } else if (key == "shuffle") {
      cfg.shuffle = detail::config_int_list(key, raw);
    } else if (key == "shared") {
      cfg.shared = detail::config_int_list(key, raw);
    } else if (key == "b-labels") {
      cfg.peer_b_labels = text;
    } else if (key == "label-noise-p") {
      cfg.label_noise_p_prime = detail::config_double(key, raw);
    } else if (key == "noise-p") {
      cfg.noise_p = detail::config_double(key, raw);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(detail::config_integer(key, raw));
    } else if (key == "er") {
      cfg.er = text;
    } else if (key == "learner") {
      cfg.learner = text;
    } else if (key == "iters") {
      cfg.iterations = static_cast<int>(detail::config_integer(key, raw));
    } else if (key == "gamma") {
      cfg.gamma = detail::config_double(key, raw);
    } else if (key == "loss") {
      cfg.loss = text;
    } else if (key == "folds") {
      cfg.folds = static_cast<int>(detail::config_integer(key, raw));
    } else if (key == "audit-bounds") {
      cfg.audit_bounds = detail::config_bool(key, raw);
    } else if (key == "delta") {
      cfg.delta = detail::config_double(key, raw);
    } else if (key == "out") {
      out_dir = text;
    } else {
      throw config_error("unknown config key '" + key + "'");
    }
  }
}

// Explicit split when given; otherwise the non-shared features go to a
// random side and the shared matching keys stay with the label holder.
inline PartitionSpec make_partition(const ExperimentConfig& cfg, int d) {
  PartitionSpec part;
  part.shared = cfg.shared;
  if (cfg.anchor.empty() != cfg.shuffle.empty())
    throw config_error("provide both anchor and shuffle feature lists, or neither");
  if (!cfg.anchor.empty()) {
    part.anchor = cfg.anchor;
    part.shuffle = cfg.shuffle;
  } else {
    std::vector<char> is_shared(d, 0);
    for (int s : cfg.shared) {
      if (s < 0 || s >= d)
        throw config_error("shared feature " + std::to_string(s) + " out of range for " +
                           std::to_string(d) + " features");
      is_shared[s] = 1;
    }
    std::vector<int> rest;
    for (int r = 0; r < d; ++r)
      if (!is_shared[r]) rest.push_back(r);
    if (rest.empty()) throw config_error("every feature is shared; nothing remains to split");
    Rng rng(derive_seed(cfg.seed, 0x511317u));
    for (int r : rest) (rng.bernoulli(0.5) ? part.anchor : part.shuffle).push_back(r);
    if (part.shuffle.empty()) {
      part.shuffle.push_back(part.anchor.back());
      part.anchor.pop_back();
    }
    for (int s : cfg.shared) part.anchor.push_back(s);
    std::sort(part.anchor.begin(), part.anchor.end());
    std::sort(part.shuffle.begin(), part.shuffle.end());
  }
  if (cfg.peer_b_labels == "absent")
    part.labels_on_peer_b = PartitionSpec::PeerBLabels::absent;
  else if (cfg.peer_b_labels == "noisy")
    part.labels_on_peer_b = PartitionSpec::PeerBLabels::noisy;
  else
    part.labels_on_peer_b = PartitionSpec::PeerBLabels::clean;
  part.label_noise_p_prime = cfg.label_noise_p_prime;
  return part;
}

// Test indices per fold: each class is shuffled once and dealt round-robin,
// so per-class fold sizes differ by at most one.
inline std::vector<std::vector<int>> stratified_folds(const Eigen::VectorXd& y, int folds,
                                                      std::uint64_t seed) {
  const int m = static_cast<int>(y.size());
  if (folds < 2) throw config_error("folds must be at least 2");
  if (folds > m) throw config_error("more folds than observations");
  std::vector<int> pos, neg;
  for (int i = 0; i < m; ++i) (y[i] > 0.0 ? pos : neg).push_back(i);
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::vector<int>> out(folds);
  for (std::size_t i = 0; i < pos.size(); ++i) out[i % folds].push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) out[i % folds].push_back(neg[i]);
  for (auto& fold : out) {
    if (fold.empty())
      throw config_error("a fold received no observations; reduce the fold count");
    std::sort(fold.begin(), fold.end());
  }
  return out;
}

struct MarginAnalysis {
  // (margin x, share of all misclassifications at margins >= x), ascending in x.
  std::vector<std::pair<double, double>> curve;
  // Largest reference margin at which the drifted model still errs; the
  // smallest observed margin when it never errs; empty when errors reach the
  // top margin (an infinite sentinel) or there is no data.
  std::optional<double> minimal_margin;
};

inline MarginAnalysis margin_immunity_analysis(const Eigen::VectorXd& theta0,
                                               const Eigen::VectorXd& thetaT,
                                               const LabeledDataset& S) {
  if (theta0.size() != S.d() || thetaT.size() != S.d())
    throw config_error("model dimensions do not match the data");
  MarginAnalysis out;
  const int m = S.m();
  if (m == 0) return out;

  std::vector<std::pair<double, bool>> points(m);  // (reference margin, errs)
  int total_errors = 0;
  for (int i = 0; i < m; ++i) {
    const double margin = S.y[i] * theta0.dot(S.X.col(i));
    const bool err = S.y[i] * thetaT.dot(S.X.col(i)) <= 0.0;
    points[i] = {margin, err};
    total_errors += err ? 1 : 0;
  }
  std::sort(points.begin(), points.end());

  std::vector<double> margins;
  std::vector<int> errors_at;
  for (int i = 0; i < m;) {
    int j = i, errs = 0;
    while (j < m && points[j].first == points[i].first) errs += points[j++].second ? 1 : 0;
    margins.push_back(points[i].first);
    errors_at.push_back(errs);
    i = j;
  }
  std::vector<int> errors_above(margins.size() + 1, 0);
  for (int i = static_cast<int>(margins.size()) - 1; i >= 0; --i)
    errors_above[i] = errors_above[i + 1] + errors_at[i];
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double share =
        total_errors == 0 ? 0.0 : static_cast<double>(errors_above[i]) / total_errors;
    out.curve.emplace_back(margins[i], share);
  }

  if (total_errors == 0) {
    out.minimal_margin = margins.front();
  } else {
    int top_err = -1;
    for (int i = static_cast<int>(margins.size()) - 1; i >= 0; --i)
      if (errors_at[i] > 0) {
        top_err = i;
        break;
      }
    if (top_err != static_cast<int>(margins.size()) - 1) out.minimal_margin = margins[top_err];
  }
  return out;
}

struct FoldOutcome {
  double test_error = 0.0;
  double class_mismatch_rate = 0.0;
  std::optional<double> immunity_margin;
  std::vector<std::pair<double, double>> margin_curve;
  Eigen::VectorXd theta;      // trained on the resolved join
  Eigen::VectorXd theta_ref;  // same learner on the true join
  std::vector<int> permutation;
  double gamma_used = 0.0;
  std::vector<std::string> warnings;
};

struct FoldAudit {
  AccuracyProfile profile;
  int T = 0;
  int T_plus = 0;
  double rho = 0.0;
  KeyParams key_params;
  CalibrationReport calibration;
  BoundReport bounds;
};

namespace detail {

inline LabeledDataset take_columns(const LabeledDataset& ds, const std::vector<int>& cols) {
  LabeledDataset out;
  out.X.resize(ds.d(), static_cast<int>(cols.size()));
  out.y.resize(static_cast<int>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.X.col(static_cast<int>(j)) = ds.X.col(cols[j]);
    out.y[static_cast<int>(j)] = ds.y[cols[j]];
  }
  out.feature_names = ds.feature_names;
  return out;
}

inline double classification_error(const LabeledDataset& ds, const Eigen::VectorXd& theta) {
  if (ds.m() == 0) return 0.0;
  int errs = 0;
  for (int i = 0; i < ds.m(); ++i)
    if (ds.y[i] * theta.dot(ds.X.col(i)) <= 0.0) ++errs;
  return static_cast<double>(errs) / ds.m();
}

// Per-feature affine map onto [-1, 1], fitted on training features.
// Constant features collapse to zero.
struct FeatureScaler {
  Eigen::VectorXd lo, hi;

  static FeatureScaler fit(const LabeledDataset& ds) {
    FeatureScaler s;
    s.lo = ds.X.rowwise().minCoeff();
    s.hi = ds.X.rowwise().maxCoeff();
    return s;
  }

  LabeledDataset apply(const LabeledDataset& ds) const {
    LabeledDataset out = ds;
    for (int r = 0; r < out.d(); ++r) {
      const double span = hi[r] - lo[r];
      for (int i = 0; i < out.m(); ++i)
        out.X(r, i) = span > 0.0 ? 2.0 * (out.X(r, i) - lo[r]) / span - 1.0 : 0.0;
    }
    return out;
  }
};

}  // namespace detail

inline FoldOutcome run_fold(const LabeledDataset& train, const LabeledDataset& test,
                            const PartitionSpec& part, const ExperimentConfig& cfg,
                            int fold_index, FoldAudit* audit) {
  FoldOutcome out;
  const SplitResult split =
      vertical_split(train, part, derive_seed(cfg.seed, 0xab1e00u + fold_index));
  NoiseConfig noise;
  noise.p = cfg.noise_p;
  noise.seed = derive_seed(cfg.seed, 0x015e00u + fold_index);
  const PeerView b_view = apply_neighbor_noise(split.b, noise);
  const ErContext ctx{split.a, b_view, split.b_col_to_truth, train.feature_names};

  const ErChoice er = parse_er_choice(cfg.er);
  ResolvedSample resolved = [&] {
    switch (er.kind) {
      case ErChoice::Kind::greedy:
        return greedy_er(ctx);
      case ErChoice::Kind::per_class:
        return greedy_er_per_class(ctx);
      case ErChoice::Kind::learned:
        return greedy_er_learned_classes(ctx, er.k);
      case ErChoice::Kind::noisy:
        return greedy_er_noisy_classes(ctx, er.p_prime,
                                       derive_seed(cfg.seed, 0xe4007u + fold_index));
      case ErChoice::Kind::ideal:
      default:
        return ideal_er(ctx);
    }
  }();
  out.permutation = resolved.permutation;
  out.class_mismatch_rate = resolved.class_mismatch_rate;
  out.warnings = resolved.warnings;

  if (cfg.learner == "taylor") {
    const TranspositionSequence seq = factorize(resolved.permutation, train.y);
    const AccuracyProfile profile = estimate_accuracy(train, seq, part);
    TaylorLossSpec spec = TaylorLossSpec::from_source(
        source_loss(cfg.loss), 1.0, Eigen::MatrixXd::Identity(train.d(), train.d()));
    spec.gamma = cfg.gamma > 0.0
                     ? cfg.gamma
                     : std::max(min_gamma_for_calibration(train, spec, profile) * 1.05, 1e-3);
    out.gamma_used = spec.gamma;
    const TaylorSolution drifted = solve_taylor(resolved.dataset, spec);
    const TaylorSolution reference = solve_taylor(train, spec);
    out.theta = drifted.theta;
    out.theta_ref = reference.theta;
    if (drifted.degenerate_null || reference.degenerate_null)
      out.warnings.push_back("a mean operator vanished; the solver returned the zero model");

    if (audit) {
      audit->profile = profile;
      audit->T = seq.T();
      audit->T_plus = seq.T_plus;
      audit->rho = seq.rho();
      audit->calibration = check_calibration(train, spec, profile);
      BoundReport br;
      const double ref_norm = reference.theta.norm();
      if (ref_norm <= 0.0) {
        br.suppressed.push_back("the reference model is zero, so relative budgets are undefined");
      } else {
        const KeyParams kp = compute_key_params(reference.theta, train, profile, seq);
        audit->key_params = kp;
        br.deviation_observed = (drifted.theta - reference.theta).norm() / ref_norm;
        const DeviationBound dev = deviation_bound(kp, profile.xi, seq.T(), train.m());
        br.deviation_t2 = dev.t2_form;
        br.deviation_rhs = dev.bound();
        br.immunity_kappa = immunity_threshold(kp);
        if (br.immunity_kappa) {
          int flips = 0;
          for (int i = 0; i < train.m(); ++i) {
            const double ref_margin = reference.theta.dot(train.X.col(i));
            if (std::abs(ref_margin) > *br.immunity_kappa &&
                ref_margin * drifted.theta.dot(train.X.col(i)) <= 0.0)
              ++flips;
          }
          br.immunity_errors_above = flips;
        }
        const LossGapBound gap = loss_gap_bound(kp, spec, train.max_column_norm(), train.d());
        br.loss_gap_A = gap.A;
        br.loss_gap_rhs = gap.rhs;
        const double loss_ref = taylor_loss_value(train, spec, reference.theta);
        br.loss_gap_observed = taylor_loss_value(train, spec, drifted.theta) - loss_ref;
        const GeneralizationReport gen =
            generalization_report(kp, spec, gap.A, loss_ref, ref_norm, train.max_column_norm(),
                                  train.m(), cfg.delta);
        br.generalization_Q = gen.Q;
        br.generalization_rhs = gen.rhs;
        for (const auto& w : gen.warnings) out.warnings.push_back(w);
        if (profile.unbounded_violation)
          br.suppressed.push_back(
              "no valid boundedness exponent: too many swaps for this sample size");
        if (!audit->calibration.pass())
          br.suppressed.push_back("calibration preconditions failed; budgets lack a guarantee");
      }
      audit->bounds = br;
    }
    out.test_error = detail::classification_error(test, out.theta);
    // Immunity is measured where the drift happened: the drifted model's
    // errors on the clean training sample, against the reference margins.
    const MarginAnalysis ma = margin_immunity_analysis(out.theta_ref, out.theta, train);
    out.margin_curve = ma.curve;
    out.immunity_margin = ma.minimal_margin;
  } else {
    // Boosting wants features in [-1, 1]; fit the map on the clean training
    // features and apply it to the resolved join and the test set alike. The
    // reference model gets twice the rounds so its margins are settled.
    const detail::FeatureScaler scaler = detail::FeatureScaler::fit(train);
    const LabeledDataset scaled_train = scaler.apply(train);
    out.theta = boost_linear(scaler.apply(resolved.dataset), cfg.iterations).theta;
    out.theta_ref = boost_linear(scaled_train, 2 * cfg.iterations).theta;

    out.test_error = detail::classification_error(scaler.apply(test), out.theta);
    const MarginAnalysis ma = margin_immunity_analysis(out.theta_ref, out.theta, scaled_train);
    out.margin_curve = ma.curve;
    out.immunity_margin = ma.minimal_margin;
  }
  return out;
}

struct RunReport {
  std::vector<FoldOutcome> folds;
  double mean_test_error = 0.0;
  double mean_class_mismatch = 0.0;
  // Arithmetic mean of the fold margins; empty when any fold hit the
  // infinite sentinel.
  std::optional<double> mean_immunity_margin;
  std::vector<std::pair<double, double>> margin_curve;  // first fold's curve
  std::optional<AccuracyProfile> profile;               // first-fold audit artifacts
  std::optional<KeyParams> key_params;
  std::optional<CalibrationReport> calibration;
  std::optional<BoundReport> bounds;
  int audit_T = 0;
  int audit_T_plus = 0;
  double audit_rho = 0.0;
  std::vector<std::string> warnings;
};

inline RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const LabeledDataset full = load_experiment_dataset(cfg);
  full.validate();
  const PartitionSpec part = make_partition(cfg, full.d());
  part.validate(full.d());
  const auto fold_tests = stratified_folds(full.y, cfg.folds, derive_seed(cfg.seed, 0xf01d5u));

  RunReport rep;
  const bool can_audit = cfg.audit_bounds && cfg.learner == "taylor";
  if (cfg.audit_bounds && !can_audit)
    rep.warnings.push_back("the bound audit needs the taylor learner; skipped");

  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<char> in_test(full.m(), 0);
    for (int idx : fold_tests[f]) in_test[idx] = 1;
    std::vector<int> train_idx;
    for (int i = 0; i < full.m(); ++i)
      if (!in_test[i]) train_idx.push_back(i);
    const LabeledDataset train = detail::take_columns(full, train_idx);
    const LabeledDataset test = detail::take_columns(full, fold_tests[f]);

    FoldAudit audit;
    const bool audit_this = can_audit && f == 0;
    rep.folds.push_back(run_fold(train, test, part, cfg, f, audit_this ? &audit : nullptr));
    if (audit_this) {
      rep.profile = audit.profile;
      rep.key_params = audit.key_params;
      rep.calibration = audit.calibration;
      rep.bounds = audit.bounds;
      rep.audit_T = audit.T;
      rep.audit_T_plus = audit.T_plus;
      rep.audit_rho = audit.rho;
    }
  }

  double err_sum = 0.0, mismatch_sum = 0.0, margin_sum = 0.0;
  int finite_margins = 0;
  bool sentinel = false;
  for (const auto& fold : rep.folds) {
    err_sum += fold.test_error;
    mismatch_sum += fold.class_mismatch_rate;
    if (fold.immunity_margin) {
      margin_sum += *fold.immunity_margin;
      ++finite_margins;
    } else {
      sentinel = true;
    }
  }
  rep.mean_test_error = err_sum / cfg.folds;
  rep.mean_class_mismatch = mismatch_sum / cfg.folds;
  if (!sentinel && finite_margins > 0) rep.mean_immunity_margin = margin_sum / finite_margins;
  rep.margin_curve = rep.folds.front().margin_curve;
  return rep;
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson opt_json(const std::optional<double>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

inline ojson config_json(const ExperimentConfig& cfg) {
  ojson j;
  j["dataset"] = cfg.dataset_path;
  j["synth"] = cfg.synth_name;
  j["label_column"] = cfg.label_column;
  j["anchor"] = cfg.anchor;
  j["shuffle"] = cfg.shuffle;
  j["shared"] = cfg.shared;
  j["peer_b_labels"] = cfg.peer_b_labels;
  j["label_noise_p_prime"] = cfg.label_noise_p_prime;
  j["noise_p"] = cfg.noise_p;
  j["seed"] = cfg.seed;
  j["er"] = cfg.er;
  j["learner"] = cfg.learner;
  j["iterations"] = cfg.iterations;
  j["gamma"] = cfg.gamma;
  j["loss"] = cfg.loss;
  j["folds"] = cfg.folds;
  j["audit_bounds"] = cfg.audit_bounds;
  j["delta"] = cfg.delta;
  return j;
}

}  // namespace detail

inline void emit_reports(const RunReport& rep, const ExperimentConfig& cfg,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw config_error("cannot create output directory '" + out_dir + "': " + ec.message());
  const auto write_file = [&](const std::string& name, const std::string& body) {
    const std::string path = (fs::path(out_dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write '" + path + "'");
    out << body;
  };

  detail::ojson j;
  j["config"] = detail::config_json(cfg);
  j["folds"] = detail::ojson::array();
  for (const auto& fold : rep.folds) {
    detail::ojson f;
    f["test_error"] = fold.test_error;
    f["class_mismatch_rate"] = fold.class_mismatch_rate;
    f["immunity_margin"] = detail::opt_json(fold.immunity_margin);
    f["gamma_used"] = fold.gamma_used;
    f["warnings"] = fold.warnings;
    j["folds"].push_back(std::move(f));
  }
  j["mean_test_error"] = rep.mean_test_error;
  j["mean_class_mismatch_rate"] = rep.mean_class_mismatch;
  j["mean_immunity_margin"] = detail::opt_json(rep.mean_immunity_margin);
  j["margin_curve"] = detail::ojson::array();
  for (const auto& [x, v] : rep.margin_curve) j["margin_curve"].push_back({x, v});
  j["warnings"] = rep.warnings;
  write_file("report.json", j.dump(2) + "\n");

  std::string csv = "margin,cumulative_error\n";
  for (const auto& [x, v] : rep.margin_curve) {
    char line[80];
    std::snprintf(line, sizeof(line), "%.17g,%.17g\n", x, v);
    csv += line;
  }
  write_file("margins.csv", csv);

  if (rep.bounds && rep.profile && rep.key_params && rep.calibration) {
    detail::ojson b;
    b["epsilon"] = rep.profile->epsilon;
    b["tau"] = rep.profile->tau;
    b["xi"] = rep.profile->xi;
    b["alpha"] = detail::opt_json(rep.profile->alpha);
    b["rho"] = rep.audit_rho;
    b["T"] = rep.audit_T;
    b["T_plus"] = rep.audit_T_plus;
    b["delta_theta"] = rep.key_params->delta_theta;
    b["delta_perm"] = rep.key_params->delta_perm;
    b["delta_set"] = rep.key_params->delta_set;
    b["c_of_m"] = detail::opt_json(rep.key_params->c_of_m);
    detail::ojson clause_a;
    clause_a["pass"] = rep.calibration->regularization.pass;
    clause_a["margin"] = rep.calibration->regularization.margin;
    detail::ojson clause_b;
    clause_b["pass"] = rep.calibration->data_size.pass;
    clause_b["margin"] = rep.calibration->data_size.margin;
    b["calibration"] = detail::ojson{{"a", clause_a}, {"b", clause_b}};
    detail::ojson body;
    body["deviation_observed"] = rep.bounds->deviation_observed;
    body["deviation_t2"] = rep.bounds->deviation_t2;
    body["deviation_rhs"] = detail::opt_json(rep.bounds->deviation_rhs);
    body["immunity_kappa"] = detail::opt_json(rep.bounds->immunity_kappa);
    body["immunity_errors_above"] = rep.bounds->immunity_errors_above;
    body["loss_gap_observed"] = rep.bounds->loss_gap_observed;
    body["loss_gap_A"] = rep.bounds->loss_gap_A;
    body["loss_gap_rhs"] = detail::opt_json(rep.bounds->loss_gap_rhs);
    body["generalization_Q"] = rep.bounds->generalization_Q;
    body["generalization_rhs"] = detail::opt_json(rep.bounds->generalization_rhs);
    body["suppressed"] = rep.bounds->suppressed;
    b["bounds"] = std::move(body);
    write_file("bounds.json", b.dump(2) + "\n");
  }
}

}  // namespace linkfed
