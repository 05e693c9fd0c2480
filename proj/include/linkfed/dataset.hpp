#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "linkfed/errors.hpp"
#include "linkfed/rng.hpp"

namespace linkfed {

// Observations are stored as columns: X is d x m, y holds +/-1 labels.
struct LabeledDataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> feature_names;

  int d() const { return static_cast<int>(X.rows()); }
  int m() const { return static_cast<int>(X.cols()); }

  double max_column_norm() const {
    double best = 0.0;
    for (int i = 0; i < m(); ++i) best = std::max(best, X.col(i).norm());
    return best;
  }

  void validate() const {
    if (d() < 1) throw data_error("dataset has no features");
    if (m() < 2) throw data_error("dataset needs at least two observations");
    if (y.size() != m()) throw data_error("label vector length does not match observation count");
    for (int i = 0; i < m(); ++i) {
      if (y[i] != 1.0 && y[i] != -1.0)
        throw data_error("labels must be +1 or -1, found " + std::to_string(y[i]) +
                         " at observation " + std::to_string(i));
    }
    if (!X.allFinite()) throw data_error("dataset contains non-finite feature values");
    const double xstar = max_column_norm();
    if (!(xstar > 0.0)) throw data_error("all observations are the zero vector");
    if (!feature_names.empty() && static_cast<int>(feature_names.size()) != d())
      throw data_error("feature name count does not match feature count");
  }
};

// Which feature rows live on each peer, and which rows double as the shared
// matching signal both peers can see.
struct PartitionSpec {
  std::vector<int> anchor;
  std::vector<int> shuffle;
  std::vector<int> shared;

  enum class PeerBLabels { absent, clean, noisy };
  PeerBLabels labels_on_peer_b = PeerBLabels::clean;
  double label_noise_p_prime = 0.0;

  void validate(int d) const {
    std::vector<int> owner(d, -1);
    auto claim = [&](const std::vector<int>& rows, int tag, const char* name) {
      for (int r : rows) {
        if (r < 0 || r >= d)
          throw config_error(std::string(name) + " row " + std::to_string(r) +
                             " out of range for " + std::to_string(d) + " features");
        if (owner[r] != -1)
          throw config_error("feature row " + std::to_string(r) +
                             " assigned to more than one peer");
        owner[r] = tag;
      }
    };
    claim(anchor, 0, "anchor");
    claim(shuffle, 1, "shuffle");
    for (int r = 0; r < d; ++r)
      if (owner[r] == -1)
        throw config_error("feature row " + std::to_string(r) + " assigned to neither peer");
    if (anchor.empty()) throw config_error("anchor peer owns no feature rows");
    if (shuffle.empty()) throw config_error("shuffle peer owns no feature rows");
    std::set<int> seen;
    for (int r : shared) {
      if (r < 0 || r >= d)
        throw config_error("shared row " + std::to_string(r) + " out of range for " +
                           std::to_string(d) + " features");
      if (!seen.insert(r).second)
        throw config_error("shared row " + std::to_string(r) + " listed twice");
    }
    if (labels_on_peer_b == PeerBLabels::noisy &&
        (label_noise_p_prime < 0.0 || label_noise_p_prime > 1.0))
      throw config_error("label noise probability must lie in [0, 1]");
  }
};

struct NoiseConfig {
  double p = 0.0;
  std::uint64_t seed = 0;

  // Wide window for rich value sets, narrow one otherwise.
  static int neighbor_radius(int distinct_values) { return distinct_values > 20 ? 10 : 2; }
};

// One peer's private slice plus its copy of the shared matching signal.
struct PeerView {
  Eigen::MatrixXd own;          // |own_ids| x m, this peer's private feature rows
  std::vector<int> own_ids;     // original feature row ids, row r of `own` is feature own_ids[r]
  Eigen::MatrixXd shared;       // |shared_ids| x m, copy used only as matching signal
  std::vector<int> shared_ids;  // original feature row ids of the shared rows
  std::optional<Eigen::VectorXd> labels;

  int m() const { return static_cast<int>(own.cols() > 0 ? own.cols() : shared.cols()); }

  // Private rows stacked on top of the shared copies, one column per record.
  Eigen::MatrixXd full_view() const {
    Eigen::MatrixXd out(own.rows() + shared.rows(), m());
    if (own.rows() > 0) out.topRows(own.rows()) = own;
    if (shared.rows() > 0) out.bottomRows(shared.rows()) = shared;
    return out;
  }
};

struct SplitResult {
  PeerView a;                        // anchor peer, truth column order, holds labels
  PeerView b;                        // shuffle peer, columns permuted
  std::vector<int> b_col_to_truth;   // ground truth: B's column j is record b_col_to_truth[j]
};

namespace detail {

inline int swap_class_labels(Eigen::VectorXd& labels, double p_prime, Rng& rng) {
  const int m = static_cast<int>(labels.size());
  const long long swaps = std::llround(m * p_prime);
  int performed = 0;
  for (long long s = 0; s < swaps; ++s) {
    std::vector<int> pos, neg;
    for (int i = 0; i < m; ++i) (labels[i] > 0 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) break;  // nothing left to exchange
    const int i = pos[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pos.size()) - 1))];
    const int j = neg[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(neg.size()) - 1))];
    std::swap(labels[i], labels[j]);
    ++performed;
  }
  return performed;
}

}  // namespace detail

// Splits a dataset by feature rows. Peer A keeps the truth column order and
// the labels; peer B sees its columns under a seeded permutation, which is
// returned as ground truth for evaluation only.
inline SplitResult vertical_split(const LabeledDataset& ds, const PartitionSpec& spec,
                                  std::uint64_t seed) {
  ds.validate();
  spec.validate(ds.d());
  const int m = ds.m();

  SplitResult out;
  out.b_col_to_truth.resize(m);
  for (int j = 0; j < m; ++j) out.b_col_to_truth[j] = j;
  Rng perm_rng(derive_seed(seed, 0x5eedu));
  perm_rng.shuffle(out.b_col_to_truth);

  auto gather_rows = [&](const std::vector<int>& rows) {
    Eigen::MatrixXd sub(rows.size(), m);
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<int>(r)) = ds.X.row(rows[r]);
    return sub;
  };

  out.a.own = gather_rows(spec.anchor);
  out.a.own_ids = spec.anchor;
  out.a.shared = gather_rows(spec.shared);
  out.a.shared_ids = spec.shared;
  out.a.labels = ds.y;

  const Eigen::MatrixXd b_own_truth = gather_rows(spec.shuffle);
  const Eigen::MatrixXd b_shared_truth = gather_rows(spec.shared);
  out.b.own.resize(b_own_truth.rows(), m);
  out.b.shared.resize(b_shared_truth.rows(), m);
  Eigen::VectorXd b_labels(m);
  for (int j = 0; j < m; ++j) {
    const int truth = out.b_col_to_truth[j];
    out.b.own.col(j) = b_own_truth.col(truth);
    out.b.shared.col(j) = b_shared_truth.col(truth);
    b_labels[j] = ds.y[truth];
  }
  out.b.own_ids = spec.shuffle;
  out.b.shared_ids = spec.shared;

  switch (spec.labels_on_peer_b) {
    case PartitionSpec::PeerBLabels::absent:
      break;
    case PartitionSpec::PeerBLabels::clean:
      out.b.labels = b_labels;
      break;
    case PartitionSpec::PeerBLabels::noisy: {
      Rng label_rng(derive_seed(seed, 0x1abe1u));
      detail::swap_class_labels(b_labels, spec.label_noise_p_prime, label_rng);
      out.b.labels = b_labels;
      break;
    }
  }
  return out;
}

// Randomly replaces shared-signal cells with a nearby observed value. Each
// cell independently triggers with probability p; a triggered cell is redrawn
// uniformly from the values whose sorted rank lies within the window radius,
// excluding its own. Windows come from the pre-noise row snapshot, so later
// replacements never shift the value set. Private rows are untouched.
inline PeerView apply_neighbor_noise(const PeerView& view, const NoiseConfig& cfg) {
  if (cfg.p < 0.0 || cfg.p > 1.0) throw config_error("noise probability must lie in [0, 1]");
  PeerView out = view;
  Rng rng(cfg.seed);
  for (int r = 0; r < view.shared.rows(); ++r) {
    std::vector<double> values(view.shared.cols());
    for (int j = 0; j < view.shared.cols(); ++j) values[j] = view.shared(r, j);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const int k = static_cast<int>(values.size());
    const int radius = NoiseConfig::neighbor_radius(k);
    for (int j = 0; j < view.shared.cols(); ++j) {
      if (!rng.bernoulli(cfg.p)) continue;
      const int idx = static_cast<int>(
          std::lower_bound(values.begin(), values.end(), view.shared(r, j)) - values.begin());
      const int lo = std::max(0, idx - radius);
      const int hi = std::min(k - 1, idx + radius);
      const int window = hi - lo + 1 - 1;  // window excludes the current rank
      if (window <= 0) continue;
      int pick = lo + static_cast<int>(rng.uniform_int(0, window - 1));
      if (pick >= idx) ++pick;
      out.shared(r, j) = values[pick];
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Reads a headered CSV whose label column holds exactly two distinct raw
// values; the lexicographically larger one becomes +1.
inline LabeledDataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error(path + ": empty file");
  const std::vector<std::string> header = detail::split_csv_line(line);
  int label_idx = -1;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (detail::trim(header[c]) == label_column) label_idx = static_cast<int>(c);
  if (label_idx < 0) throw config_error(path + ": no column named '" + label_column + "'");

  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (static_cast<int>(c) != label_idx) names.push_back(detail::trim(header[c]));

  std::vector<std::vector<double>> columns;  // one entry per observation
  std::vector<std::string> raw_labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw data_error(path + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    std::vector<double> obs;
    obs.reserve(header.size() - 1);
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string cell = detail::trim(fields[c]);
      if (static_cast<int>(c) == label_idx) {
        if (cell.empty())
          throw data_error(path + " line " + std::to_string(line_no) + ": blank label in column '" +
                           detail::trim(header[c]) + "'");
        raw_labels.push_back(cell);
        continue;
      }
      if (cell.empty())
        throw data_error(path + " line " + std::to_string(line_no) + ": blank value in column '" +
                         detail::trim(header[c]) + "'");
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end != cell.c_str() + cell.size() || !std::isfinite(v))
        throw data_error(path + " line " + std::to_string(line_no) + ": non-numeric value '" +
                         cell + "' in column '" + detail::trim(header[c]) + "'");
      obs.push_back(v);
    }
    columns.push_back(std::move(obs));
  }
  if (columns.empty()) throw data_error(path + ": no data rows");

  std::set<std::string> distinct(raw_labels.begin(), raw_labels.end());
  if (distinct.size() != 2)
    throw data_error(path + ": label column '" + label_column + "' has " +
                     std::to_string(distinct.size()) + " distinct values, need exactly 2");
  const std::string positive = *distinct.rbegin();

  LabeledDataset ds;
  ds.feature_names = names;
  const int d = static_cast<int>(names.size());
  const int m = static_cast<int>(columns.size());
  ds.X.resize(d, m);
  ds.y.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int r = 0; r < d; ++r) ds.X(r, i) = columns[i][r];
    ds.y[i] = raw_labels[i] == positive ? 1.0 : -1.0;
  }
  ds.validate();
  return ds;
}

inline void write_csv(const LabeledDataset& ds, const std::string& path,
                      const std::string& negative_name, const std::string& positive_name) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  for (int r = 0; r < ds.d(); ++r) {
    const std::string name =
        ds.feature_names.empty() ? "f" + std::to_string(r) : ds.feature_names[r];
    out << name << ",";
  }
  out << "label\n";
  char buf[64];
  for (int i = 0; i < ds.m(); ++i) {
    for (int r = 0; r < ds.d(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.X(r, i));
      out << buf << ",";
    }
    out << (ds.y[i] > 0 ? positive_name : negative_name) << "\n";
  }
  if (!out) throw data_error("write failed for " + path);
}

namespace detail {

inline double clamped_int_draw(Rng& rng, double mean, double sd, double lo, double hi) {
  const double v = std::round(mean + sd * rng.gaussian());
  return std::min(hi, std::max(lo, v));
}

}  // namespace detail

// Synthetic stand-in for the 699-record breast tumor table: nine integer
// cytology grades in 1..10, benign cases low, malignant cases high and more
// spread out.
inline LabeledDataset synthetic_breast_wisc(std::uint64_t seed) {
  constexpr int kBenign = 458;
  constexpr int kMalignant = 241;
  const double benign_mean[9] = {2.9, 1.5, 1.5, 1.5, 2.0, 1.5, 2.0, 1.5, 1.2};
  const double malignant_mean[9] = {7.0, 6.5, 6.5, 5.5, 5.5, 7.5, 6.0, 6.0, 2.5};

  LabeledDataset ds;
  ds.feature_names = {"clump_thickness",  "cell_size_uniformity", "cell_shape_uniformity",
                      "marginal_adhesion", "epithelial_cell_size", "bare_nuclei",
                      "bland_chromatin",   "normal_nucleoli",      "mitoses"};
  ds.X.resize(9, kBenign + kMalignant);
  ds.y.resize(kBenign + kMalignant);
  Rng rng(derive_seed(seed, 0xb1e55u));
  for (int i = 0; i < kBenign + kMalignant; ++i) {
    const bool malignant = i >= kBenign;
    ds.y[i] = malignant ? 1.0 : -1.0;
    for (int r = 0; r < 9; ++r) {
      const double mean = malignant ? malignant_mean[r] : benign_mean[r];
      const double sd = malignant ? 2.5 : 1.2;
      ds.X(r, i) = detail::clamped_int_draw(rng, mean, sd, 1.0, 10.0);
    }
  }
  std::vector<int> order(ds.m());
  for (int i = 0; i < ds.m(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(seed, 0x0deau));
  shuffle_rng.shuffle(order);
  LabeledDataset shuffled = ds;
  for (int i = 0; i < ds.m(); ++i) {
    shuffled.X.col(i) = ds.X.col(order[i]);
    shuffled.y[i] = ds.y[order[i]];
  }
  return shuffled;
}

// Synthetic stand-in for the 748-record blood donation table: months since
// last donation, donation count, total volume (a fixed multiple of the
// count), and months since first donation.
inline LabeledDataset synthetic_transfusion(std::uint64_t seed) {
  constexpr int kNo = 570;
  constexpr int kYes = 178;

  LabeledDataset ds;
  ds.feature_names = {"recency_months", "frequency_times", "monetary_blood", "time_months"};
  ds.X.resize(4, kNo + kYes);
  ds.y.resize(kNo + kYes);
  Rng rng(derive_seed(seed, 0xb100du));
  for (int i = 0; i < kNo + kYes; ++i) {
    const bool donor = i >= kNo;
    ds.y[i] = donor ? 1.0 : -1.0;
    const double recency = donor ? detail::clamped_int_draw(rng, 4.0, 4.0, 0.0, 74.0)
                                 : detail::clamped_int_draw(rng, 11.0, 8.0, 0.0, 74.0);
    const double frequency = donor ? detail::clamped_int_draw(rng, 7.0, 6.0, 1.0, 50.0)
                                   : detail::clamped_int_draw(rng, 4.5, 4.5, 1.0, 50.0);
    const double time = donor ? detail::clamped_int_draw(rng, 28.0, 20.0, 2.0, 98.0)
                              : detail::clamped_int_draw(rng, 35.0, 24.0, 2.0, 98.0);
    ds.X(0, i) = recency;
    ds.X(1, i) = frequency;
    ds.X(2, i) = 250.0 * frequency;
    ds.X(3, i) = time;
  }
  std::vector<int> order(ds.m());
  for (int i = 0; i < ds.m(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(seed, 0x0deau));
  shuffle_rng.shuffle(order);
  LabeledDataset shuffled = ds;
  for (int i = 0; i < ds.m(); ++i) {
    shuffled.X.col(i) = ds.X.col(order[i]);
    shuffled.y[i] = ds.y[order[i]];
  }
  return shuffled;
}

}  // namespace linkfed
