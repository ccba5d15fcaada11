#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointcv/core.hpp"

namespace jointcv {

struct Dataset {
  Mat features;                    // N x p
  std::vector<double> labels;      // N values (class index, outcome, or target)
  std::string name;
  bool standardized = false;
  std::optional<Vec> true_latent;  // ground truth for synthetic data
  std::string label_column = "label";

  int size() const { return static_cast<int>(features.rows()); }
  int num_features() const { return static_cast<int>(features.cols()); }
};

/// Z-score each feature column in place with the population-variance
/// convention (divisor N); constant columns are left untouched.
inline void standardize_columns(Dataset& ds) {
  const double n = static_cast<double>(ds.size());
  for (int j = 0; j < ds.features.cols(); ++j) {
    double mean = ds.features.col(j).mean();
    double var = (ds.features.col(j).array() - mean).square().sum() / n;
    if (var > 0.0)
      ds.features.col(j) = (ds.features.col(j).array() - mean) / std::sqrt(var);
  }
  ds.standardized = true;
}

/// CSV loader: header row, comma-separated, label column selected by name.
inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        bool standardize) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  int label_idx = -1;
  for (size_t j = 0; j < header.size(); ++j)
    if (header[j] == label_column) label_idx = static_cast<int>(j);
  if (label_idx < 0)
    throw std::runtime_error("load_csv: missing label column '" + label_column + "'");

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    int col = 0;
    double label = 0.0;
    while (std::getline(ss, cell, ',')) {
      double value;
      try {
        size_t pos;
        value = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: non-numeric cell at line " +
                                 std::to_string(line_no) + ", column '" +
                                 header[col] + "'");
      }
      if (col == label_idx)
        label = value;
      else
        row.push_back(value);
      ++col;
    }
    if (col != static_cast<int>(header.size()))
      throw std::runtime_error("load_csv: malformed row at line " +
                               std::to_string(line_no));
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  Dataset ds;
  ds.features.resize(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      ds.features(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  ds.labels = std::move(labels);
  ds.name = path;
  ds.label_column = label_column;
  if (standardize) standardize_columns(ds);
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  char buf[64];
  for (int j = 0; j < ds.num_features(); ++j) out << "f" << j << ",";
  out << ds.label_column << "\n";
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.num_features(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, j));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", ds.labels[i]);
    out << buf << "\n";
  }
}

/// Logistic data drawn at a known ground-truth weight vector.
inline Dataset synth_logistic(int n, int p, std::uint64_t seed) {
  if (n < 1 || p < 1) throw std::invalid_argument("synth_logistic: sizes must be positive");
  RngStream rng(seed, /*stream_id=*/1);
  Dataset ds;
  ds.name = "synth-logistic";
  ds.features.resize(n, p);
  for (int i = 0; i < n; ++i)
    ds.features.row(i) = rng.normal_vector(p).transpose();
  Vec z_true = rng.normal_vector(p);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    double s = 1.0 / (1.0 + std::exp(-ds.features.row(i).dot(z_true)));
    ds.labels[i] = rng.uniform() < s ? 1.0 : 0.0;
  }
  ds.true_latent = z_true;
  return ds;
}

/// Match records drawn from Bradley-Terry with ground-truth scores.
/// Features hold (player_a, player_b) as indices; labels hold outcomes.
inline Dataset synth_bradley_terry(int n_matches, int n_players,
                                   std::uint64_t seed) {
  if (n_matches < 1 || n_players < 2)
    throw std::invalid_argument("synth_bradley_terry: sizes must be positive");
  RngStream rng(seed, /*stream_id=*/2);
  Vec theta = rng.normal_vector(n_players);
  Dataset ds;
  ds.name = "synth-bradley-terry";
  ds.features.resize(n_matches, 2);
  ds.labels.resize(n_matches);
  for (int i = 0; i < n_matches; ++i) {
    int a = static_cast<int>(rng.next_u64() % n_players);
    int b = static_cast<int>(rng.next_u64() % (n_players - 1));
    if (b >= a) ++b;
    ds.features(i, 0) = a;
    ds.features(i, 1) = b;
    double s = 1.0 / (1.0 + std::exp(-(theta[a] - theta[b])));
    ds.labels[i] = rng.uniform() < s ? 1.0 : 0.0;
  }
  ds.true_latent = theta;
  return ds;
}

/// Linear-Gaussian regression data at a known latent and noise level.
inline Dataset synth_linear_gaussian(int n, int d, double tau,
                                     std::uint64_t seed) {
  if (n < 1 || d < 1)
    throw std::invalid_argument("synth_linear_gaussian: sizes must be positive");
  RngStream rng(seed, /*stream_id=*/3);
  Dataset ds;
  ds.name = "synth-linear-gaussian";
  ds.features.resize(n, d);
  for (int i = 0; i < n; ++i)
    ds.features.row(i) = rng.normal_vector(d).transpose();
  Vec z_true = rng.normal_vector(d);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i)
    ds.labels[i] = ds.features.row(i).dot(z_true) + tau * rng.normal();
  ds.true_latent = z_true;
  return ds;
}

/// Epoch-reshuffled minibatch scheduler. Within one epoch every index
/// appears exactly once; the last batch may be short when B does not
/// divide N.
class MinibatchSchedule {
 public:
  MinibatchSchedule(int n, int batch_size, RngStream rng)
      : n_(n), batch_(batch_size), rng_(rng) {
    if (n < 1 || batch_size < 1)
      throw std::invalid_argument("MinibatchSchedule: sizes must be positive");
    reshuffle();
  }

  std::vector<int> next_batch() {
    if (cursor_ >= n_) reshuffle();
    int take = std::min(batch_, n_ - cursor_);
    std::vector<int> out(perm_.begin() + cursor_, perm_.begin() + cursor_ + take);
    cursor_ += take;
    return out;
  }

  int batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }
  int epoch() const { return epoch_; }

 private:
  void reshuffle() {
    perm_ = rng_.child(static_cast<std::uint64_t>(epoch_++)).permutation(n_);
    cursor_ = 0;
  }

  int n_, batch_;
  RngStream rng_;
  std::vector<int> perm_;
  int cursor_ = 0;
  int epoch_ = 0;
};

}  // namespace jointcv
