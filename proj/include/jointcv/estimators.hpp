#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointcv/core.hpp"
#include "jointcv/data.hpp"
#include "jointcv/models.hpp"
#include "jointcv/objective.hpp"
#include "jointcv/optimizers.hpp"
#include "jointcv/surrogate.hpp"

namespace jointcv {

/// SAGA state: per-datum parameter snapshots w^1..w^N plus the running mean
/// G of closed-form surrogate expected mu-gradients at the stored anchors.
struct ParamTable {
  std::vector<VariationalParams> entries;
  Vec running_mean;  // mu partition only
  bool initialized = false;

  int size() const { return static_cast<int>(entries.size()); }

  /// From-scratch recomputation of G, for drift checks.
  Vec recompute_running_mean(const Model& model) const {
    Vec acc = Vec::Zero(entries.front().dim());
    for (int n = 0; n < size(); ++n)
      acc += expect_grad_surrogate_mu(model, entries[n], n);
    return acc / static_cast<double>(size());
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ParamTable::save: cannot open " + path);
    char buf[64];
    auto put = [&](double x, char sep) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      out << buf << sep;
    };
    for (const auto& e : entries) {
      Vec flat = e.flatten();
      for (int i = 0; i < flat.size(); ++i)
        put(flat[i], i + 1 == flat.size() ? '\n' : ',');
    }
    for (int i = 0; i < running_mean.size(); ++i)
      put(running_mean[i], i + 1 == running_mean.size() ? '\n' : ',');
  }

  static ParamTable load(const std::string& path, int n_data, int d) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ParamTable::load: cannot open " + path);
    ParamTable table;
    std::string line;
    for (int n = 0; n < n_data; ++n) {
      if (!std::getline(in, line))
        throw std::runtime_error("ParamTable::load: truncated file " + path);
      std::stringstream ss(line);
      Vec flat(2 * d);
      std::string cell;
      for (int i = 0; i < 2 * d; ++i) {
        if (!std::getline(ss, cell, ','))
          throw std::runtime_error("ParamTable::load: short row in " + path);
        flat[i] = std::stod(cell);
      }
      table.entries.push_back(VariationalParams::unflatten(flat));
    }
    if (!std::getline(in, line))
      throw std::runtime_error("ParamTable::load: missing running-mean row");
    std::stringstream ss(line);
    table.running_mean.resize(d);
    std::string cell;
    for (int i = 0; i < d; ++i) {
      if (!std::getline(ss, cell, ','))
        throw std::runtime_error("ParamTable::load: short running-mean row");
      table.running_mean[i] = std::stod(cell);
    }
    table.initialized = true;
    return table;
  }
};

/// SVRG state: one snapshot and the full-pass surrogate mean at it.
struct SvrgState {
  VariationalParams snapshot;
  Vec snapshot_mean;  // g_bar, mu partition
  long update_frequency = 0;
  long steps_since_refresh = 0;

  static SvrgState init(const Model& model, const VariationalParams& w, long k,
                        OracleCounter* counter = nullptr) {
    if (k <= 0) throw std::invalid_argument("SvrgState: update frequency must be > 0");
    SvrgState s;
    s.snapshot = w;
    s.update_frequency = k;
    s.refresh_mean(model, counter);
    return s;
  }

  void refresh_mean(const Model& model, OracleCounter* counter) {
    Vec acc = Vec::Zero(snapshot.dim());
    for (int n = 0; n < model.data_count(); ++n)
      acc += expect_grad_surrogate_mu(model, snapshot, n, counter);
    snapshot_mean = acc / static_cast<double>(model.data_count());
    steps_since_refresh = 0;
  }
};

inline GradientVector g_naive(const Model& model, const VariationalParams& w,
                              int n, const Vec& eps,
                              OracleCounter* counter = nullptr) {
  return grad_f(model, w, n, eps, counter);
}

/// Approximation-based control variate anchored at the current w; controls
/// the mu partition only.
inline GradientVector g_cv(const Model& model, const VariationalParams& w,
                           int n, const Vec& eps,
                           OracleCounter* counter = nullptr) {
  GradientVector g = grad_f(model, w, n, eps, counter);
  SurrogatePair sp = surrogate_mu_pair(model, w, n, eps, counter);
  g.mu_part += sp.expect - sp.at_eps;
  return g;
}

/// SAGA-style estimator evaluated for the sampled eps. Needs a full pass
/// over the stored table, so it costs N+2 gradients per call.
inline GradientVector g_inc(const Model& model, const VariationalParams& w,
                            int n, const Vec& eps, const ParamTable& table,
                            OracleCounter* counter = nullptr) {
  if (!table.initialized) throw std::invalid_argument("g_inc: table not initialized");
  GradientVector g = grad_f(model, w, n, eps, counter);
  GradientVector mean = GradientVector::zero(w.dim());
  for (int m = 0; m < table.size(); ++m)
    mean += grad_f(model, table.entries[m], m, eps, counter);
  mean *= 1.0 / table.size();
  g += mean;
  g -= grad_f(model, table.entries[n], n, eps, counter);
  return g;
}

/// Convex combination of the cv and inc control variates. O(N) per call;
/// used for invariant testing, not benchmark runs.
inline GradientVector g_ensemble(const Model& model, const VariationalParams& w,
                                 int n, const Vec& eps, double beta,
                                 const ParamTable& table,
                                 OracleCounter* counter = nullptr) {
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("g_ensemble: beta must be in (0,1)");
  if (!table.initialized)
    throw std::invalid_argument("g_ensemble: table not initialized");

  GradientVector g = grad_f(model, w, n, eps, counter);

  SurrogatePair sp = surrogate_mu_pair(model, w, n, eps, counter);
  Vec c_cv_mu = sp.expect - sp.at_eps;

  GradientVector mean = GradientVector::zero(w.dim());
  for (int m = 0; m < table.size(); ++m)
    mean += grad_f(model, table.entries[m], m, eps, counter);
  mean *= 1.0 / table.size();
  GradientVector c_inc = mean - grad_f(model, table.entries[n], n, eps, counter);

  g.mu_part += beta * c_cv_mu;
  g += (1.0 - beta) * c_inc;
  return g;
}

/// Joint control variate, SAGA variant. Computes all control-variate terms
/// with the pre-step table, then applies the table and running-mean updates
/// for every index in the batch. Costs 2 gradients + 1 HVP per datum.
inline GradientVector g_joint_saga(const Model& model, const VariationalParams& w,
                                   const std::vector<int>& batch, const Vec& eps,
                                   ParamTable& table,
                                   OracleCounter* counter = nullptr) {
  if (!table.initialized)
    throw std::invalid_argument("g_joint_saga: table not initialized");
  if (batch.empty()) throw std::invalid_argument("g_joint_saga: empty batch");
  if (std::set<int>(batch.begin(), batch.end()).size() != batch.size())
    throw std::invalid_argument("g_joint_saga: duplicate indices in batch");

  const double n_data = static_cast<double>(table.size());
  GradientVector acc = GradientVector::zero(w.dim());
  std::vector<Vec> old_expect;
  old_expect.reserve(batch.size());

  for (int n : batch) {
    GradientVector g = grad_f(model, w, n, eps, counter);
    SurrogatePair sp = surrogate_mu_pair(model, table.entries[n], n, eps, counter);
    g.mu_part += table.running_mean - sp.at_eps;
    acc += g;
    old_expect.push_back(std::move(sp.expect));
  }
  acc *= 1.0 / static_cast<double>(batch.size());

  for (size_t i = 0; i < batch.size(); ++i) {
    int n = batch[i];
    Vec new_expect = expect_grad_surrogate_mu(model, w, n, counter);
    table.running_mean += (new_expect - old_expect[i]) / n_data;
    table.entries[n] = w;
  }
  return acc;
}

/// Joint control variate, SVRG variant: anchors at a periodic snapshot
/// instead of a per-datum table. Refreshes the snapshot every K steps with
/// a full pass (N gradients, amortized N/K per step).
inline GradientVector g_joint_svrg(const Model& model, const VariationalParams& w,
                                   const std::vector<int>& batch, const Vec& eps,
                                   SvrgState& state,
                                   OracleCounter* counter = nullptr) {
  if (state.update_frequency <= 0)
    throw std::invalid_argument("g_joint_svrg: state not initialized");
  if (batch.empty()) throw std::invalid_argument("g_joint_svrg: empty batch");

  if (state.steps_since_refresh >= state.update_frequency) {
    state.snapshot = w;
    state.refresh_mean(model, counter);
  }

  GradientVector acc = GradientVector::zero(w.dim());
  for (int n : batch) {
    GradientVector g = grad_f(model, w, n, eps, counter);
    g.mu_part += state.snapshot_mean -
                 grad_surrogate_mu(model, state.snapshot, n, eps, counter);
    acc += g;
  }
  acc *= 1.0 / static_cast<double>(batch.size());
  ++state.steps_since_refresh;
  return acc;
}

/// One epoch of naive-estimator optimization; each table entry records the
/// parameters at the iteration its datum was visited (pre-step), then G is
/// filled by one full pass at the stored anchors.
inline ParamTable init_table(const Model& model, VariationalParams& w,
                             Optimizer& opt, MinibatchSchedule& schedule,
                             RngStream& rng, OracleCounter* counter = nullptr) {
  const int n_data = model.data_count();
  ParamTable table;
  table.entries.assign(n_data, w);

  for (int b = 0; b < schedule.batches_per_epoch(); ++b) {
    std::vector<int> batch = schedule.next_batch();
    Vec eps = rng.normal_vector(w.dim());
    GradientVector g = GradientVector::zero(w.dim());
    for (int n : batch) {
      table.entries[n] = w;
      g += g_naive(model, w, n, eps, counter);
    }
    g *= 1.0 / static_cast<double>(batch.size());
    w = opt.step(w, g);
  }

  Vec acc = Vec::Zero(w.dim());
  for (int n = 0; n < n_data; ++n)
    acc += expect_grad_surrogate_mu(model, table.entries[n], n, counter);
  table.running_mean = acc / static_cast<double>(n_data);
  table.initialized = true;
  return table;
}

}  // namespace jointcv
