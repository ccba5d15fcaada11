#pragma once

#include <cstdint>
#include <vector>

#include "jointcv/core.hpp"
#include "jointcv/models.hpp"
#include "jointcv/objective.hpp"

namespace jointcv {

/// Trace-variance estimates for the three noise decompositions of the naive
/// gradient: joint (n, eps), subsampling-only (n), and Monte-Carlo-only (eps).
struct VarianceDecomposition {
  double v_joint = 0.0;
  double v_subsampling = 0.0;
  double v_mc = 0.0;
  int samples_joint = 0;
  int samples_inner = 0;
  int samples_eps = 0;
};

/// Unbiased sample trace-variance of grad_f(w, n_s, eps_s) over S i.i.d.
/// (n, eps) pairs.
inline double estimate_joint_variance(const Model& model,
                                      const VariationalParams& w, int s,
                                      RngStream rng,
                                      OracleCounter* counter = nullptr) {
  if (s < 2) throw std::invalid_argument("estimate_joint_variance: S must be >= 2");
  std::vector<Vec> samples;
  samples.reserve(s);
  for (int i = 0; i < s; ++i) {
    RngStream sub = rng.child(static_cast<std::uint64_t>(i));
    int n = static_cast<int>(sub.next_u64() % model.data_count());
    Vec eps = sub.normal_vector(w.dim());
    samples.push_back(grad_f(model, w, n, eps, counter).flatten());
  }
  return trace_variance(samples);
}

/// Trace-variance of the per-datum expected gradient E_eps[grad_f(w, n, .)],
/// across full n enumeration. The inner expectation is approximated with
/// s_inner draws per datum; the across-n variance is then debiased by the
/// inner Monte Carlo noise it inherits:
///   V_hat = pop-var_n(mean_n) - (N-1)/(N*S_inner) * mean_n(inner-var_n)
/// Across-n variance uses the population convention (divisor N) since n is
/// enumerated exactly.
inline double estimate_subsampling_variance(const Model& model,
                                            const VariationalParams& w,
                                            int s_inner, RngStream rng,
                                            OracleCounter* counter = nullptr) {
  if (s_inner < 2)
    throw std::invalid_argument("estimate_subsampling_variance: S_inner must be >= 2");
  const int n_data = model.data_count();
  if (n_data == 1) return 0.0;

  std::vector<Vec> means;
  means.reserve(n_data);
  double mean_inner_var = 0.0;
  for (int n = 0; n < n_data; ++n) {
    std::vector<Vec> inner;
    inner.reserve(s_inner);
    RngStream sub = rng.child(static_cast<std::uint64_t>(n));
    for (int i = 0; i < s_inner; ++i) {
      Vec eps = sub.normal_vector(w.dim());
      inner.push_back(grad_f(model, w, n, eps, counter).flatten());
    }
    Vec m = Vec::Zero(2 * w.dim());
    for (const auto& x : inner) m += x;
    m /= static_cast<double>(s_inner);
    mean_inner_var += trace_variance(inner);
    means.push_back(std::move(m));
  }
  mean_inner_var /= static_cast<double>(n_data);

  Vec grand = Vec::Zero(2 * w.dim());
  for (const auto& m : means) grand += m;
  grand /= static_cast<double>(n_data);
  double pop_var = 0.0;
  for (const auto& m : means) pop_var += (m - grand).squaredNorm();
  pop_var /= static_cast<double>(n_data);

  double corrected = pop_var - (static_cast<double>(n_data - 1) / n_data) *
                                   mean_inner_var / s_inner;
  return corrected > 0.0 ? corrected : 0.0;
}

/// Trace-variance of the full-dataset gradient across s_eps noise draws.
/// Costs s_eps * N gradient oracles.
inline double estimate_mc_variance(const Model& model,
                                   const VariationalParams& w, int s_eps,
                                   RngStream rng,
                                   OracleCounter* counter = nullptr) {
  if (s_eps < 2) throw std::invalid_argument("estimate_mc_variance: S_eps must be >= 2");
  std::vector<Vec> samples;
  samples.reserve(s_eps);
  for (int i = 0; i < s_eps; ++i) {
    Vec eps = rng.child(static_cast<std::uint64_t>(i)).normal_vector(w.dim());
    samples.push_back(grad_f_full_epoch(model, w, eps, counter).flatten());
  }
  return trace_variance(samples);
}

inline VarianceDecomposition decompose_variance(const Model& model,
                                                const VariationalParams& w,
                                                int s_joint, int s_inner,
                                                int s_eps, RngStream rng) {
  VarianceDecomposition out;
  out.v_joint = estimate_joint_variance(model, w, s_joint, rng.child(101));
  out.v_subsampling = estimate_subsampling_variance(model, w, s_inner, rng.child(102));
  out.v_mc = estimate_mc_variance(model, w, s_eps, rng.child(103));
  out.samples_joint = s_joint;
  out.samples_inner = s_inner;
  out.samples_eps = s_eps;
  return out;
}

/// Full-data ELBO (sign-flipped negative ELBO), averaged over s noise draws.
inline double evaluate_elbo(const Model& model, const VariationalParams& w,
                            int s, RngStream rng) {
  if (s < 1) throw std::invalid_argument("evaluate_elbo: S must be >= 1");
  const int n_data = model.data_count();
  double acc = 0.0;
  for (int i = 0; i < s; ++i) {
    Vec eps = rng.child(static_cast<std::uint64_t>(i)).normal_vector(w.dim());
    double per_eps = 0.0;
    for (int n = 0; n < n_data; ++n) per_eps += eval_f(model, w, n, eps);
    acc += per_eps / n_data;
  }
  return -acc / s;
}

/// One optimization step's diagnostics row.
struct TraceRecord {
  long iteration = 0;
  long epoch = 0;
  double elbo = 0.0;
  double v_joint = 0.0;
  double v_sub = 0.0;
  double v_mc = 0.0;
  std::uint64_t grad_calls = 0;
  std::uint64_t hvp_calls = 0;
  double step_size = 0.0;
  std::uint64_t seed = 0;
};

}  // namespace jointcv
