#pragma once

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "jointcv/core.hpp"
#include "jointcv/data.hpp"

namespace jointcv {

// Generalized linear model with Gaussian feature dropout:
//   f(w; n, eps) = L(y_n, W (eps .* x_n)),  eps ~ Normal(1, sigma_drop^2 I).
// The surrogate is the second-order Taylor expansion of f in eps around
// eps = 1, whose eps-expectation is closed-form.

enum class GlmLoss { kSquaredError, kSoftmaxCrossEntropy };

struct DropoutGlm {
  Mat features;              // N x D
  Mat targets;               // N x K (squared error)
  std::vector<int> classes;  // N class labels (cross-entropy)
  int num_outputs = 0;       // K
  GlmLoss loss = GlmLoss::kSquaredError;
  double sigma_drop = 0.5;

  int data_count() const { return static_cast<int>(features.rows()); }
  int input_dim() const { return static_cast<int>(features.cols()); }

  void check(int n, const Mat& w) const {
    if (n < 0 || n >= data_count())
      throw std::out_of_range("DropoutGlm: datum index out of range");
    if (w.rows() != num_outputs || w.cols() != input_dim())
      throw std::invalid_argument("DropoutGlm: weight shape mismatch");
  }
};

namespace glm_detail {

inline Vec softmax(const Vec& u) {
  Vec e = (u.array() - u.maxCoeff()).exp();
  return e / e.sum();
}

// Loss derivatives at prediction phi: value, l' (K), and l''-products.
inline double loss_value(const DropoutGlm& g, int n, const Vec& phi) {
  if (g.loss == GlmLoss::kSquaredError)
    return 0.5 * (phi - g.targets.row(n).transpose()).squaredNorm();
  double mx = phi.maxCoeff();
  double lse = mx + std::log((phi.array() - mx).exp().sum());
  return lse - phi[g.classes[n]];
}

inline Vec loss_grad(const DropoutGlm& g, int n, const Vec& phi) {
  if (g.loss == GlmLoss::kSquaredError)
    return phi - g.targets.row(n).transpose();
  Vec r = softmax(phi);
  r[g.classes[n]] -= 1.0;
  return r;
}

// l''(phi) * a
inline Vec hess_apply(const DropoutGlm& g, const Vec& phi, const Vec& a) {
  if (g.loss == GlmLoss::kSquaredError) return a;
  Vec p = softmax(phi);
  return p.cwiseProduct(a) - p * p.dot(a);
}

// a^T l''(phi) a
inline double hess_quad(const DropoutGlm& g, const Vec& phi, const Vec& a) {
  return a.dot(hess_apply(g, phi, a));
}

// Contraction of the third derivative of the loss with a symmetric rank
// structure: u_l = sum_{k,m} L'''_{kml} M_{km}, specialized to M = a a^T
// (third_contract_outer) and general symmetric M (third_contract_sym).
// Zero for squared error; softmax third-derivative algebra otherwise.
inline Vec third_contract_outer(const DropoutGlm& g, const Vec& phi, const Vec& a) {
  if (g.loss == GlmLoss::kSquaredError) return Vec::Zero(phi.size());
  Vec p = softmax(phi);
  double pa = p.dot(a);
  double pa2 = p.dot(a.cwiseProduct(a));
  return (p.array() *
          (a.array().square() - pa2 - 2.0 * a.array() * pa + 2.0 * pa * pa))
      .matrix();
}

inline Vec third_contract_sym(const DropoutGlm& g, const Vec& phi, const Mat& m) {
  if (g.loss == GlmLoss::kSquaredError) return Vec::Zero(phi.size());
  Vec p = softmax(phi);
  Vec mp = m * p;
  double pdiag = p.dot(m.diagonal());
  double pmp = p.dot(mp);
  return (p.array() *
          (m.diagonal().array() - pdiag - 2.0 * mp.array() + 2.0 * pmp))
      .matrix();
}

}  // namespace glm_detail

inline double glm_f(const DropoutGlm& g, const Mat& w, int n, const Vec& eps) {
  g.check(n, w);
  Vec xt = eps.cwiseProduct(g.features.row(n).transpose());
  return glm_detail::loss_value(g, n, w * xt);
}

/// Naive gradient of the dropout loss with respect to the weights.
inline Mat glm_grad(const DropoutGlm& g, const Mat& w, int n, const Vec& eps,
                    OracleCounter* counter = nullptr) {
  g.check(n, w);
  if (counter) ++counter->grad_calls;
  Vec xt = eps.cwiseProduct(g.features.row(n).transpose());
  return glm_detail::loss_grad(g, n, w * xt) * xt.transpose();
}

/// Closed-form eps-expectation of the Taylor surrogate:
///   f(w; n, 1) + sigma^2/2 * tr(Hess_eps f(w; n, 1))
/// with the Hessian trace contracted analytically per loss.
inline double glm_surrogate_expectation(const DropoutGlm& g, const Mat& w, int n) {
  g.check(n, w);
  Vec x = g.features.row(n).transpose();
  Vec phi = w * x;
  double tr = 0.0;
  for (int i = 0; i < g.input_dim(); ++i)
    tr += x[i] * x[i] * glm_detail::hess_quad(g, phi, w.col(i));
  return glm_detail::loss_value(g, n, phi) +
         0.5 * g.sigma_drop * g.sigma_drop * tr;
}

/// w-gradient of glm_surrogate_expectation. Includes the loss third-
/// derivative contribution of the trace term for cross-entropy.
inline Mat glm_expect_grad_surrogate(const DropoutGlm& g, const Mat& w, int n,
                                     OracleCounter* counter = nullptr) {
  g.check(n, w);
  if (counter) ++counter->grad_calls;
  Vec x = g.features.row(n).transpose();
  Vec phi = w * x;
  const double s2 = g.sigma_drop * g.sigma_drop;

  Mat out = glm_detail::loss_grad(g, n, phi) * x.transpose();
  Mat w_x2 = w * x.cwiseProduct(x).asDiagonal();  // W diag(x^2)
  for (int i = 0; i < g.input_dim(); ++i)
    out.col(i) += s2 * glm_detail::hess_apply(g, phi, w_x2.col(i));
  Mat m = w_x2 * w.transpose();  // W diag(x^2) W^T, symmetric
  out += 0.5 * s2 * glm_detail::third_contract_sym(g, phi, m) * x.transpose();
  return out;
}

/// w-gradient of the Taylor surrogate at a sampled eps, expanded term by
/// term (the Taylor coefficients depend on w through phi = W x).
inline Mat glm_grad_surrogate(const DropoutGlm& g, const Mat& w, int n,
                              const Vec& eps, OracleCounter* counter = nullptr) {
  g.check(n, w);
  if (counter) {
    ++counter->grad_calls;
    ++counter->hvp_calls;
  }
  Vec x = g.features.row(n).transpose();
  Vec dt = (eps.array() - 1.0).matrix().cwiseProduct(x);  // (eps-1) .* x
  Vec phi = w * x;
  Vec r = glm_detail::loss_grad(g, n, phi);
  Vec a = w * dt;
  Vec ha = glm_detail::hess_apply(g, phi, a);

  Mat out = r * x.transpose();
  out += r * dt.transpose() + ha * x.transpose();
  out += ha * dt.transpose() +
         0.5 * glm_detail::third_contract_outer(g, phi, a) * x.transpose();
  return out;
}

struct GlmSurrogatePair {
  Mat expect;
  Mat at_eps;
};

/// Fused expectation + sampled-eps surrogate gradients at one anchor,
/// billed as a single HVP-style oracle call.
inline GlmSurrogatePair glm_surrogate_pair(const DropoutGlm& g, const Mat& w,
                                           int n, const Vec& eps,
                                           OracleCounter* counter = nullptr) {
  if (counter) ++counter->hvp_calls;
  return {glm_expect_grad_surrogate(g, w, n), glm_grad_surrogate(g, w, n, eps)};
}

struct GlmParamTable {
  std::vector<Mat> entries;
  Mat running_mean;
  bool initialized = false;

  int size() const { return static_cast<int>(entries.size()); }

  Mat recompute_running_mean(const DropoutGlm& g) const {
    Mat acc = Mat::Zero(entries.front().rows(), entries.front().cols());
    for (int n = 0; n < size(); ++n)
      acc += glm_expect_grad_surrogate(g, entries[n], n);
    return acc / static_cast<double>(size());
  }
};

inline Mat glm_g_naive(const DropoutGlm& g, const Mat& w, int n, const Vec& eps,
                       OracleCounter* counter = nullptr) {
  return glm_grad(g, w, n, eps, counter);
}

inline Mat glm_g_cv(const DropoutGlm& g, const Mat& w, int n, const Vec& eps,
                    OracleCounter* counter = nullptr) {
  Mat out = glm_grad(g, w, n, eps, counter);
  GlmSurrogatePair sp = glm_surrogate_pair(g, w, n, eps, counter);
  return out + sp.expect - sp.at_eps;
}

/// Joint control variate for the dropout GLM; same sequencing and
/// accounting as the BBVI SAGA variant.
inline Mat glm_joint_estimator(const DropoutGlm& g, const Mat& w,
                               const std::vector<int>& batch, const Vec& eps,
                               GlmParamTable& table,
                               OracleCounter* counter = nullptr) {
  if (!table.initialized)
    throw std::invalid_argument("glm_joint_estimator: table not initialized");
  if (batch.empty()) throw std::invalid_argument("glm_joint_estimator: empty batch");
  if (std::set<int>(batch.begin(), batch.end()).size() != batch.size())
    throw std::invalid_argument("glm_joint_estimator: duplicate indices in batch");

  const double n_data = static_cast<double>(table.size());
  Mat acc = Mat::Zero(w.rows(), w.cols());
  std::vector<Mat> old_expect;
  old_expect.reserve(batch.size());
  for (int n : batch) {
    GlmSurrogatePair sp = glm_surrogate_pair(g, table.entries[n], n, eps, counter);
    acc += glm_grad(g, w, n, eps, counter) + table.running_mean - sp.at_eps;
    old_expect.push_back(std::move(sp.expect));
  }
  acc /= static_cast<double>(batch.size());

  for (size_t i = 0; i < batch.size(); ++i) {
    int n = batch[i];
    Mat new_expect = glm_expect_grad_surrogate(g, w, n, counter);
    table.running_mean += (new_expect - old_expect[i]) / n_data;
    table.entries[n] = w;
  }
  return acc;
}

/// One epoch of naive SGD to seed the table, then one closed-form pass for
/// the running mean.
inline GlmParamTable glm_init_table(const DropoutGlm& g, Mat& w,
                                    double step_size,
                                    MinibatchSchedule& schedule, RngStream& rng,
                                    OracleCounter* counter = nullptr) {
  GlmParamTable table;
  table.entries.assign(g.data_count(), w);
  for (int b = 0; b < schedule.batches_per_epoch(); ++b) {
    std::vector<int> batch = schedule.next_batch();
    Vec eps = Vec::Ones(g.input_dim()) +
              g.sigma_drop * rng.normal_vector(g.input_dim());
    Mat grad = Mat::Zero(w.rows(), w.cols());
    for (int n : batch) {
      table.entries[n] = w;
      grad += glm_g_naive(g, w, n, eps, counter);
    }
    grad /= static_cast<double>(batch.size());
    w -= step_size * grad;
  }
  Mat acc = Mat::Zero(w.rows(), w.cols());
  for (int n = 0; n < g.data_count(); ++n)
    acc += glm_expect_grad_surrogate(g, table.entries[n], n, counter);
  table.running_mean = acc / static_cast<double>(g.data_count());
  table.initialized = true;
  return table;
}

/// Synthetic Gaussian-feature instance for either loss.
inline DropoutGlm synth_dropout_glm(int n, int d, int k, GlmLoss loss,
                                    double sigma_drop, std::uint64_t seed) {
  RngStream rng(seed, /*stream_id=*/4);
  DropoutGlm g;
  g.loss = loss;
  g.sigma_drop = sigma_drop;
  g.num_outputs = k;
  g.features.resize(n, d);
  for (int i = 0; i < n; ++i)
    g.features.row(i) = rng.normal_vector(d).transpose();
  Mat w_true(k, d);
  for (int r = 0; r < k; ++r) w_true.row(r) = rng.normal_vector(d).transpose();
  if (loss == GlmLoss::kSquaredError) {
    g.targets.resize(n, k);
    for (int i = 0; i < n; ++i)
      g.targets.row(i) =
          (w_true * g.features.row(i).transpose() + 0.1 * rng.normal_vector(k))
              .transpose();
  } else {
    g.classes.resize(n);
    for (int i = 0; i < n; ++i) {
      Vec p = glm_detail::softmax(w_true * g.features.row(i).transpose());
      double u = rng.uniform(), cum = 0.0;
      int cls = k - 1;
      for (int c = 0; c < k; ++c) {
        cum += p[c];
        if (u < cum) {
          cls = c;
          break;
        }
      }
      g.classes[i] = cls;
    }
  }
  return g;
}

}  // namespace jointcv
