#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "jointcv/core.hpp"

namespace jointcv {

/// Per-datum model contract: log-likelihood, its latent-space gradient and
/// Hessian-vector product, plus prior terms. The default prior is standard
/// Gaussian on the latent vector.
class Model {
 public:
  virtual ~Model() = default;

  virtual int data_count() const = 0;
  virtual int latent_dim() const = 0;

  virtual double log_lik(int n, const Vec& z) const = 0;
  virtual Vec grad_log_lik(int n, const Vec& z) const = 0;
  virtual Vec hvp_log_lik(int n, const Vec& z, const Vec& v) const = 0;

  virtual double log_prior(const Vec& z) const {
    const double d = static_cast<double>(z.size());
    return -0.5 * z.squaredNorm() - 0.5 * d * std::log(2.0 * M_PI);
  }
  virtual Vec grad_log_prior(const Vec& z) const { return -z; }
  virtual Vec hvp_log_prior(const Vec&, const Vec& v) const { return -v; }

 protected:
  void check_inputs(int n, const Vec& z) const {
    if (n < 0 || n >= data_count())
      throw std::out_of_range("Model: datum index out of range");
    if (z.size() != latent_dim())
      throw std::invalid_argument("Model: latent vector has wrong length");
    if (!z.allFinite())
      throw std::invalid_argument("Model: non-finite latent vector");
  }
};

/// k_n(z) = N * log p(x_n | z) + log p(z). The N factor makes uniform
/// subsampling of n unbiased for the full log-joint.
inline double k_n(const Model& m, int n, const Vec& z) {
  return m.data_count() * m.log_lik(n, z) + m.log_prior(z);
}

inline Vec grad_k_n(const Model& m, int n, const Vec& z,
                    OracleCounter* counter = nullptr) {
  if (counter) ++counter->grad_calls;
  return m.data_count() * m.grad_log_lik(n, z) + m.grad_log_prior(z);
}

inline Vec hvp_k_n(const Model& m, int n, const Vec& z, const Vec& v,
                   OracleCounter* counter = nullptr) {
  if (counter) ++counter->hvp_calls;
  return m.data_count() * m.hvp_log_lik(n, z, v) + m.hvp_log_prior(z, v);
}

namespace detail {
// log(sigmoid(t)), stable for large |t|.
inline double log_sigmoid(double t) {
  return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}
inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}
}  // namespace detail

/// Bayesian binary logistic regression with standard Gaussian prior on the
/// weight vector. Labels in {0,1}.
class BinaryLogisticModel : public Model {
 public:
  BinaryLogisticModel(Mat features, std::vector<int> labels)
      : x_(std::move(features)), y_(std::move(labels)) {
    if (static_cast<int>(y_.size()) != x_.rows())
      throw std::invalid_argument("BinaryLogisticModel: label count mismatch");
    for (int y : y_)
      if (y != 0 && y != 1)
        throw std::invalid_argument("BinaryLogisticModel: labels must be 0/1");
  }

  int data_count() const override { return static_cast<int>(x_.rows()); }
  int latent_dim() const override { return static_cast<int>(x_.cols()); }

  double log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    double t = x_.row(n).dot(z);
    return detail::log_sigmoid(y_[n] == 1 ? t : -t);
  }
  Vec grad_log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    double s = detail::sigmoid(x_.row(n).dot(z));
    return (y_[n] - s) * x_.row(n).transpose();
  }
  Vec hvp_log_lik(int n, const Vec& z, const Vec& v) const override {
    check_inputs(n, z);
    double s = detail::sigmoid(x_.row(n).dot(z));
    return -s * (1.0 - s) * x_.row(n).dot(v) * x_.row(n).transpose();
  }

 private:
  Mat x_;
  std::vector<int> y_;
};

/// Multiclass logistic regression; latent is the row-major flattened K x p
/// weight matrix (d = p*K). The HVP uses the exact softmax Hessian.
class MulticlassLogisticModel : public Model {
 public:
  MulticlassLogisticModel(Mat features, std::vector<int> labels, int num_classes)
      : x_(std::move(features)), y_(std::move(labels)), k_(num_classes) {
    if (static_cast<int>(y_.size()) != x_.rows())
      throw std::invalid_argument("MulticlassLogisticModel: label count mismatch");
    for (int y : y_)
      if (y < 0 || y >= k_)
        throw std::invalid_argument("MulticlassLogisticModel: label out of range");
  }

  int data_count() const override { return static_cast<int>(x_.rows()); }
  int latent_dim() const override { return k_ * static_cast<int>(x_.cols()); }
  int num_classes() const { return k_; }

  double log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    Vec u = logits(n, z);
    double mx = u.maxCoeff();
    double lse = mx + std::log((u.array() - mx).exp().sum());
    return u[y_[n]] - lse;
  }
  Vec grad_log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    Vec p = softmax(logits(n, z));
    p[y_[n]] -= 1.0;
    return outer_flat(-p, n);
  }
  Vec hvp_log_lik(int n, const Vec& z, const Vec& v) const override {
    check_inputs(n, z);
    const int p_dim = static_cast<int>(x_.cols());
    Vec p = softmax(logits(n, z));
    // a = V x, where V is the direction reshaped K x p.
    Vec a(k_);
    for (int c = 0; c < k_; ++c)
      a[c] = v.segment(c * p_dim, p_dim).dot(x_.row(n));
    Vec h = p.cwiseProduct(a) - p * p.dot(a);  // (diag(p) - p p^T) a
    return outer_flat(-h, n);
  }

 private:
  Vec logits(int n, const Vec& z) const {
    const int p_dim = static_cast<int>(x_.cols());
    Vec u(k_);
    for (int c = 0; c < k_; ++c)
      u[c] = z.segment(c * p_dim, p_dim).dot(x_.row(n));
    return u;
  }
  static Vec softmax(const Vec& u) {
    Vec e = (u.array() - u.maxCoeff()).exp();
    return e / e.sum();
  }
  // Flattened c x_n^T stacked over classes, weighted by coef[c].
  Vec outer_flat(const Vec& coef, int n) const {
    const int p_dim = static_cast<int>(x_.cols());
    Vec out(k_ * p_dim);
    for (int c = 0; c < k_; ++c)
      out.segment(c * p_dim, p_dim) = coef[c] * x_.row(n).transpose();
    return out;
  }

  Mat x_;
  std::vector<int> y_;
  int k_;
};

/// Bradley-Terry pairwise comparison model; latent is the vector of player
/// scores. Each match touches exactly two coordinates of the likelihood.
class BradleyTerryModel : public Model {
 public:
  struct Match {
    int player_a;
    int player_b;
    int outcome;  // 1 = a wins
  };

  BradleyTerryModel(std::vector<Match> matches, int num_players)
      : matches_(std::move(matches)), m_(num_players) {
    for (const auto& match : matches_) {
      if (match.player_a < 0 || match.player_a >= m_ || match.player_b < 0 ||
          match.player_b >= m_)
        throw std::invalid_argument("BradleyTerryModel: player index out of range");
      if (match.outcome != 0 && match.outcome != 1)
        throw std::invalid_argument("BradleyTerryModel: outcome must be 0/1");
    }
  }

  int data_count() const override { return static_cast<int>(matches_.size()); }
  int latent_dim() const override { return m_; }

  double log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    const auto& mt = matches_[n];
    double t = z[mt.player_a] - z[mt.player_b];
    return detail::log_sigmoid(mt.outcome == 1 ? t : -t);
  }
  Vec grad_log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    const auto& mt = matches_[n];
    double s = detail::sigmoid(z[mt.player_a] - z[mt.player_b]);
    Vec g = Vec::Zero(m_);
    g[mt.player_a] = mt.outcome - s;
    g[mt.player_b] = -(mt.outcome - s);
    return g;
  }
  Vec hvp_log_lik(int n, const Vec& z, const Vec& v) const override {
    check_inputs(n, z);
    const auto& mt = matches_[n];
    double s = detail::sigmoid(z[mt.player_a] - z[mt.player_b]);
    double c = -s * (1.0 - s) * (v[mt.player_a] - v[mt.player_b]);
    Vec h = Vec::Zero(m_);
    h[mt.player_a] = c;
    h[mt.player_b] = -c;
    return h;
  }

 private:
  std::vector<Match> matches_;
  int m_;
};

/// Linear regression with Gaussian noise and standard Gaussian prior.
/// k_n(z) is an exact quadratic, so the second-order surrogate is exact:
/// the test oracle for every "perfect approximation" idealization.
class LinearGaussianModel : public Model {
 public:
  LinearGaussianModel(Mat features, Vec targets, double noise_var)
      : x_(std::move(features)), y_(std::move(targets)), tau2_(noise_var) {
    if (y_.size() != x_.rows())
      throw std::invalid_argument("LinearGaussianModel: target count mismatch");
    if (tau2_ <= 0.0)
      throw std::invalid_argument("LinearGaussianModel: noise variance must be > 0");
  }

  int data_count() const override { return static_cast<int>(x_.rows()); }
  int latent_dim() const override { return static_cast<int>(x_.cols()); }
  double noise_var() const { return tau2_; }
  const Mat& features() const { return x_; }
  const Vec& targets() const { return y_; }

  double log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    double r = x_.row(n).dot(z) - y_[n];
    return -0.5 * std::log(2.0 * M_PI * tau2_) - 0.5 * r * r / tau2_;
  }
  Vec grad_log_lik(int n, const Vec& z) const override {
    check_inputs(n, z);
    double r = x_.row(n).dot(z) - y_[n];
    return (-r / tau2_) * x_.row(n).transpose();
  }
  Vec hvp_log_lik(int n, const Vec& z, const Vec& v) const override {
    check_inputs(n, z);
    return (-x_.row(n).dot(v) / tau2_) * x_.row(n).transpose();
  }

  /// Exact full-data gradient of the expected objective's mu-part at eps=0
  /// anchors; used by test oracles. mean_n grad_k_n(mu) is exact since
  /// grad_k_n is linear in z.
  Vec exact_mean_grad_k(const Vec& mu) const {
    Vec acc = Vec::Zero(latent_dim());
    for (int n = 0; n < data_count(); ++n)
      acc += data_count() * grad_log_lik(n, mu) + grad_log_prior(mu);
    return acc / data_count();
  }

 private:
  Mat x_;
  Vec y_;
  double tau2_;
};

}  // namespace jointcv
