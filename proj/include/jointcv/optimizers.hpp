#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "jointcv/core.hpp"
#include "jointcv/objective.hpp"

namespace jointcv {

/// Step rule consuming gradient estimates over (mu, log_sigma).
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual VariationalParams step(const VariationalParams& w,
                                 const GradientVector& g) = 0;
  virtual void reset() {}
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double step_size) : lambda_(step_size) {
    if (lambda_ < 0.0) throw std::invalid_argument("Sgd: step size must be >= 0");
  }

  VariationalParams step(const VariationalParams& w,
                         const GradientVector& g) override {
    return {w.mu - lambda_ * g.mu_part, w.log_sigma - lambda_ * g.log_sigma_part};
  }

 private:
  double lambda_;
};

/// Standard bias-corrected Adam over the flattened 2d parameter vector.
class Adam final : public Optimizer {
 public:
  explicit Adam(double step_size, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lambda_(step_size), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lambda_ <= 0.0) throw std::invalid_argument("Adam: step size must be > 0");
  }

  VariationalParams step(const VariationalParams& w,
                         const GradientVector& g) override {
    Vec grad = g.flatten();
    if (t_ == 0) {
      m_ = Vec::Zero(grad.size());
      v_ = Vec::Zero(grad.size());
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(beta1_, t_);
    double c2 = 1.0 - std::pow(beta2_, t_);
    Vec update =
        (m_ / c1).array() / ((v_ / c2).array().sqrt() + eps_) * lambda_;
    return VariationalParams::unflatten(w.flatten() - update);
  }

  void reset() override { t_ = 0; }

 private:
  double lambda_, beta1_, beta2_, eps_;
  Vec m_, v_;
  long t_ = 0;
};

/// SMISO state: per-datum parameter table plus its running mean. The step
/// rule is inseparable from the estimator, so it is a monolithic loop state
/// rather than an Optimizer.
struct SmisoState {
  std::vector<VariationalParams> entries;
  VariationalParams mean;  // w_bar = E_n[w^n]
  double alpha;            // mixing rate in (0,1]
  double gamma;            // inner step size > 0

  static SmisoState init(const VariationalParams& w0, int n_data, double alpha,
                         double gamma) {
    if (alpha <= 0.0 || alpha > 1.0)
      throw std::invalid_argument("SmisoState: alpha must be in (0,1]");
    if (gamma <= 0.0)
      throw std::invalid_argument("SmisoState: gamma must be > 0");
    SmisoState s;
    s.entries.assign(n_data, w0);
    s.mean = w0;
    s.alpha = alpha;
    s.gamma = gamma;
    return s;
  }

  /// Recompute the mean of the table from scratch (drift checks).
  VariationalParams recompute_mean() const {
    Vec acc = Vec::Zero(2 * entries.front().dim());
    for (const auto& e : entries) acc += e.flatten();
    return VariationalParams::unflatten(acc / static_cast<double>(entries.size()));
  }
};

/// One SMISO step over a minibatch. Every gradient is evaluated at the
/// pre-step running mean; entries are blended by exponential averaging and
/// the mean is updated incrementally.
inline void smiso_step(const Model& model, SmisoState& state,
                       const std::vector<int>& batch, const Vec& eps,
                       OracleCounter* counter = nullptr) {
  const double n_data = static_cast<double>(state.entries.size());
  const VariationalParams w_bar = state.mean;  // fixed evaluation point
  Vec mean_delta = Vec::Zero(2 * w_bar.dim());
  for (int n : batch) {
    GradientVector g = grad_f(model, w_bar, n, eps, counter);
    Vec target = w_bar.flatten() - state.gamma * g.flatten();
    Vec old_entry = state.entries[n].flatten();
    Vec new_entry = (1.0 - state.alpha) * old_entry + state.alpha * target;
    mean_delta += (new_entry - old_entry) / n_data;
    state.entries[n] = VariationalParams::unflatten(new_entry);
  }
  state.mean = VariationalParams::unflatten(state.mean.flatten() + mean_delta);
}

}  // namespace jointcv
