#pragma once

#include <cmath>

#include "jointcv/core.hpp"
#include "jointcv/models.hpp"

namespace jointcv {

/// T_w(eps) = mu + eps .* sigma
inline Vec transform(const VariationalParams& w, const Vec& eps) {
  return w.mu + eps.cwiseProduct(w.sigma());
}

/// Entropy of the factorized Gaussian: sum_i log sigma_i + (d/2) log(2 pi e).
inline double entropy(const VariationalParams& w) {
  return w.log_sigma.sum() + 0.5 * w.dim() * std::log(2.0 * M_PI * std::exp(1.0));
}

/// Reparameterized per-datum negative-ELBO term f(w; n, eps) = -k_n(T_w(eps)) - H(w).
inline double eval_f(const Model& model, const VariationalParams& w, int n,
                     const Vec& eps) {
  return -k_n(model, n, transform(w, eps)) - entropy(w);
}

/// Exact gradient of eval_f in w. The log-sigma part picks up -1 per
/// coordinate from the entropy.
inline GradientVector grad_f(const Model& model, const VariationalParams& w,
                             int n, const Vec& eps,
                             OracleCounter* counter = nullptr) {
  Vec z = transform(w, eps);
  Vec gk = grad_k_n(model, n, z, counter);
  Vec mu_part = -gk;
  Vec ls_part = (-gk.array() * eps.array() * w.sigma().array() - 1.0).matrix();
  return {std::move(mu_part), std::move(ls_part)};
}

/// (1/N) sum_n grad_f(w, n, eps): the full-dataset gradient for a fixed eps.
inline GradientVector grad_f_full_epoch(const Model& model,
                                        const VariationalParams& w,
                                        const Vec& eps,
                                        OracleCounter* counter = nullptr) {
  GradientVector acc = GradientVector::zero(w.dim());
  const int n_data = model.data_count();
  for (int n = 0; n < n_data; ++n) acc += grad_f(model, w, n, eps, counter);
  acc *= 1.0 / n_data;
  return acc;
}

}  // namespace jointcv
