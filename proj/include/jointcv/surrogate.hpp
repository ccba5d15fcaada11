#pragma once

#include "jointcv/core.hpp"
#include "jointcv/models.hpp"
#include "jointcv/objective.hpp"

namespace jointcv {

// Second-order Taylor surrogate of f around z0 = mu_anchor, controlling the
// mu partition only. The anchor is the current w for the cv estimator and a
// stored table entry for the joint estimators; z0 is held constant under
// differentiation.

/// mu-gradient of the surrogate at noise eps:
///   -[grad_k_n(z0) + hvp_k_n(z0, eps .* sigma_anchor)]
inline Vec grad_surrogate_mu(const Model& model, const VariationalParams& anchor,
                             int n, const Vec& eps,
                             OracleCounter* counter = nullptr) {
  Vec z0 = anchor.mu;
  Vec gk = grad_k_n(model, n, z0, counter);
  Vec hv = hvp_k_n(model, n, z0, eps.cwiseProduct(anchor.sigma()), counter);
  return -(gk + hv);
}

/// Closed-form eps-expectation of grad_surrogate_mu: -grad_k_n(mu_anchor).
/// The HVP term is linear in zero-mean eps and drops out.
inline Vec expect_grad_surrogate_mu(const Model& model,
                                    const VariationalParams& anchor, int n,
                                    OracleCounter* counter = nullptr) {
  if (counter) ++counter->grad_calls;
  return -(model.data_count() * model.grad_log_lik(n, anchor.mu) +
           model.grad_log_prior(anchor.mu));
}

struct SurrogatePair {
  Vec expect;  // eps-expectation of the surrogate mu-gradient
  Vec at_eps;  // surrogate mu-gradient at the sampled eps
};

/// Fused evaluation of expect_grad_surrogate_mu and grad_surrogate_mu at one
/// anchor. The gradient and HVP at z0 come out of a single forward-over-
/// reverse pass, so this bills one HVP call total.
inline SurrogatePair surrogate_mu_pair(const Model& model,
                                       const VariationalParams& anchor, int n,
                                       const Vec& eps,
                                       OracleCounter* counter = nullptr) {
  if (counter) ++counter->hvp_calls;
  Vec z0 = anchor.mu;
  Vec gk = model.data_count() * model.grad_log_lik(n, z0) +
           model.grad_log_prior(z0);
  Vec dir = eps.cwiseProduct(anchor.sigma());
  Vec hv = model.data_count() * model.hvp_log_lik(n, z0, dir) +
           model.hvp_log_prior(z0, dir);
  return {-gk, -(gk + hv)};
}

}  // namespace jointcv
