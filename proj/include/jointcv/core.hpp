#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace jointcv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Mean and log-scale of a factorized Gaussian; the optimization variable.
struct VariationalParams {
  Vec mu;
  Vec log_sigma;

  VariationalParams() = default;
  VariationalParams(Vec mu_, Vec log_sigma_)
      : mu(std::move(mu_)), log_sigma(std::move(log_sigma_)) {
    if (mu.size() != log_sigma.size() || mu.size() < 1)
      throw std::invalid_argument("VariationalParams: mu/log_sigma size mismatch");
  }

  static VariationalParams zero(int d) {
    return {Vec::Zero(d), Vec::Zero(d)};
  }

  int dim() const { return static_cast<int>(mu.size()); }
  Vec sigma() const { return log_sigma.array().exp().matrix(); }

  Vec flatten() const {
    Vec out(2 * dim());
    out << mu, log_sigma;
    return out;
  }
  static VariationalParams unflatten(const Vec& x) {
    int d = static_cast<int>(x.size()) / 2;
    return {x.head(d), x.tail(d)};
  }
};

/// Gradient over (mu, log_sigma), kept as named partitions.
struct GradientVector {
  Vec mu_part;
  Vec log_sigma_part;

  GradientVector() = default;
  GradientVector(Vec m, Vec s) : mu_part(std::move(m)), log_sigma_part(std::move(s)) {}

  static GradientVector zero(int d) {
    return {Vec::Zero(d), Vec::Zero(d)};
  }

  int dim() const { return static_cast<int>(mu_part.size()); }

  GradientVector& operator+=(const GradientVector& o) {
    mu_part += o.mu_part;
    log_sigma_part += o.log_sigma_part;
    return *this;
  }
  GradientVector& operator-=(const GradientVector& o) {
    mu_part -= o.mu_part;
    log_sigma_part -= o.log_sigma_part;
    return *this;
  }
  GradientVector& operator*=(double a) {
    mu_part *= a;
    log_sigma_part *= a;
    return *this;
  }
  friend GradientVector operator+(GradientVector a, const GradientVector& b) { return a += b; }
  friend GradientVector operator-(GradientVector a, const GradientVector& b) { return a -= b; }
  friend GradientVector operator*(double a, GradientVector g) { return g *= a; }

  double squared_norm() const {
    return mu_part.squaredNorm() + log_sigma_part.squaredNorm();
  }

  Vec flatten() const {
    Vec out(2 * dim());
    out << mu_part, log_sigma_part;
    return out;
  }
  static GradientVector unflatten(const Vec& x) {
    int d = static_cast<int>(x.size()) / 2;
    return {x.head(d), x.tail(d)};
  }
};

/// Sum over coordinates of per-coordinate sample variance (divisor S-1).
inline double trace_variance(const std::vector<Vec>& samples) {
  const auto s = samples.size();
  if (s < 2) throw std::invalid_argument("trace_variance: need at least 2 samples");
  Vec mean = Vec::Zero(samples[0].size());
  for (const auto& x : samples) mean += x;
  mean /= static_cast<double>(s);
  double acc = 0.0;
  for (const auto& x : samples) acc += (x - mean).squaredNorm();
  return acc / static_cast<double>(s - 1);
}

inline double trace_variance(const std::vector<GradientVector>& samples) {
  std::vector<Vec> flat;
  flat.reserve(samples.size());
  for (const auto& g : samples) flat.push_back(g.flatten());
  return trace_variance(flat);
}

/// Counts model-oracle evaluations (gradient and Hessian-vector-product calls).
struct OracleCounter {
  std::uint64_t grad_calls = 0;
  std::uint64_t hvp_calls = 0;

  std::uint64_t total() const { return grad_calls + hvp_calls; }

  OracleCounter& operator-=(const OracleCounter& o) {
    grad_calls -= o.grad_calls;
    hvp_calls -= o.hvp_calls;
    return *this;
  }
  friend OracleCounter operator-(OracleCounter a, const OracleCounter& b) { return a -= b; }
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Counter-based random stream. Draws are a pure function of
/// (seed, stream_id, draw index), so child streams can be derived for
/// any (iteration, sample) pair without serial dependence.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id),
        key_(detail::mix64(seed ^ detail::mix64(stream_id))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Independent substream; deterministic in (seed, parent id, child id).
  RngStream child(std::uint64_t sub_id) const {
    return RngStream(key_, sub_id);
  }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ ^ (counter_ * 0x9e3779b97f4a7c15ULL));
  }

  /// Uniform on (0,1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// One standard normal draw (Box-Muller).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec normal_vector(int d) {
    if (d < 1) throw std::invalid_argument("normal_vector: d must be >= 1");
    Vec out(d);
    for (int i = 0; i < d; ++i) out[i] = normal();
    return out;
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace jointcv
