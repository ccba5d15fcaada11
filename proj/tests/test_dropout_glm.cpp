#include <gtest/gtest.h>

#include <cmath>

#include "jointcv/dropout_glm.hpp"
#include "test_util.hpp"

using namespace jointcv;

namespace {

// Taylor surrogate value in eps around eps = 1, used as the FD oracle for
// the surrogate gradients: L(phi) + r.a + 0.5 a' l'' a with a = W((eps-1).*x).
double surrogate_value(const DropoutGlm& g, const Mat& w, int n, const Vec& eps) {
  Vec x = g.features.row(n).transpose();
  Vec phi = w * x;
  Vec a = w * (eps.array() - 1.0).matrix().cwiseProduct(x);
  return glm_detail::loss_value(g, n, phi) +
         glm_detail::loss_grad(g, n, phi).dot(a) +
         0.5 * glm_detail::hess_quad(g, phi, a);
}

Mat fd_grad_w(const std::function<double(const Mat&)>& f, const Mat& w,
              double h = 1e-6) {
  Mat g(w.rows(), w.cols());
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) {
      Mat wp = w, wm = w;
      wp(r, c) += h;
      wm(r, c) -= h;
      g(r, c) = (f(wp) - f(wm)) / (2.0 * h);
    }
  return g;
}

Mat random_weights(const DropoutGlm& g, RngStream rng, double scale = 0.4) {
  Mat w(g.num_outputs, g.input_dim());
  for (int r = 0; r < w.rows(); ++r)
    w.row(r) = (scale * rng.normal_vector(g.input_dim())).transpose();
  return w;
}

Vec dropout_noise(const DropoutGlm& g, RngStream rng) {
  return Vec::Ones(g.input_dim()) + g.sigma_drop * rng.normal_vector(g.input_dim());
}

}  // namespace

class DropoutGlmTest : public ::testing::TestWithParam<GlmLoss> {
 protected:
  DropoutGlm make(int n = 6, int d = 4, int k = 3, std::uint64_t seed = 71) {
    return synth_dropout_glm(n, d, k, GetParam(), 0.4, seed);
  }
};

TEST_P(DropoutGlmTest, GradMatchesFiniteDifferences) {
  DropoutGlm g = make();
  RngStream rng(1);
  Mat w = random_weights(g, rng.child(0));
  for (int n : {0, 5}) {
    Vec eps = dropout_noise(g, rng.child(10 + n));
    Mat grad = glm_grad(g, w, n, eps);
    Mat fd = fd_grad_w([&](const Mat& ww) { return glm_f(g, ww, n, eps); }, w);
    EXPECT_LT((grad - fd).norm(), 1e-6 * (1.0 + grad.norm())) << "n=" << n;
  }
}

TEST_P(DropoutGlmTest, SurrogateGradMatchesFiniteDifferences) {
  DropoutGlm g = make();
  RngStream rng(2);
  Mat w = random_weights(g, rng.child(0));
  for (int n : {1, 4}) {
    Vec eps = dropout_noise(g, rng.child(20 + n));
    Mat grad = glm_grad_surrogate(g, w, n, eps);
    Mat fd =
        fd_grad_w([&](const Mat& ww) { return surrogate_value(g, ww, n, eps); }, w);
    EXPECT_LT((grad - fd).norm(), 1e-5 * (1.0 + grad.norm())) << "n=" << n;
  }
}

TEST_P(DropoutGlmTest, ExpectationGradMatchesFiniteDifferences) {
  DropoutGlm g = make();
  RngStream rng(3);
  Mat w = random_weights(g, rng.child(0));
  for (int n : {0, 3}) {
    Mat grad = glm_expect_grad_surrogate(g, w, n);
    Mat fd = fd_grad_w(
        [&](const Mat& ww) { return glm_surrogate_expectation(g, ww, n); }, w);
    EXPECT_LT((grad - fd).norm(), 1e-5 * (1.0 + grad.norm())) << "n=" << n;
  }
}

TEST_P(DropoutGlmTest, TraceTermMatchesFiniteDifferenceHessianDiagonal) {
  // The closed-form trace term must equal sigma^2/2 * sum_i d^2 f / d eps_i^2
  // at eps = 1, the Hessian-diagonal contraction it stands for.
  DropoutGlm g = make();
  RngStream rng(4);
  Mat w = random_weights(g, rng.child(0));
  const double h = 1e-4;
  for (int n : {2, 5}) {
    double tr = 0.0;
    Vec ones = Vec::Ones(g.input_dim());
    double f0 = glm_f(g, w, n, ones);
    for (int i = 0; i < g.input_dim(); ++i) {
      Vec ep = ones, em = ones;
      ep[i] += h;
      em[i] -= h;
      tr += (glm_f(g, w, n, ep) - 2.0 * f0 + glm_f(g, w, n, em)) / (h * h);
    }
    double closed = glm_surrogate_expectation(g, w, n) - f0;
    double target = 0.5 * g.sigma_drop * g.sigma_drop * tr;
    EXPECT_NEAR(closed, target, 1e-6 * (1.0 + std::abs(target))) << "n=" << n;
  }
}

TEST_P(DropoutGlmTest, SurrogateGradExpectationMatchesClosedForm) {
  DropoutGlm g = make(4, 3, 2, 72);
  RngStream rng(5);
  Mat w = random_weights(g, rng.child(0));
  const int s = 200000;
  Mat mean = Mat::Zero(w.rows(), w.cols());
  for (int i = 0; i < s; ++i)
    mean += glm_grad_surrogate(g, w, 1,
                               dropout_noise(g, rng.child(100 + i)));
  mean /= static_cast<double>(s);
  Mat closed = glm_expect_grad_surrogate(g, w, 1);
  EXPECT_LT((mean - closed).norm(), 0.02 * (1.0 + closed.norm()));
}

TEST_P(DropoutGlmTest, CvIsUnbiased) {
  DropoutGlm g = make(4, 3, 2, 73);
  RngStream rng(6);
  Mat w = random_weights(g, rng.child(0));
  const int s = 100000;
  Mat mean_cv = Mat::Zero(w.rows(), w.cols());
  Mat mean_naive = Mat::Zero(w.rows(), w.cols());
  for (int i = 0; i < s; ++i) {
    Vec eps = dropout_noise(g, rng.child(200 + i));
    mean_cv += glm_g_cv(g, w, 2, eps);
    mean_naive += glm_g_naive(g, w, 2, eps);
  }
  mean_cv /= static_cast<double>(s);
  mean_naive /= static_cast<double>(s);
  EXPECT_LT((mean_cv - mean_naive).norm(), 0.03 * (1.0 + mean_naive.norm()));
}

TEST_P(DropoutGlmTest, JointEstimatorAccountingAndTableUpdates) {
  DropoutGlm g = make(5, 3, 2, 74);
  RngStream rng(7);
  Mat w0 = random_weights(g, rng.child(0));
  Mat w = w0;
  MinibatchSchedule schedule(5, 2, rng.child(1));
  RngStream noise = rng.child(2);
  GlmParamTable table = glm_init_table(g, w, 0.05, schedule, noise);
  ASSERT_TRUE(table.initialized);
  EXPECT_LT((table.running_mean - table.recompute_running_mean(g)).norm(), 1e-13);

  OracleCounter c;
  Vec eps = dropout_noise(g, rng.child(3));
  glm_joint_estimator(g, w, {0, 3}, eps, table, &c);
  EXPECT_EQ(c.grad_calls, 4u);  // 2 per datum
  EXPECT_EQ(c.hvp_calls, 2u);   // 1 per datum
  EXPECT_EQ(table.entries[0], w);
  EXPECT_EQ(table.entries[3], w);
  EXPECT_LT((table.running_mean - table.recompute_running_mean(g)).norm(),
            1e-12 * (1.0 + table.running_mean.norm()));

  EXPECT_THROW(glm_joint_estimator(g, w, {1, 1}, eps, table),
               std::invalid_argument);
  GlmParamTable fresh;
  EXPECT_THROW(glm_joint_estimator(g, w, {0}, eps, fresh), std::invalid_argument);
}

INSTANTIATE_TEST_SUITE_P(BothLosses, DropoutGlmTest,
                         ::testing::Values(GlmLoss::kSquaredError,
                                           GlmLoss::kSoftmaxCrossEntropy));

TEST(DropoutGlmSquaredErrorTest, SurrogateIsExact) {
  // The squared-error dropout loss is quadratic in eps, so the second-order
  // surrogate reproduces the objective gradient exactly at any noise.
  DropoutGlm g = synth_dropout_glm(6, 4, 3, GlmLoss::kSquaredError, 0.5, 75);
  RngStream rng(8);
  Mat w = random_weights(g, rng.child(0));
  for (int trial = 0; trial < 5; ++trial) {
    Vec eps = dropout_noise(g, rng.child(10 + trial));
    int n = trial % 6;
    Mat diff = glm_grad_surrogate(g, w, n, eps) - glm_grad(g, w, n, eps);
    EXPECT_LT(diff.norm(), 1e-11);
  }
}

TEST(DropoutGlmSquaredErrorTest, TraceTermClosedForm) {
  // For squared error, tr(Hess_eps) = sum_i x_i^2 ||w_col_i||^2.
  DropoutGlm g = synth_dropout_glm(3, 4, 2, GlmLoss::kSquaredError, 0.3, 76);
  RngStream rng(9);
  Mat w = random_weights(g, rng.child(0));
  const int n = 1;
  Vec x = g.features.row(n).transpose();
  double tr = 0.0;
  for (int i = 0; i < 4; ++i) tr += x[i] * x[i] * w.col(i).squaredNorm();
  double expected = glm_f(g, w, n, Vec::Ones(4)) + 0.5 * 0.09 * tr;
  EXPECT_NEAR(glm_surrogate_expectation(g, w, n), expected, 1e-12);
}

TEST(DropoutGlmSynthTest, DeterministicAndWellFormed) {
  DropoutGlm a = synth_dropout_glm(20, 5, 4, GlmLoss::kSoftmaxCrossEntropy, 0.5, 77);
  DropoutGlm b = synth_dropout_glm(20, 5, 4, GlmLoss::kSoftmaxCrossEntropy, 0.5, 77);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.classes, b.classes);
  for (int c : a.classes) {
    EXPECT_GE(c, 0);
    EXPECT_LT(c, 4);
  }
  DropoutGlm sq = synth_dropout_glm(10, 3, 2, GlmLoss::kSquaredError, 0.5, 78);
  EXPECT_EQ(sq.targets.rows(), 10);
  EXPECT_EQ(sq.targets.cols(), 2);
}

TEST(DropoutGlmTestErrors, ShapeAndIndexValidation) {
  DropoutGlm g = synth_dropout_glm(4, 3, 2, GlmLoss::kSquaredError, 0.5, 79);
  Mat w = Mat::Zero(2, 3);
  Vec eps = Vec::Ones(3);
  EXPECT_THROW(glm_f(g, w, 4, eps), std::out_of_range);
  EXPECT_THROW(glm_f(g, Mat::Zero(3, 3), 0, eps), std::invalid_argument);
}
