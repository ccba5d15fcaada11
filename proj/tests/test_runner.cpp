#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jointcv/runner.hpp"

using namespace jointcv;

namespace {

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.task = "logistic";
  cfg.synth_n = 30;
  cfg.synth_dim = 4;
  cfg.batch_size = 5;
  cfg.iters = 40;
  cfg.eval_every = 10;
  cfg.elbo_samples = 20;
  cfg.step_size = 1e-3;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST(RunConfigTest, ConfigFileParsingAndErrors) {
  std::string path =
      (std::filesystem::temp_directory_path() / "jointcv_cfg.txt").string();
  std::ofstream(path) << "# comment\n"
                      << "task = linear-gaussian\n"
                      << "estimator = joint-saga\n"
                      << "step_size = 0.005\n"
                      << "grid = 0.001,0.01\n"
                      << "batch_size = 8\n"
                      << "seed = 123\n";
  RunConfig cfg;
  apply_config_file(cfg, path);
  EXPECT_EQ(cfg.task, "linear-gaussian");
  EXPECT_EQ(cfg.estimator, "joint-saga");
  EXPECT_DOUBLE_EQ(cfg.step_size, 0.005);
  ASSERT_EQ(cfg.grid.size(), 2u);
  EXPECT_DOUBLE_EQ(cfg.grid[1], 0.01);
  EXPECT_EQ(cfg.batch_size, 8);
  EXPECT_EQ(cfg.seed, 123u);

  std::ofstream(path) << "no_such_key = 1\n";
  EXPECT_THROW(apply_config_file(cfg, path), std::runtime_error);
  std::ofstream(path) << "just text\n";
  EXPECT_THROW(apply_config_file(cfg, path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(RunConfigTest, UnknownNamesThrow) {
  EXPECT_THROW(parse_estimator("sgd"), std::invalid_argument);
  EXPECT_THROW(parse_optimizer("momentum"), std::invalid_argument);
}

TEST(RunTest, SmisoRejectsForeignOptimizers) {
  RunConfig cfg = small_config();
  cfg.estimator = "smiso";
  cfg.optimizer = "adam";
  EXPECT_THROW(run_bbvi(cfg), std::invalid_argument);
  cfg.estimator = "naive";
  cfg.optimizer = "smiso";
  EXPECT_THROW(run_bbvi(cfg), std::invalid_argument);
}

TEST(RunTest, ZeroIterationsEmitsInitialStateRow) {
  RunConfig cfg = small_config();
  cfg.iters = 0;
  cfg.out_dir = temp_dir("jointcv_run0");
  RunResult res = run_and_save(cfg);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(res.trace[0].iteration, 0);
  std::string text = slurp(cfg.out_dir + "/trace.csv");
  EXPECT_NE(text.find("iteration,epoch,elbo,v_joint,v_sub,v_mc,grad_calls,"
                      "hvp_calls,step_size,seed"),
            std::string::npos);
  // header + one row
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  std::filesystem::remove_all(cfg.out_dir);
}

TEST(RunTest, NaiveGradCallsAreIterationsTimesBatch) {
  RunConfig cfg = small_config();
  cfg.iters = 12;       // 2 epochs: 30/5 = 6 batches per epoch
  cfg.eval_every = 12;
  RunResult res = run_bbvi(cfg);
  EXPECT_EQ(res.counter.grad_calls, 12u * 5u);
  EXPECT_EQ(res.counter.hvp_calls, 0u);
  EXPECT_EQ(res.trace.back().grad_calls, 60u);
  EXPECT_EQ(res.trace.back().epoch, 2);
}

TEST(RunTest, IdenticalConfigsGiveByteIdenticalTraces) {
  for (const char* est : {"naive", "cv", "joint-saga", "joint-svrg", "smiso"}) {
    RunConfig cfg = small_config();
    cfg.estimator = est;
    cfg.optimizer = std::string(est) == "smiso" ? "smiso" : "sgd";
    cfg.iters = 20;
    cfg.out_dir = temp_dir("jointcv_det_a");
    run_and_save(cfg);
    std::string a = slurp(cfg.out_dir + "/trace.csv");
    cfg.out_dir = temp_dir("jointcv_det_b");
    run_and_save(cfg);
    std::string b = slurp(cfg.out_dir + "/trace.csv");
    EXPECT_EQ(a, b) << "estimator " << est;
    EXPECT_GT(a.size(), 0u);
    std::filesystem::remove_all(temp_dir("jointcv_det_a"));
    std::filesystem::remove_all(temp_dir("jointcv_det_b"));
  }
}

TEST(RunTest, SmokeMatrixAllCombinationsStayFinite) {
  for (const char* task : {"logistic", "bradley-terry", "linear-gaussian"}) {
    for (const char* est :
         {"naive", "cv", "inc", "ensemble", "joint-saga", "joint-svrg", "smiso"}) {
      for (const char* opt : {"sgd", "adam"}) {
        RunConfig cfg = small_config();
        cfg.task = task;
        cfg.synth_n = 100;
        cfg.estimator = est;
        cfg.optimizer = std::string(est) == "smiso" ? "smiso" : opt;
        cfg.iters = 10;
        cfg.eval_every = 5;
        cfg.elbo_samples = 5;
        cfg.step_size = 1e-3;
        RunResult res = run_bbvi(cfg);
        for (const auto& row : res.trace)
          EXPECT_TRUE(std::isfinite(row.elbo))
              << task << "/" << est << "/" << opt;
        EXPECT_TRUE(res.final_params.flatten().allFinite())
            << task << "/" << est << "/" << opt;
        if (std::string(est) == "smiso") break;  // one optimizer only
      }
    }
  }
}

TEST(RunTest, EpochBudgetOverridesIterations) {
  RunConfig cfg = small_config();
  cfg.epochs = 3;  // 6 batches per epoch
  cfg.iters = 999;
  cfg.eval_every = 18;
  RunResult res = run_bbvi(cfg);
  EXPECT_EQ(res.trace.back().iteration, 18);
}

TEST(RunTest, GlmTaskRunsAndValidates) {
  RunConfig cfg = small_config();
  cfg.task = "glm-dropout";
  cfg.synth_classes = 3;
  cfg.glm_dim = 4;
  cfg.estimator = "joint-saga";
  cfg.iters = 15;
  cfg.eval_every = 5;
  cfg.elbo_samples = 10;
  auto trace = run(cfg);
  EXPECT_GE(trace.size(), 4u);
  for (const auto& r : trace) EXPECT_TRUE(std::isfinite(r.elbo));

  cfg.estimator = "inc";
  EXPECT_THROW(run(cfg), std::invalid_argument);
  cfg.estimator = "naive";
  cfg.optimizer = "adam";
  EXPECT_THROW(run(cfg), std::invalid_argument);
}

TEST(CheckpointTest, ParamsRoundTrip) {
  RngStream rng(1);
  VariationalParams w{rng.normal_vector(5), 0.3 * rng.normal_vector(5)};
  std::string path =
      (std::filesystem::temp_directory_path() / "jointcv_ckpt.csv").string();
  save_params_csv(w, path);
  VariationalParams back = load_params_csv(path);
  EXPECT_EQ(back.flatten(), w.flatten());
  std::remove(path.c_str());
}

TEST(SweepTest, GridOfOneMatchesRun) {
  RunConfig cfg = small_config();
  cfg.iters = 20;
  cfg.eval_every = 10;
  cfg.out_dir = temp_dir("jointcv_sweep1");
  cfg.grid = {cfg.step_size};
  SweepResult sw = sweep(cfg);
  RunResult single = run_bbvi(cfg);
  ASSERT_EQ(sw.mean_elbo.size(), 1u);
  ASSERT_EQ(sw.mean_elbo[0].size(), single.trace.size());
  for (size_t i = 0; i < single.trace.size(); ++i)
    EXPECT_DOUBLE_EQ(sw.mean_elbo[0][i], single.trace[i].elbo);
  std::filesystem::remove_all(cfg.out_dir);
}

TEST(SweepTest, RetrospectiveBestDominatesEveryCurve) {
  RunConfig cfg = small_config();
  cfg.iters = 24;
  cfg.eval_every = 8;
  cfg.grid = {1e-4, 1e-3, 1e-2};
  cfg.num_seeds = 2;
  cfg.out_dir = temp_dir("jointcv_sweep3");
  SweepResult sw = sweep(cfg);
  ASSERT_EQ(sw.mean_elbo.size(), 3u);
  for (const auto& curve : sw.mean_elbo)
    for (size_t i = 0; i < curve.size(); ++i)
      EXPECT_GE(sw.retrospective_best[i], curve[i]);
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir + "/summary.csv"));
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir + "/retrospective_best.csv"));
  // One trace file per (step size, seed).
  int traces = 0;
  for (const auto& entry : std::filesystem::directory_iterator(cfg.out_dir))
    if (entry.path().filename().string().rfind("trace", 0) == 0) ++traces;
  EXPECT_EQ(traces, 6);
  std::filesystem::remove_all(cfg.out_dir);
}

TEST(DecomposeTest, SyncedTableIdealizedPoint) {
  // LinearGaussian with the table synced at the checkpoint: the joint
  // estimator's variance collapses, cv is bounded below by the subsampling
  // noise, and inc by the Monte Carlo noise.
  RunConfig cfg;
  cfg.task = "linear-gaussian";
  cfg.synth_n = 15;
  cfg.synth_dim = 3;
  cfg.synth_tau = 0.8;
  cfg.seed = 3;
  cfg.var_samples = 3000;
  cfg.var_inner_samples = 200;
  cfg.var_eps_samples = 500;
  cfg.out_dir = temp_dir("jointcv_dec");

  // Tiny sigma keeps the uncontrolled log-sigma noise (which scales with
  // sigma^2) below the joint estimator's 1e-12 budget.
  RngStream rng(4);
  VariationalParams w{0.3 * rng.normal_vector(3),
                      Vec::Constant(3, std::log(1e-8))};
  std::string params = cfg.out_dir + "/params.csv";
  save_params_csv(w, params);
  DecomposeResult r = decompose(cfg, params);
  EXPECT_LE(r.var_joint, 1e-12);
  EXPECT_GE(r.var_cv, 0.8 * r.v_sub);
  EXPECT_GE(r.var_inc, 0.8 * r.v_mc);
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir + "/decompose.csv"));
  std::filesystem::remove_all(cfg.out_dir);
}

TEST(DecomposeTest, SingleDatumHasZeroSubsamplingVariance) {
  RunConfig cfg;
  cfg.task = "linear-gaussian";
  cfg.synth_n = 1;
  cfg.synth_dim = 2;
  cfg.seed = 5;
  cfg.var_samples = 200;
  cfg.var_inner_samples = 16;
  cfg.var_eps_samples = 50;
  cfg.out_dir = temp_dir("jointcv_dec1");
  std::string params = cfg.out_dir + "/params.csv";
  save_params_csv(VariationalParams::zero(2), params);
  DecomposeResult r = decompose(cfg, params);
  EXPECT_DOUBLE_EQ(r.v_sub, 0.0);
  std::filesystem::remove_all(cfg.out_dir);
}

TEST(DecomposeTest, MismatchedCheckpointThrows) {
  RunConfig cfg;
  cfg.task = "linear-gaussian";
  cfg.synth_n = 5;
  cfg.synth_dim = 3;
  cfg.out_dir = temp_dir("jointcv_decmm");
  std::string params = cfg.out_dir + "/params.csv";
  save_params_csv(VariationalParams::zero(4), params);
  EXPECT_THROW(decompose(cfg, params), std::invalid_argument);
  std::filesystem::remove_all(cfg.out_dir);
}

TEST(DecomposeTest, SeedChangeStaysWithinStatisticalNoise) {
  RunConfig cfg;
  cfg.task = "linear-gaussian";
  cfg.synth_n = 10;
  cfg.synth_dim = 2;
  cfg.seed = 6;
  cfg.var_samples = 5000;
  cfg.var_inner_samples = 200;
  cfg.var_eps_samples = 400;
  cfg.out_dir = temp_dir("jointcv_decseed");
  std::string params = cfg.out_dir + "/params.csv";
  RngStream rng(7);
  save_params_csv({0.2 * rng.normal_vector(2), Vec::Constant(2, -1.0)}, params);
  DecomposeResult a = decompose(cfg, params);
  cfg.diag_seed = 99;  // new diagnostic draws over the same dataset/point
  DecomposeResult b = decompose(cfg, params);
  EXPECT_NE(a.v_joint, b.v_joint);
  EXPECT_NEAR(b.v_joint, a.v_joint, 0.2 * a.v_joint);
  EXPECT_NEAR(b.v_mc, a.v_mc, 0.2 * a.v_mc);
  std::filesystem::remove_all(cfg.out_dir);
}
