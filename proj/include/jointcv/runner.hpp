#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointcv/core.hpp"
#include "jointcv/data.hpp"
#include "jointcv/diagnostics.hpp"
#include "jointcv/dropout_glm.hpp"
#include "jointcv/estimators.hpp"
#include "jointcv/models.hpp"
#include "jointcv/optimizers.hpp"

namespace jointcv {

enum class EstimatorKind { kNaive, kCv, kInc, kEnsemble, kJointSaga, kJointSvrg, kSmiso };
enum class OptimizerKind { kSgd, kAdam, kSmiso };

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "naive") return EstimatorKind::kNaive;
  if (s == "cv") return EstimatorKind::kCv;
  if (s == "inc") return EstimatorKind::kInc;
  if (s == "ensemble") return EstimatorKind::kEnsemble;
  if (s == "joint-saga") return EstimatorKind::kJointSaga;
  if (s == "joint-svrg") return EstimatorKind::kJointSvrg;
  if (s == "smiso") return EstimatorKind::kSmiso;
  throw std::invalid_argument("unknown estimator: " + s);
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "smiso") return OptimizerKind::kSmiso;
  throw std::invalid_argument("unknown optimizer: " + s);
}

struct RunConfig {
  std::string task = "logistic";  // logistic | bradley-terry | linear-gaussian | glm-dropout
  std::string dataset_path;       // empty -> synthetic
  std::string label_column = "label";
  bool standardize = false;

  std::string estimator = "naive";
  std::string optimizer = "sgd";
  double step_size = 1e-3;
  std::vector<double> grid;  // sweep step sizes
  int batch_size = 5;
  long iters = 1000;   // ignored when epochs > 0
  long epochs = 0;
  long eval_every = 50;
  long var_every = 0;  // 0 disables variance columns
  int elbo_samples = 1000;
  int var_samples = 1000;
  int var_inner_samples = 64;
  int var_eps_samples = 100;
  std::uint64_t seed = 0;
  std::uint64_t diag_seed = 0;  // 0 -> reuse seed
  int num_seeds = 1;
  long svrg_k = 0;  // 0 -> one epoch
  double beta = 0.5;
  double smiso_alpha = 0.9;
  std::string out_dir = ".";

  // synthetic-instance shape
  int synth_n = 100;
  int synth_dim = 10;
  int synth_classes = 2;
  int synth_players = 20;
  double synth_tau = 1.0;
  double glm_outputs = 5;
  int glm_dim = 20;
  double sigma_drop = 0.5;
};

/// Flat key = value config file; '#' starts a comment line.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::string line;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line without '=': " + line);
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key == "task") cfg.task = val;
    else if (key == "dataset") cfg.dataset_path = val;
    else if (key == "label_column") cfg.label_column = val;
    else if (key == "standardize") cfg.standardize = (val == "true" || val == "1");
    else if (key == "estimator") cfg.estimator = val;
    else if (key == "optimizer") cfg.optimizer = val;
    else if (key == "step_size") cfg.step_size = std::stod(val);
    else if (key == "grid") {
      cfg.grid.clear();
      std::stringstream ss(val);
      std::string cell;
      while (std::getline(ss, cell, ',')) cfg.grid.push_back(std::stod(cell));
    }
    else if (key == "batch_size") cfg.batch_size = std::stoi(val);
    else if (key == "iters") cfg.iters = std::stol(val);
    else if (key == "epochs") cfg.epochs = std::stol(val);
    else if (key == "eval_every") cfg.eval_every = std::stol(val);
    else if (key == "var_every") cfg.var_every = std::stol(val);
    else if (key == "elbo_samples") cfg.elbo_samples = std::stoi(val);
    else if (key == "var_samples") cfg.var_samples = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "diag_seed") cfg.diag_seed = std::stoull(val);
    else if (key == "num_seeds") cfg.num_seeds = std::stoi(val);
    else if (key == "svrg_k") cfg.svrg_k = std::stol(val);
    else if (key == "beta") cfg.beta = std::stod(val);
    else if (key == "out") cfg.out_dir = val;
    else if (key == "synth_n") cfg.synth_n = std::stoi(val);
    else if (key == "synth_dim") cfg.synth_dim = std::stoi(val);
    else if (key == "synth_classes") cfg.synth_classes = std::stoi(val);
    else if (key == "synth_players") cfg.synth_players = std::stoi(val);
    else if (key == "synth_tau") cfg.synth_tau = std::stod(val);
    else if (key == "sigma_drop") cfg.sigma_drop = std::stod(val);
    else throw std::runtime_error("unknown config key: " + key);
  }
}

inline std::unique_ptr<Model> build_model(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.task == "logistic") {
    std::vector<int> labels(ds.labels.begin(), ds.labels.end());
    if (cfg.synth_classes > 2) {
      return std::make_unique<MulticlassLogisticModel>(ds.features, labels,
                                                       cfg.synth_classes);
    }
    return std::make_unique<BinaryLogisticModel>(ds.features, labels);
  }
  if (cfg.task == "bradley-terry") {
    std::vector<BradleyTerryModel::Match> matches;
    int players = 0;
    for (int i = 0; i < ds.size(); ++i) {
      BradleyTerryModel::Match m{static_cast<int>(ds.features(i, 0)),
                                 static_cast<int>(ds.features(i, 1)),
                                 static_cast<int>(ds.labels[i])};
      players = std::max({players, m.player_a + 1, m.player_b + 1});
      matches.push_back(m);
    }
    players = std::max(players, cfg.synth_players);
    return std::make_unique<BradleyTerryModel>(std::move(matches), players);
  }
  if (cfg.task == "linear-gaussian") {
    Vec targets(ds.size());
    for (int i = 0; i < ds.size(); ++i) targets[i] = ds.labels[i];
    return std::make_unique<LinearGaussianModel>(ds.features, targets,
                                                 cfg.synth_tau * cfg.synth_tau);
  }
  throw std::invalid_argument("unknown task: " + cfg.task);
}

inline Dataset build_dataset(const RunConfig& cfg) {
  if (!cfg.dataset_path.empty())
    return load_csv(cfg.dataset_path, cfg.label_column, cfg.standardize);
  if (cfg.task == "logistic")
    return synth_logistic(cfg.synth_n, cfg.synth_dim, cfg.seed);
  if (cfg.task == "bradley-terry")
    return synth_bradley_terry(cfg.synth_n, cfg.synth_players, cfg.seed);
  if (cfg.task == "linear-gaussian")
    return synth_linear_gaussian(cfg.synth_n, cfg.synth_dim, cfg.synth_tau, cfg.seed);
  throw std::invalid_argument("no synthetic generator for task: " + cfg.task);
}

namespace detail {
inline std::string fmt_double(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}
}  // namespace detail

inline void write_trace_csv(const std::string& path,
                            const std::vector<TraceRecord>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open trace file " + path);
  out << "iteration,epoch,elbo,v_joint,v_sub,v_mc,grad_calls,hvp_calls,"
         "step_size,seed\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.epoch << ',' << detail::fmt_double(r.elbo)
        << ',' << detail::fmt_double(r.v_joint) << ','
        << detail::fmt_double(r.v_sub) << ',' << detail::fmt_double(r.v_mc)
        << ',' << r.grad_calls << ',' << r.hvp_calls << ','
        << detail::fmt_double(r.step_size) << ',' << r.seed << '\n';
  }
}

struct RunResult {
  std::vector<TraceRecord> trace;
  VariationalParams final_params;
  std::optional<ParamTable> final_table;
  OracleCounter counter;
};

/// Joint estimate against a frozen table; no state mutation. Used by the
/// decompose diagnostics.
inline GradientVector g_joint_frozen(const Model& model,
                                     const VariationalParams& w, int n,
                                     const Vec& eps, const ParamTable& table,
                                     OracleCounter* counter = nullptr) {
  GradientVector g = grad_f(model, w, n, eps, counter);
  g.mu_part += table.running_mean -
               grad_surrogate_mu(model, table.entries[n], n, eps, counter);
  return g;
}

/// Run one optimization with periodic ELBO / variance evaluation.
/// Deterministic given the config; diagnostics draw from streams disjoint
/// from the optimizer's.
inline RunResult run_bbvi(const RunConfig& cfg) {
  EstimatorKind est = parse_estimator(cfg.estimator);
  OptimizerKind opt_kind = parse_optimizer(cfg.optimizer);
  if (est == EstimatorKind::kSmiso && opt_kind != OptimizerKind::kSmiso)
    throw std::invalid_argument("smiso fixes its own step rule; set optimizer=smiso");
  if (est != EstimatorKind::kSmiso && opt_kind == OptimizerKind::kSmiso)
    throw std::invalid_argument("optimizer=smiso requires estimator=smiso");
  if (est == EstimatorKind::kInc || est == EstimatorKind::kEnsemble)
    std::cerr << "note: " << cfg.estimator
              << " costs a full-dataset pass per iteration\n";

  Dataset ds = build_dataset(cfg);
  auto model = build_model(cfg, ds);
  const int d = model->latent_dim();
  const int n_data = model->data_count();

  RngStream master(cfg.seed);
  RngStream init_rng = master.child(10);
  RngStream schedule_rng = master.child(11);
  RngStream noise_rng = master.child(12);
  RngStream elbo_rng = master.child(13);
  RngStream var_rng = master.child(14);

  VariationalParams w{init_rng.normal_vector(d), Vec::Zero(d)};

  std::unique_ptr<Optimizer> opt;
  if (opt_kind == OptimizerKind::kSgd) opt = std::make_unique<Sgd>(cfg.step_size);
  else if (opt_kind == OptimizerKind::kAdam) opt = std::make_unique<Adam>(cfg.step_size);

  MinibatchSchedule schedule(n_data, cfg.batch_size, schedule_rng);
  long iters = cfg.epochs > 0 ? cfg.epochs * schedule.batches_per_epoch() : cfg.iters;

  OracleCounter counter;
  std::optional<ParamTable> table;
  std::optional<SvrgState> svrg;
  std::optional<SmisoState> smiso;
  if (est == EstimatorKind::kJointSaga || est == EstimatorKind::kInc ||
      est == EstimatorKind::kEnsemble) {
    Sgd init_opt(est == EstimatorKind::kJointSaga ? cfg.step_size : 0.0);
    RngStream init_noise = master.child(15);
    table = init_table(*model, w, init_opt, schedule, init_noise, &counter);
  } else if (est == EstimatorKind::kJointSvrg) {
    long k = cfg.svrg_k > 0 ? cfg.svrg_k : schedule.batches_per_epoch();
    svrg = SvrgState::init(*model, w, k, &counter);
  } else if (est == EstimatorKind::kSmiso) {
    smiso = SmisoState::init(w, n_data, cfg.smiso_alpha, cfg.step_size);
  }

  std::vector<TraceRecord> trace;
  long data_seen = 0;
  auto record = [&](long iter) {
    TraceRecord r;
    r.iteration = iter;
    r.epoch = data_seen / n_data;
    r.elbo = evaluate_elbo(*model, est == EstimatorKind::kSmiso ? smiso->mean : w,
                           cfg.elbo_samples,
                           elbo_rng.child(static_cast<std::uint64_t>(iter)));
    const VariationalParams& at =
        est == EstimatorKind::kSmiso ? smiso->mean : w;
    if (cfg.var_every > 0 && iter % cfg.var_every == 0) {
      auto vd = decompose_variance(*model, at, cfg.var_samples,
                                   cfg.var_inner_samples, cfg.var_eps_samples,
                                   var_rng.child(static_cast<std::uint64_t>(iter)));
      r.v_joint = vd.v_joint;
      r.v_sub = vd.v_subsampling;
      r.v_mc = vd.v_mc;
    } else {
      r.v_joint = r.v_sub = r.v_mc = std::nan("");
    }
    r.grad_calls = counter.grad_calls;
    r.hvp_calls = counter.hvp_calls;
    r.step_size = cfg.step_size;
    r.seed = cfg.seed;
    trace.push_back(r);
  };

  record(0);
  for (long t = 1; t <= iters; ++t) {
    std::vector<int> batch = schedule.next_batch();
    Vec eps = noise_rng.child(static_cast<std::uint64_t>(t)).normal_vector(d);
    data_seen += static_cast<long>(batch.size());

    if (est == EstimatorKind::kSmiso) {
      smiso_step(*model, *smiso, batch, eps, &counter);
    } else {
      GradientVector g = GradientVector::zero(d);
      switch (est) {
        case EstimatorKind::kNaive:
          for (int n : batch) g += g_naive(*model, w, n, eps, &counter);
          g *= 1.0 / batch.size();
          break;
        case EstimatorKind::kCv:
          for (int n : batch) g += g_cv(*model, w, n, eps, &counter);
          g *= 1.0 / batch.size();
          break;
        case EstimatorKind::kInc:
          for (int n : batch) g += g_inc(*model, w, n, eps, *table, &counter);
          g *= 1.0 / batch.size();
          for (int n : batch) table->entries[n] = w;
          break;
        case EstimatorKind::kEnsemble:
          for (int n : batch)
            g += g_ensemble(*model, w, n, eps, cfg.beta, *table, &counter);
          g *= 1.0 / batch.size();
          for (int n : batch) table->entries[n] = w;
          break;
        case EstimatorKind::kJointSaga:
          g = g_joint_saga(*model, w, batch, eps, *table, &counter);
          break;
        case EstimatorKind::kJointSvrg:
          g = g_joint_svrg(*model, w, batch, eps, *svrg, &counter);
          break;
        default:
          break;
      }
      w = opt->step(w, g);
    }
    if (cfg.eval_every > 0 && t % cfg.eval_every == 0) record(t);
  }
  if (trace.empty() || trace.back().iteration != iters) record(iters);

  RunResult out;
  out.trace = std::move(trace);
  out.final_params = est == EstimatorKind::kSmiso ? smiso->mean : w;
  out.final_table = std::move(table);
  out.counter = counter;
  return out;
}

inline void save_params_csv(const VariationalParams& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  Vec flat = w.flatten();
  for (int i = 0; i < flat.size(); ++i)
    out << detail::fmt_double(flat[i]) << (i + 1 == flat.size() ? '\n' : ',');
}

inline VariationalParams load_params_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty checkpoint " + path);
  std::stringstream ss(line);
  std::string cell;
  std::vector<double> vals;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  Vec flat(static_cast<int>(vals.size()));
  for (size_t i = 0; i < vals.size(); ++i) flat[static_cast<int>(i)] = vals[i];
  return VariationalParams::unflatten(flat);
}

/// Run + persist trace and checkpoint under cfg.out_dir.
inline RunResult run_and_save(const RunConfig& cfg, const std::string& tag = "") {
  RunResult res = run_bbvi(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  std::string stem = cfg.out_dir + "/trace" + tag + ".csv";
  write_trace_csv(stem, res.trace);
  save_params_csv(res.final_params, cfg.out_dir + "/checkpoint_params" + tag + ".csv");
  if (res.final_table)
    res.final_table->save(cfg.out_dir + "/checkpoint_table" + tag + ".csv");
  return res;
}

struct SweepResult {
  std::vector<double> grid;
  // seed-averaged ELBO trace per step size, on the common eval grid
  std::vector<std::vector<double>> mean_elbo;
  std::vector<long> eval_iters;
  std::vector<double> final_elbo;         // per step size, seed-averaged
  std::vector<double> retrospective_best; // pointwise max over the grid
};

/// Step-size sweep: one trace per (step size, seed); summary of final ELBO
/// per step size; retrospective-best curve (seed-average first, then
/// pointwise max over the grid).
inline SweepResult sweep(RunConfig cfg) {
  if (cfg.grid.empty()) cfg.grid = {cfg.step_size};
  SweepResult out;
  out.grid = cfg.grid;
  std::filesystem::create_directories(cfg.out_dir);

  for (double lr : cfg.grid) {
    std::vector<std::vector<double>> per_seed;
    for (int s = 0; s < cfg.num_seeds; ++s) {
      RunConfig c = cfg;
      c.step_size = lr;
      c.seed = cfg.seed + static_cast<std::uint64_t>(s);
      char tag[96];
      std::snprintf(tag, sizeof(tag), "_lr%g_seed%llu", lr,
                    static_cast<unsigned long long>(c.seed));
      RunResult r = run_and_save(c, tag);
      std::vector<double> elbo;
      if (out.eval_iters.empty())
        for (const auto& row : r.trace) out.eval_iters.push_back(row.iteration);
      for (const auto& row : r.trace) elbo.push_back(row.elbo);
      per_seed.push_back(std::move(elbo));
    }
    std::vector<double> mean(per_seed[0].size(), 0.0);
    for (const auto& e : per_seed)
      for (size_t i = 0; i < e.size(); ++i) mean[i] += e[i] / per_seed.size();
    out.final_elbo.push_back(mean.back());
    out.mean_elbo.push_back(std::move(mean));
  }

  out.retrospective_best.assign(out.eval_iters.size(),
                                -std::numeric_limits<double>::infinity());
  for (const auto& curve : out.mean_elbo)
    for (size_t i = 0; i < curve.size(); ++i)
      out.retrospective_best[i] = std::max(out.retrospective_best[i], curve[i]);

  std::ofstream summary(cfg.out_dir + "/summary.csv");
  summary << "step_size,final_elbo\n";
  for (size_t i = 0; i < out.grid.size(); ++i)
    summary << detail::fmt_double(out.grid[i]) << ','
            << detail::fmt_double(out.final_elbo[i]) << '\n';

  std::ofstream best(cfg.out_dir + "/retrospective_best.csv");
  best << "iteration,best_elbo\n";
  for (size_t i = 0; i < out.eval_iters.size(); ++i)
    best << out.eval_iters[i] << ','
         << detail::fmt_double(out.retrospective_best[i]) << '\n';
  return out;
}

struct DecomposeResult {
  double v_joint = 0.0;
  double v_sub = 0.0;
  double v_mc = 0.0;
  double var_naive = 0.0;
  double var_cv = 0.0;
  double var_inc = 0.0;
  double var_joint = 0.0;
};

/// Variance table at a frozen point: the three decomposition estimates plus
/// measured per-estimator trace-variances. If no table checkpoint is given,
/// the table is synced to the checkpointed parameters.
inline DecomposeResult decompose(const RunConfig& cfg,
                                 const std::string& params_path,
                                 const std::string& table_path = "") {
  Dataset ds = build_dataset(cfg);
  auto model = build_model(cfg, ds);
  VariationalParams w = load_params_csv(params_path);
  if (w.dim() != model->latent_dim())
    throw std::invalid_argument("decompose: checkpoint/model dimension mismatch");

  ParamTable table;
  if (!table_path.empty()) {
    table = ParamTable::load(table_path, model->data_count(), w.dim());
  } else {
    table.entries.assign(model->data_count(), w);
    table.running_mean = table.recompute_running_mean(*model);
    table.initialized = true;
  }

  RngStream rng(cfg.diag_seed != 0 ? cfg.diag_seed : cfg.seed, 77);
  DecomposeResult out;
  auto vd = decompose_variance(*model, w, cfg.var_samples, cfg.var_inner_samples,
                               cfg.var_eps_samples, rng.child(0));
  out.v_joint = vd.v_joint;
  out.v_sub = vd.v_subsampling;
  out.v_mc = vd.v_mc;

  const int s = cfg.var_samples;
  std::vector<GradientVector> naive_s, cv_s, inc_s, joint_s;
  RngStream sample_rng = rng.child(1);
  for (int i = 0; i < s; ++i) {
    RngStream sub = sample_rng.child(static_cast<std::uint64_t>(i));
    int n = static_cast<int>(sub.next_u64() % model->data_count());
    Vec eps = sub.normal_vector(w.dim());
    naive_s.push_back(g_naive(*model, w, n, eps));
    cv_s.push_back(g_cv(*model, w, n, eps));
    inc_s.push_back(g_inc(*model, w, n, eps, table));
    joint_s.push_back(g_joint_frozen(*model, w, n, eps, table));
  }
  out.var_naive = trace_variance(naive_s);
  out.var_cv = trace_variance(cv_s);
  out.var_inc = trace_variance(inc_s);
  out.var_joint = trace_variance(joint_s);

  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream f(cfg.out_dir + "/decompose.csv");
  f << "v_joint,v_sub,v_mc,var_naive,var_cv,var_inc,var_joint\n";
  f << detail::fmt_double(out.v_joint) << ',' << detail::fmt_double(out.v_sub)
    << ',' << detail::fmt_double(out.v_mc) << ','
    << detail::fmt_double(out.var_naive) << ',' << detail::fmt_double(out.var_cv)
    << ',' << detail::fmt_double(out.var_inc) << ','
    << detail::fmt_double(out.var_joint) << '\n';
  return out;
}

/// Dropout-GLM optimization loop sharing the run/trace format. The "elbo"
/// column reports the negated full-data objective estimate.
inline std::vector<TraceRecord> run_glm(const RunConfig& cfg) {
  EstimatorKind est = parse_estimator(cfg.estimator);
  if (est != EstimatorKind::kNaive && est != EstimatorKind::kCv &&
      est != EstimatorKind::kJointSaga)
    throw std::invalid_argument("glm-dropout supports naive, cv, joint-saga");
  if (parse_optimizer(cfg.optimizer) != OptimizerKind::kSgd)
    throw std::invalid_argument("glm-dropout supports the sgd optimizer");

  GlmLoss loss = cfg.synth_classes > 1 ? GlmLoss::kSoftmaxCrossEntropy
                                       : GlmLoss::kSquaredError;
  int k = cfg.synth_classes > 1 ? cfg.synth_classes : static_cast<int>(cfg.glm_outputs);
  DropoutGlm glm = synth_dropout_glm(cfg.synth_n, cfg.glm_dim, k, loss,
                                     cfg.sigma_drop, cfg.seed);
  const int d = glm.input_dim();
  const int n_data = glm.data_count();

  RngStream master(cfg.seed);
  RngStream init_rng = master.child(10);
  RngStream schedule_rng = master.child(11);
  RngStream noise_rng = master.child(12);
  RngStream eval_rng = master.child(13);

  Mat w(glm.num_outputs, d);
  for (int r = 0; r < glm.num_outputs; ++r)
    w.row(r) = (0.1 * init_rng.normal_vector(d)).transpose();

  MinibatchSchedule schedule(n_data, cfg.batch_size, schedule_rng);
  long iters = cfg.epochs > 0 ? cfg.epochs * schedule.batches_per_epoch() : cfg.iters;

  OracleCounter counter;
  std::optional<GlmParamTable> table;
  if (est == EstimatorKind::kJointSaga) {
    RngStream init_noise = master.child(15);
    table = glm_init_table(glm, w, cfg.step_size, schedule, init_noise, &counter);
  }

  auto objective = [&](long iter) {
    RngStream r = eval_rng.child(static_cast<std::uint64_t>(iter));
    double acc = 0.0;
    for (int s = 0; s < cfg.elbo_samples; ++s) {
      Vec eps = Vec::Ones(d) + cfg.sigma_drop * r.normal_vector(d);
      double per = 0.0;
      for (int n = 0; n < n_data; ++n) per += glm_f(glm, w, n, eps);
      acc += per / n_data;
    }
    return acc / cfg.elbo_samples;
  };

  std::vector<TraceRecord> trace;
  long data_seen = 0;
  auto record = [&](long iter) {
    TraceRecord r;
    r.iteration = iter;
    r.epoch = data_seen / n_data;
    r.elbo = -objective(iter);
    r.v_joint = r.v_sub = r.v_mc = std::nan("");
    r.grad_calls = counter.grad_calls;
    r.hvp_calls = counter.hvp_calls;
    r.step_size = cfg.step_size;
    r.seed = cfg.seed;
    trace.push_back(r);
  };

  record(0);
  for (long t = 1; t <= iters; ++t) {
    std::vector<int> batch = schedule.next_batch();
    Vec eps = Vec::Ones(d) +
              cfg.sigma_drop *
                  noise_rng.child(static_cast<std::uint64_t>(t)).normal_vector(d);
    data_seen += static_cast<long>(batch.size());
    Mat g = Mat::Zero(w.rows(), w.cols());
    if (est == EstimatorKind::kJointSaga) {
      g = glm_joint_estimator(glm, w, batch, eps, *table, &counter);
    } else {
      for (int n : batch)
        g += est == EstimatorKind::kCv ? glm_g_cv(glm, w, n, eps, &counter)
                                       : glm_g_naive(glm, w, n, eps, &counter);
      g /= static_cast<double>(batch.size());
    }
    w -= cfg.step_size * g;
    if (cfg.eval_every > 0 && t % cfg.eval_every == 0) record(t);
  }
  if (trace.empty() || trace.back().iteration != iters) record(iters);
  return trace;
}

inline std::vector<TraceRecord> run(const RunConfig& cfg) {
  if (cfg.task == "glm-dropout") return run_glm(cfg);
  return run_bbvi(cfg).trace;
}

}  // namespace jointcv
