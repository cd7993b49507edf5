#include "nkpc/harness/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "nkpc/harness/svg.hpp"
#include "nkpc/kalman.hpp"
#include "nkpc/transformed.hpp"

namespace nkpc::harness {
namespace {

// Stream ids per experiment so runs never share draws.
enum : std::uint64_t {
  kRun2 = 2,
  kRun3 = 3,
  kRun4 = 4,
  kRun4Init = 40,
  kAppendixC = 5,
  kTraining = 6,
  kTrainingInit = 60,
  kGLearning = 7,
  kRegime = 8,
};

MatrixXd batch_at(const std::vector<Trajectory<double>>& ens, std::size_t t) {
  MatrixXd y(ens[0].measurements[t].size(), Eigen::Index(ens.size()));
  for (std::size_t p = 0; p < ens.size(); ++p) y.col(Eigen::Index(p)) = ens[p].measurements[t];
  return y;
}

void record(NeuralRun& run, long t_plot, const NeuralEstimator<double>& est, bool raw_output) {
  run.t_plot.push_back(t_plot);
  run.ihk22.push_back(raw_output ? 0.0 : est.gain()(1, 1));
  run.f22.push_back(est.F_hat()(1, 1));
}

void finish(NeuralRun& run, const NeuralEstimator<double>& est) {
  run.final_F = est.F_hat();
  run.final_gain = est.z_initialized() ? est.gain() : MatrixXd::Zero(est.dy(), est.dy());
  run.nonconverged = est.z_initialized() ? est.z_rep().nonconverged_applications() : 0;
  run.warnings = est.warnings();
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ParameterError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParameterError("cannot write '" + path + "'");
  f << text;
}

double mean_of(const std::vector<double>& v, std::size_t from = 0) {
  double s = 0;
  for (std::size_t i = from; i < v.size(); ++i) s += v[i];
  return v.size() > from ? s / double(v.size() - from) : 0.0;
}

}  // namespace

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = base + i;
  return out;
}

std::vector<MatrixXd> classical_gain_path(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                                          std::size_t steps) {
  auto kf = KfState<double>::initial(model, init.mean, init.cov);
  const MatrixXd I = MatrixXd::Identity(model.dy(), model.dy());
  std::vector<MatrixXd> out;
  for (std::size_t t = 0; t <= steps; ++t) {
    kf = kf_learn_step(model, kf);
    out.push_back(I - model.H * kf.K);
  }
  return out;
}

std::vector<MatrixXd> transformed_gain_path(const LdsModel<double>& model,
                                            const InitialStateDistribution<double>& init, std::size_t steps) {
  const auto tm = derive_transformed(model);
  MatrixXd Z = symmetrize(model.H * init.cov * model.H.transpose() + model.R_true);
  std::vector<MatrixXd> out;
  for (std::size_t t = 0; t <= steps; ++t) {
    out.push_back(gain_from_z(tm.R, Z));
    Z = z_step(tm, Z);
  }
  return out;
}

EstimatorConfig estimator_config(const Fig2Spec& spec, double gamma_z) {
  EstimatorConfig c;
  c.z_method = spec.z_method;
  c.order = spec.order;
  c.gamma_z = gamma_z;
  c.gamma_f = spec.gamma_f;
  c.gamma_f_initial = spec.gamma_f_initial;
  c.neumann.n_passes = spec.neumann_passes;
  c.neumann.tol = spec.neumann_tol;
  if (spec.adaptive) {
    c.adaptive_z = AdaptiveRateParams::for_covariance();
    c.adaptive_f = AdaptiveRateParams::for_dynamics();
  }
  return c;
}

NeuralRun run_single_feature(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                             const Fig2Spec& spec, std::uint64_t seed) {
  const auto tm = derive_transformed(model);
  const auto ens = simulate_ensemble(model, 1, spec.single_steps + 1, RngStream(seed, kRun2), init);
  NeuralEstimator<double> est(model.dy(), 1, estimator_config(spec, spec.gamma_z_single), tm.F_tilde);
  est.set_R(model.R_true);
  est.set_mode(EstimatorMode::kKalman);
  est.initialize_features(batch_at(ens, 0));
  NeuralRun run;
  for (std::size_t t = 1; t <= spec.single_steps; ++t) {
    est.kalman_step(batch_at(ens, t));
    est.predict();
    record(run, long(t), est, false);
  }
  finish(run, est);
  return run;
}

NeuralRun run_ensemble(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                       const Fig2Spec& spec, std::size_t n_feat, InverseMethod method, std::uint64_t seed) {
  const auto tm = derive_transformed(model);
  const auto ens = simulate_ensemble(model, n_feat, spec.steps + 1, RngStream(seed, kRun3), init);
  Fig2Spec s = spec;
  s.z_method = method;
  NeuralEstimator<double> est(model.dy(), n_feat, estimator_config(s, spec.gamma_z), tm.F_tilde);
  est.set_R(model.R_true);
  est.set_mode(EstimatorMode::kKalman);
  est.initialize_features(batch_at(ens, 0));
  NeuralRun run;
  for (std::size_t t = 1; t <= spec.steps; ++t) {
    est.kalman_step(batch_at(ens, t));
    est.predict();
    record(run, long(t), est, false);
  }
  finish(run, est);
  return run;
}

NeuralRun run_sysid(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                    const Fig2Spec& spec, std::size_t n_feat, std::uint64_t seed) {
  const auto ens = simulate_ensemble(model, n_feat, spec.steps + 2, RngStream(seed, kRun4), init);
  RngStream f_rng(seed, kRun4Init);
  NeuralEstimator<double> est(model.dy(), n_feat, estimator_config(spec, spec.gamma_z),
                              NeuralEstimator<double>::random_f(model.dy(), f_rng));
  est.set_R(model.R_true);
  est.initialize_features(batch_at(ens, 0));
  NeuralRun run;
  est.learn_f_initial(batch_at(ens, 1));
  record(run, 0, est, true);
  est.set_mode(EstimatorMode::kKalman);
  for (std::size_t t = 2; t <= spec.steps + 1; ++t) {
    est.kalman_step(batch_at(ens, t), FLearning::kRefined);
    est.predict();
    record(run, long(t) - 1, est, false);
  }
  finish(run, est);
  return run;
}

Fig2Result run_fig2(const ExperimentConfig& config) {
  config.validate();
  const auto model = config.model.build();
  const auto init = config.model.initial_state();
  const auto& spec = config.fig2;
  const auto tm = derive_transformed(model);
  Fig2Result out;
  out.warnings = tm.warnings;
  out.table.header = {"method", "seed", "t_plot", "feature", "IHK22", "F22"};
  auto row = [&](const std::string& method, std::uint64_t seed, long t, std::size_t feat, double g, double f) {
    out.table.rows.push_back(
        {method, std::to_string(seed), std::to_string(t), std::to_string(feat), format_double(g), format_double(f)});
  };

  const std::size_t span = std::max(spec.steps + 1, spec.single_steps);
  const auto run1 = classical_gain_path(model, init, span);
  const auto run1p = transformed_gain_path(model, init, span);
  for (std::size_t t = 0; t <= span; ++t) {
    out.run1_vs_run1p = std::max(out.run1_vs_run1p, (run1[t] - run1p[t]).cwiseAbs().maxCoeff());
    row("classical", config.seed, long(t), 0, run1[t](1, 1), tm.F_tilde(1, 1));
    row("transformed", config.seed, long(t), 0, run1p[t](1, 1), tm.F_tilde(1, 1));
  }

  for (std::uint64_t seed : seed_list(config.seed, spec.seeds)) {
    const auto r2 = run_single_feature(model, init, spec, seed);
    for (std::size_t k = 0; k < r2.t_plot.size(); ++k) row("neural-single", seed, r2.t_plot[k], 1, r2.ihk22[k], r2.f22[k]);
    out.run2_tail_mean.push_back(mean_of(r2.ihk22, r2.ihk22.size() > 100 ? r2.ihk22.size() - 100 : 0));

    const auto r3 = run_ensemble(model, init, spec, spec.n_feat, spec.z_method, seed);
    for (std::size_t k = 0; k < r3.t_plot.size(); ++k)
      row("neural-ensemble", seed, r3.t_plot[k], spec.n_feat, r3.ihk22[k], r3.f22[k]);
    out.run3_terminal.push_back(r3.ihk22.back());

    const auto r4 = run_sysid(model, init, spec, spec.n_feat, seed);
    for (std::size_t k = 0; k < r4.t_plot.size(); ++k)
      row("neural-sysid", seed, r4.t_plot[k], spec.n_feat, r4.ihk22[k], r4.f22[k]);
    out.run4_f22.push_back(r4.f22.back());

    for (const auto* r : {&r2, &r3, &r4}) {
      out.warnings.insert(out.warnings.end(), r->warnings.begin(), r->warnings.end());
      if (r->nonconverged > 0)
        out.warnings.push_back("seed " + std::to_string(seed) + ": " + std::to_string(r->nonconverged) +
                               " Neumann applications hit the pass limit");
    }
  }
  return out;
}

AppendixCResult run_appendix_c_baseline(const ExperimentConfig& config) {
  config.validate();
  const auto model = config.model.build();
  const auto init = config.model.initial_state();
  const auto& spec = config.appendix_c;
  const Eigen::Index dx = model.dx();
  AppendixCResult out;

  const auto h_pinv = pseudoinverse(model.H);
  out.k_arb = spec.k_arb_scale * h_pinv.value;
  const MatrixXd Ix = MatrixXd::Identity(dx, dx);
  out.arb_contraction = spectral_radius(MatrixXd(Ix - out.k_arb * model.H));
  if (!(out.arb_contraction < 1) || !h_pinv.full_column_rank) {
    out.proviso_ok = false;
    out.warnings.push_back("K_arb does not pull the posterior toward H^-1 y (spectral radius of I - K H = " +
                           std::to_string(out.arb_contraction) + ")");
  }
  const double noise_floor = std::sqrt(model.R_true.trace() / double(model.dy()));
  const double offset = spec.offset_factor * noise_floor;
  const MatrixXd q_factor = covariance_factor(model.Q);
  const MatrixXd r_factor = covariance_factor(model.R_true);
  const MatrixXd p0_factor = covariance_factor(init.cov);

  for (std::uint64_t seed : seed_list(config.seed, spec.seeds)) {
    RngStream root(seed, kAppendixC);
    RngStream x0_rng = root.child(0), dir_rng = root.child(1), plant_rng = root.child(2), sensor_rng = root.child(3);
    VectorXd x = init.mean + p0_factor * x0_rng.standard_normal<double>(dx);
    VectorXd dir = dir_rng.standard_normal<double>(dx);
    dir /= dir.norm();
    const VectorXd prior0 = x + offset * dir;
    auto kf = KfState<double>::initial(model, prior0, MatrixXd(offset * offset / double(dx) * Ix));
    VectorXd arb_minus = prior0, zero_minus = prior0;
    const VectorXd u = VectorXd::Zero(model.du());
    std::vector<double> ek, ea, ez;
    for (std::size_t t = 0; t < spec.steps; ++t) {
      const VectorXd y = model.H * x + r_factor * sensor_rng.standard_normal<double>(model.dy());
      kf = kf_learn_step(model, kf);
      kf = kf_execute_step(model, kf, y, u);
      const VectorXd arb = arb_minus + out.k_arb * (y - model.H * arb_minus);
      ek.push_back((x - kf.xhat).norm());
      ea.push_back((x - arb).norm());
      ez.push_back((x - zero_minus).norm());
      arb_minus = model.F * arb;
      zero_minus = model.F * zero_minus;
      x = model.F * x + q_factor * plant_rng.standard_normal<double>(dx);
    }
    auto ratio10 = [](const std::vector<double>& e) { return e[10] / e[0]; };
    auto tail_ms = [&](const std::vector<double>& e) {
      double s = 0;
      for (std::size_t t = spec.asymptotic_from; t < e.size(); ++t) s += e[t] * e[t];
      return s / double(e.size() - spec.asymptotic_from);
    };
    out.ratio10_arb.push_back(ratio10(ea));
    out.ratio10_kf.push_back(ratio10(ek));
    out.asym_kf.push_back(tail_ms(ek));
    out.asym_arb.push_back(tail_ms(ea));
    out.err_kf.push_back(std::move(ek));
    out.err_arb.push_back(std::move(ea));
    out.err_zero.push_back(std::move(ez));
  }
  return out;
}

ControllerConfig controller_config(const ControlSpec& spec) {
  ControllerConfig c;
  c.t_method = spec.t_method;
  c.gamma_t = spec.gamma_t;
  c.t_iterations = spec.t_iterations;
  c.n_w = spec.n_w;
  c.policy = spec.policy;
  c.reuse_k = spec.reuse_k;
  return c;
}

NeuralEstimator<double> train_estimator(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                                        const ExperimentConfig& config, std::uint64_t seed) {
  const auto& spec = config.control;
  const auto ens = simulate_ensemble(model, spec.train_n_feat, spec.train_steps + 2, RngStream(seed, kTraining), init);
  RngStream f_rng(seed, kTrainingInit);
  NeuralEstimator<double> est(model.dy(), spec.train_n_feat, estimator_config(config.fig2, config.fig2.gamma_z),
                              NeuralEstimator<double>::random_f(model.dy(), f_rng));
  est.set_R(model.R_true);
  est.initialize_features(batch_at(ens, 0));
  est.learn_f_initial(batch_at(ens, 1));
  est.set_mode(EstimatorMode::kKalman);
  for (std::size_t t = 2; t < spec.train_steps + 2; ++t) {
    est.kalman_step(batch_at(ens, t), FLearning::kRefined);
    est.predict();
  }
  return est;
}

ControlDemoResult run_control_demo(const ExperimentConfig& config) {
  config.validate();
  const auto model = config.model.build();
  const auto init = config.model.initial_state();
  const auto& spec = config.control;
  const auto tm = derive_transformed(model);
  ControlDemoResult out;
  out.warnings = tm.warnings;

  const auto est = train_estimator(model, init, config, config.seed);
  NeuralController<double> ctrl(tm.g_tilde, tm.r_tilde, controller_config(spec));
  RngStream g_rng(config.seed, kGLearning);
  ctrl.learn_g_offline(spec.g_samples, g_rng);
  out.F_hat = est.F_hat();
  out.g_hat = ctrl.g_hat();
  out.warnings.insert(out.warnings.end(), ctrl.warnings().begin(), ctrl.warnings().end());

  const long N = spec.t0 + spec.horizon;
  out.seeds = seed_list(config.seed, spec.seeds);
  out.stats = closed_loop_run(model, est, ctrl, spec.t0, N, out.seeds, init, true);

  // Learned vs oracle T schedule for the first seed.
  NeuralController<double> first = ctrl;
  first.couple(est.F_hat());
  first.kc_learning_sweep(N, spec.t0, RngStream(out.seeds.front(), 0).child(3));
  out.learned_T = first.t_path();
  const auto oracle = t_path(tm, std::size_t(spec.horizon - 1));  // [k] = T_{N-k}
  for (long t = spec.t0; t < N; ++t) {
    const MatrixXd& T = oracle[std::size_t(N - (t + 1))];
    out.oracle_T.push_back(T);
    out.t_rel_dev.push_back(rel_frobenius(out.learned_T[std::size_t(t - spec.t0)], T));
  }
  return out;
}

RegimeResult run_regime_change(const ExperimentConfig& config) {
  config.validate();
  const auto model0 = config.model.build();
  const auto& spec = config.regime;
  auto init = config.model.initial_state();
  init.cov = spec.p0 * MatrixXd::Identity(model0.dx(), model0.dx());
  RegimeResult out;

  LdsModel<double> model1 = model0;
  model1.F = rotation2d<double>(spec.rotate_deg).topLeftCorner(model0.dx(), model0.dx()) * model0.F;
  if (model0.dx() != 2) model1.F = -model0.F;
  {
    InitialStateDistribution<double> d = init;
    const auto path = classical_gain_path(model1, d, 2000);
    out.oracle_gain = path.back()(1, 1);
  }

  Fig2Spec fs = config.fig2;
  fs.gamma_f_initial = spec.gamma_f_raw;
  fs.gamma_f = spec.gamma_f;
  fs.order = UpdateOrder::kIncremental;
  fs.adaptive = false;
  EstimatorConfig ec = estimator_config(fs, spec.gamma_z);
  RegimeSettings rs;
  rs.window = spec.window;
  rs.baseline = spec.baseline;
  rs.k = spec.k;
  rs.warmup = spec.warmup;

  const MatrixXd q_factor = covariance_factor(model0.Q);
  const MatrixXd r_factor = covariance_factor(model0.R_true);
  const MatrixXd p0_factor = covariance_factor(init.cov);
  const long change_step = long(spec.initial_steps + spec.warmup + spec.stationary_steps);

  for (std::uint64_t seed : seed_list(config.seed, spec.seeds)) {
    RngStream root(seed, kRegime);
    RngStream x0_rng = root.child(0), plant_rng = root.child(1), sensor_rng = root.child(2), f_rng = root.child(3);
    RegimeSeedResult res;
    res.seed = seed;
    VectorXd x = init.mean + p0_factor * x0_rng.standard_normal<double>(model0.dx());
    const LdsModel<double>* m = &model0;
    auto advance = [&]() -> MatrixXd {
      x = m->F * x + q_factor * plant_rng.standard_normal<double>(m->dx());
      return m->H * x + r_factor * sensor_rng.standard_normal<double>(m->dy());
    };
    NeuralEstimator<double> est(model0.dy(), 1, ec, NeuralEstimator<double>::random_f(model0.dy(), f_rng));
    est.set_R(model0.R_true);
    est.initialize_features(MatrixXd(model0.H * x + r_factor * sensor_rng.standard_normal<double>(model0.dy())));
    long step = 0;
    for (std::size_t k = 0; k < spec.initial_steps; ++k, ++step) est.learn_f_initial(advance());
    est.set_mode(EstimatorMode::kKalman);
    for (; step < change_step; ++step) {
      est.kalman_step(advance(), FLearning::kRefined);
      est.predict();
      if (est.detect_regime_change(rs)) {
        res.false_alarm_step = step;
        break;
      }
    }
    if (res.false_alarm_step >= 0) {
      out.seeds.push_back(res);
      continue;
    }
    m = &model1;
    const long give_up = change_step + long(spec.detect_limit) * 10;
    for (; step < give_up; ++step) {
      est.kalman_step(advance(), FLearning::kRefined);
      est.predict();
      if (est.detect_regime_change(rs)) {
        res.detect_delay = step + 1 - change_step;
        ++step;
        break;
      }
    }
    if (res.detect_delay < 0) {
      out.seeds.push_back(res);
      continue;
    }
    for (std::size_t k = 0; k < spec.relearn_raw_steps; ++k) est.learn_f_initial(advance());
    est.set_mode(EstimatorMode::kKalman);
    std::vector<double> gains;
    for (std::size_t k = 0; k < spec.relearn_steps; ++k) {
      est.kalman_step(advance(), FLearning::kRefined);
      est.predict();
      gains.push_back(est.gain()(1, 1));
    }
    res.reconverged_gain = mean_of(gains, gains.size() > 100 ? gains.size() - 100 : 0);
    out.seeds.push_back(res);
  }
  return out;
}

std::vector<std::string> write_fig2(const Fig2Result& r, const ExperimentConfig& config) {
  ensure_dir(config.out_dir);
  std::vector<std::string> paths{join(config.out_dir, "fig2.csv"), join(config.out_dir, "config.echo")};
  r.table.write(paths[0]);
  write_text(paths[1], echo_config(config));
  if (config.svg) {
    std::map<std::string, Series> gain, fser;
    for (const auto& row : r.table.rows) {
      if (row[1] != std::to_string(config.seed)) continue;
      const double t = parse_double(row[2]);
      const long tl = long(t);
      if ((row[0] == "classical" || row[0] == "transformed") && tl > long(config.fig2.steps) + 1) continue;
      auto& g = gain[row[0]];
      g.name = row[0];
      g.x.push_back(t);
      g.y.push_back(parse_double(row[4]));
      if (row[0] == "neural-sysid") {
        auto& f = fser[row[0]];
        f.name = "F22 learned";
        f.x.push_back(t);
        f.y.push_back(parse_double(row[5]));
      }
    }
    std::vector<Series> gs;
    for (auto& [k, s] : gain)
      if (k != "neural-single") gs.push_back(s);
    paths.push_back(join(config.out_dir, "fig2a.svg"));
    write_line_chart(paths.back(), "(I-HK)22 vs t", "t_plot", "(I-HK)22", gs);
    Series single = gain["neural-single"];
    single.name = "neural-single (700 steps)";
    paths.push_back(join(config.out_dir, "fig2a_single.svg"));
    write_line_chart(paths.back(), "(I-HK)22, one feature", "t", "(I-HK)22", {single});
    std::vector<Series> fs;
    for (auto& [k, s] : fser) fs.push_back(s);
    Series truth{"F22 true", {}, {}};
    for (std::size_t t = 0; t <= config.fig2.steps; ++t) {
      truth.x.push_back(double(t));
      truth.y.push_back(derive_transformed(config.model.build()).F_tilde(1, 1));
    }
    fs.push_back(truth);
    paths.push_back(join(config.out_dir, "fig2b.svg"));
    write_line_chart(paths.back(), "F22 learning", "t_plot", "F22", fs);
  }
  return paths;
}

std::vector<std::string> write_appendix_c(const AppendixCResult& r, const ExperimentConfig& config) {
  ensure_dir(config.out_dir);
  CsvTable t;
  t.header = {"method", "seed", "t", "error"};
  const auto seeds = seed_list(config.seed, r.err_kf.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const std::pair<const char*, const std::vector<double>*> sets[] = {
        {"kalman", &r.err_kf[s]}, {"fixed", &r.err_arb[s]}, {"zero", &r.err_zero[s]}};
    for (const auto& [name, e] : sets)
      for (std::size_t k = 0; k < e->size(); ++k)
        t.rows.push_back({name, std::to_string(seeds[s]), std::to_string(k), format_double((*e)[k])});
  }
  CsvTable summary;
  summary.header = {"seed", "ratio10_fixed", "ratio10_kalman", "asym_mse_kalman", "asym_mse_fixed"};
  for (std::size_t s = 0; s < seeds.size(); ++s)
    summary.rows.push_back({std::to_string(seeds[s]), format_double(r.ratio10_arb[s]), format_double(r.ratio10_kf[s]),
                            format_double(r.asym_kf[s]), format_double(r.asym_arb[s])});
  std::vector<std::string> paths{join(config.out_dir, "appendix_c.csv"), join(config.out_dir, "appendix_c_summary.csv"),
                                 join(config.out_dir, "config.echo")};
  t.write(paths[0]);
  summary.write(paths[1]);
  write_text(paths[2], echo_config(config));
  if (config.svg && !r.err_kf.empty()) {
    const std::size_t n = std::min<std::size_t>(50, r.err_kf[0].size());
    Series a{"kalman", {}, {}}, b{"fixed K", {}, {}}, c{"zero gain", {}, {}};
    for (std::size_t k = 0; k < n; ++k) {
      for (auto* s : {&a, &b, &c}) s->x.push_back(double(k));
      a.y.push_back(std::log10(r.err_kf[0][k]));
      b.y.push_back(std::log10(r.err_arb[0][k]));
      c.y.push_back(std::log10(r.err_zero[0][k]));
    }
    paths.push_back(join(config.out_dir, "appendix_c.svg"));
    write_line_chart(paths.back(), "posterior error", "t", "log10 ||x - x^||", {a, b, c});
  }
  return paths;
}

std::vector<std::string> write_control_demo(const ControlDemoResult& r, const ExperimentConfig& config) {
  ensure_dir(config.out_dir);
  CsvTable costs;
  costs.header = {"seed", "neural", "classical", "zero"};
  for (std::size_t s = 0; s < r.seeds.size(); ++s)
    costs.rows.push_back({std::to_string(r.seeds[s]), format_double(r.stats.neural.per_seed[s]),
                          format_double(r.stats.classical.per_seed[s]), format_double(r.stats.zero.per_seed[s])});
  CsvTable summary;
  summary.header = {"controller", "mean", "stddev"};
  summary.rows.push_back({"neural", format_double(r.stats.neural.mean), format_double(r.stats.neural.stddev)});
  summary.rows.push_back({"classical", format_double(r.stats.classical.mean), format_double(r.stats.classical.stddev)});
  summary.rows.push_back({"zero", format_double(r.stats.zero.mean), format_double(r.stats.zero.stddev)});
  CsvTable controls;
  controls.header = {"controller", "seed", "t", "component", "u_tilde"};
  for (std::size_t s = 0; s < r.seeds.size(); ++s) {
    const std::pair<const char*, const std::vector<std::vector<VectorXd>>*> sets[] = {
        {"neural", &r.stats.neural_u_tilde}, {"classical", &r.stats.classical_u_tilde}};
    for (const auto& [name, all] : sets) {
      if (s >= all->size()) continue;
      const auto& seq = (*all)[s];
      for (std::size_t k = 0; k < seq.size(); ++k)
        for (Eigen::Index c = 0; c < seq[k].size(); ++c)
          controls.rows.push_back({name, std::to_string(r.seeds[s]), std::to_string(config.control.t0 + long(k)),
                                   std::to_string(c), format_double(seq[k](c))});
    }
  }
  CsvTable tdev;
  tdev.header = {"t", "rel_frobenius"};
  for (std::size_t k = 0; k < r.t_rel_dev.size(); ++k)
    tdev.rows.push_back({std::to_string(config.control.t0 + long(k)), format_double(r.t_rel_dev[k])});
  std::vector<std::string> paths{join(config.out_dir, "control_costs.csv"), join(config.out_dir, "control_summary.csv"),
                                 join(config.out_dir, "control_u_tilde.csv"), join(config.out_dir, "control_t_path.csv"),
                                 join(config.out_dir, "config.echo")};
  costs.write(paths[0]);
  summary.write(paths[1]);
  controls.write(paths[2]);
  tdev.write(paths[3]);
  write_text(paths[4], echo_config(config));
  if (config.svg && !r.stats.neural_u_tilde.empty()) {
    Series a{"neural u~1", {}, {}}, b{"classical u~1", {}, {}};
    for (std::size_t k = 0; k < r.stats.neural_u_tilde[0].size(); ++k) {
      a.x.push_back(double(config.control.t0 + long(k)));
      b.x.push_back(double(config.control.t0 + long(k)));
      a.y.push_back(r.stats.neural_u_tilde[0][k](0));
      b.y.push_back(r.stats.classical_u_tilde[0][k](0));
    }
    paths.push_back(join(config.out_dir, "control_u_tilde.svg"));
    write_line_chart(paths.back(), "control, first seed", "t", "u~ component 1", {a, b});
  }
  return paths;
}

}  // namespace nkpc::harness
