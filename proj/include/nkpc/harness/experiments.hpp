#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nkpc/controller.hpp"
#include "nkpc/estimator.hpp"
#include "nkpc/harness/config.hpp"
#include "nkpc/harness/csv.hpp"

namespace nkpc::harness {

/// base, base + 1, ..., base + n - 1
std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t n);

// ---- Fig. 2 ---------------------------------------------------------------------------

/// I - HK_t for t = 0..steps from the classical recursion started at P-_0 = init.cov.
std::vector<MatrixXd> classical_gain_path(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                                          std::size_t steps);
/// R Z_t^-1 for t = 0..steps from the measurement-space recursion, Z_0 = H P-_0 H' + R.
std::vector<MatrixXd> transformed_gain_path(const LdsModel<double>& model,
                                            const InitialStateDistribution<double>& init, std::size_t steps);

struct NeuralRun {
  std::vector<long> t_plot;
  std::vector<double> ihk22;
  std::vector<double> f22;
  MatrixXd final_gain;
  MatrixXd final_F;
  long nonconverged = 0;
  Warnings warnings;
};

EstimatorConfig estimator_config(const Fig2Spec& spec, double gamma_z);

/// Single feature, Z learning only (known F~ and R), `spec.single_steps` steps.
NeuralRun run_single_feature(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                             const Fig2Spec& spec, std::uint64_t seed);
/// `n_feat` simultaneously tracked features, Z learning only, `spec.steps` steps.
NeuralRun run_ensemble(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                       const Fig2Spec& spec, std::size_t n_feat, InverseMethod method, std::uint64_t seed);
/// As run_ensemble plus F~ learning: one raw-measurement step, then Kalman mode with the
/// refined rule. Indexed by t_plot = t - 1, t_plot = 0..spec.steps.
NeuralRun run_sysid(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                    const Fig2Spec& spec, std::size_t n_feat, std::uint64_t seed);

struct Fig2Result {
  CsvTable table;
  double run1_vs_run1p = 0;
  std::vector<double> run2_tail_mean;  // per seed: mean over the last 100 steps
  std::vector<double> run3_terminal;   // per seed
  std::vector<double> run4_f22;        // per seed
  Warnings warnings;
};

Fig2Result run_fig2(const ExperimentConfig& config);

// ---- Appendix C baseline --------------------------------------------------------------

struct AppendixCResult {
  std::vector<std::vector<double>> err_kf, err_arb, err_zero;  // [seed][t], posterior ||x - x^||
  std::vector<double> ratio10_arb, ratio10_kf;
  std::vector<double> asym_kf, asym_arb;  // mean squared error over the tail
  MatrixXd k_arb;
  double arb_contraction = 0;  // spectral radius of I - K_arb H
  bool proviso_ok = true;
  Warnings warnings;
};

AppendixCResult run_appendix_c_baseline(const ExperimentConfig& config);

// ---- Control demo ---------------------------------------------------------------------

/// Estimator trained on `spec.train_n_feat` features: one raw F~ step, then
/// `spec.train_steps` Kalman-mode steps with refined F~ and Z learning.
NeuralEstimator<double> train_estimator(const LdsModel<double>& model, const InitialStateDistribution<double>& init,
                                        const ExperimentConfig& config, std::uint64_t seed);
ControllerConfig controller_config(const ControlSpec& spec);

struct ControlDemoResult {
  ClosedLoopStats stats;
  std::vector<std::uint64_t> seeds;
  std::vector<MatrixXd> learned_T, oracle_T;  // T_{t+1} for t = t0..N-1, first seed
  std::vector<double> t_rel_dev;
  MatrixXd F_hat, g_hat;
  Warnings warnings;
};

ControlDemoResult run_control_demo(const ExperimentConfig& config);

// ---- Regime change --------------------------------------------------------------------

struct RegimeSeedResult {
  std::uint64_t seed = 0;
  long false_alarm_step = -1;  // first detection before the change, -1 if none
  long detect_delay = -1;      // steps after the change, -1 if never
  double reconverged_gain = 0;
};

struct RegimeResult {
  std::vector<RegimeSeedResult> seeds;
  double oracle_gain = 0;  // steady (I - HK)_22 after the change
  Warnings warnings;
};

RegimeResult run_regime_change(const ExperimentConfig& config);

// ---- output ---------------------------------------------------------------------------

/// Writes CSV (+ SVG when config.svg) and config.echo into config.out_dir. Returns the
/// written paths.
std::vector<std::string> write_fig2(const Fig2Result& r, const ExperimentConfig& config);
std::vector<std::string> write_appendix_c(const AppendixCResult& r, const ExperimentConfig& config);
std::vector<std::string> write_control_demo(const ControlDemoResult& r, const ExperimentConfig& config);

}  // namespace nkpc::harness
