#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nkpc/controller.hpp"
#include "nkpc/estimator.hpp"
#include "nkpc/lds.hpp"

namespace nkpc::harness {

/// Plant and cost description. Without explicit matrices the model is the 2-D rotation
/// example (F and H rotations by f_deg and h_deg, Q = q I, R = rho I, B = g = r = I).
struct ModelSpec {
  double f_deg = 15.0;
  double h_deg = 50.0;
  double q = 1e-5;
  double rho = 1e-4;
  std::optional<MatrixXd> F, H, B, Q, R, g, r;
  VectorXd x0_mean = (VectorXd(2) << 1.0, 0.0).finished();
  double p0 = 1.0;

  LdsModel<double> build() const;
  InitialStateDistribution<double> initial_state() const;
};

struct Fig2Spec {
  std::size_t seeds = 10;
  std::size_t n_feat = 100;
  std::size_t steps = 7;
  std::size_t single_steps = 700;
  InverseMethod z_method = InverseMethod::kNeumann;
  UpdateOrder order = UpdateOrder::kIncremental;
  double gamma_z = 1.0;
  double gamma_z_single = 0.01;
  double gamma_f = 5.0;
  double gamma_f_initial = 5.0;
  bool adaptive = false;
  int neumann_passes = 50;
  double neumann_tol = 1e-8;
};

struct ControlSpec {
  std::size_t seeds = 500;
  long t0 = 0;
  long horizon = 5;
  std::size_t n_w = 10000;
  InverseMethod t_method = InverseMethod::kNeumann;
  double gamma_t = 1.0;
  int t_iterations = 1;
  StoragePolicy policy = StoragePolicy::kStoreAll;
  std::size_t reuse_k = 1;
  std::size_t g_samples = 100000;
  std::size_t train_n_feat = 100;
  std::size_t train_steps = 20;
};

struct AppendixCSpec {
  std::size_t seeds = 20;
  std::size_t steps = 1100;
  double k_arb_scale = 0.5;
  double offset_factor = 1000.0;
  std::size_t asymptotic_from = 100;
};

struct RegimeSpec {
  std::size_t seeds = 100;
  std::size_t initial_steps = 100;
  std::size_t warmup = 200;
  std::size_t stationary_steps = 10000;
  std::size_t window = 5;
  std::size_t baseline = 50;
  double k = 3.0;
  std::size_t detect_limit = 20;
  std::size_t relearn_raw_steps = 100;
  std::size_t relearn_steps = 1000;
  double gamma_f_raw = 0.3;
  double gamma_f = 0.01;
  double gamma_z = 0.01;
  double rotate_deg = 90.0;
  double p0 = 0.0;  // initial-state spread for this experiment (x0 = model.x0_mean when 0)
};

struct InvariantsSpec {
  std::size_t features = 100000;
  std::size_t steps = 10;
  std::size_t members = 100000;
  std::size_t models = 20;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelSpec model;
  Fig2Spec fig2;
  ControlSpec control;
  AppendixCSpec appendix_c;
  RegimeSpec regime;
  InvariantsSpec invariants;
  std::string out_dir = "out";
  bool svg = false;

  /// Throws ParameterError on inconsistent values.
  void validate() const;
};

/// Parses the `key = value` format. Unknown sections or keys, duplicate keys and
/// malformed values raise ParameterError with the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Serializes every field; parse_config(echo_config(c)) reproduces c.
std::string echo_config(const ExperimentConfig& config);

MatrixXd parse_matrix(const std::string& text);
std::string format_matrix(const MatrixXd& m);

}  // namespace nkpc::harness
