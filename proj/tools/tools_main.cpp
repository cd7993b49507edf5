#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nkpc/errors.hpp"
#include "nkpc/harness/config.hpp"
#include "nkpc/harness/experiments.hpp"
#include "nkpc/harness/invariants.hpp"

namespace h = nkpc::harness;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kNumerical = 2, kCheckFailed = 3 };

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  bool svg = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "Configuration file (key = value with [sections])");
  sub->add_option_function<std::uint64_t>(
      "--seed", [&f](const std::uint64_t& s) { f.seed = s, f.seed_set = true; }, "Base seed");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_flag("--svg", f.svg, "Also write SVG charts");
}

h::ExperimentConfig resolve(const CommonFlags& f) {
  h::ExperimentConfig cfg = f.config.empty() ? h::ExperimentConfig{} : h::load_config(f.config);
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.svg) cfg.svg = true;
  cfg.validate();
  return cfg;
}

void print_warnings(const nkpc::Warnings& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

void print_paths(const std::vector<std::string>& paths) {
  for (const auto& p : paths) std::cout << "wrote " << p << "\n";
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / double(v.size());
}

int cmd_fig2(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto r = h::run_fig2(cfg);
  print_warnings(r.warnings);
  std::printf("run1 vs run1' max |diff|      %.3e\n", r.run1_vs_run1p);
  std::printf("run2 tail mean (I-HK)22       %.6f\n", mean(r.run2_tail_mean));
  std::printf("run3 terminal (I-HK)22        %.6f\n", mean(r.run3_terminal));
  std::printf("run4 final F22                %.6f\n", mean(r.run4_f22));
  print_paths(h::write_fig2(r, cfg));
  return kOk;
}

int cmd_control(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto r = h::run_control_demo(cfg);
  print_warnings(r.warnings);
  std::printf("mean cost  neural %.6f  classical %.6f  zero %.6f\n", r.stats.neural.mean, r.stats.classical.mean,
              r.stats.zero.mean);
  for (std::size_t k = 0; k < r.t_rel_dev.size(); ++k)
    std::printf("T schedule t=%ld rel dev %.3e\n", long(cfg.control.t0) + long(k), r.t_rel_dev[k]);
  print_paths(h::write_control_demo(r, cfg));
  return kOk;
}

int cmd_appendix_c(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto r = h::run_appendix_c_baseline(cfg);
  print_warnings(r.warnings);
  std::printf("fixed K: spectral radius of I - KH %.3f (%s)\n", r.arb_contraction,
              r.proviso_ok ? "valid" : "violates proviso");
  std::printf("error(10)/error(0)  fixed %.3e  kalman %.3e\n", mean(r.ratio10_arb), mean(r.ratio10_kf));
  std::printf("tail mse            fixed %.3e  kalman %.3e\n", mean(r.asym_arb), mean(r.asym_kf));
  print_paths(h::write_appendix_c(r, cfg));
  return kOk;
}

int run_checks(const std::vector<h::CheckResult>& checks) {
  std::cout << h::format_checks(checks);
  for (const auto& c : checks)
    if (!c.passed) return kCheckFailed;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Kalman filter / controller experiments"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto* fig2 = app.add_subcommand("fig2", "Kalman gain and F learning runs (CSV: fig2.csv)");
  auto* control = app.add_subcommand("control-demo", "Closed-loop neural vs classical vs zero control");
  auto* appc = app.add_subcommand("appendix-c", "Fixed blending matrix vs optimal filter error decay");
  auto* inv = app.add_subcommand("invariants", "Monte-Carlo invariant and property suites");
  auto* eq = app.add_subcommand("oracle-equiv", "Measurement-space vs classical recursion checks");
  for (auto* s : {fig2, control, appc, inv, eq}) add_common(s, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (*fig2) return cmd_fig2(flags);
    if (*control) return cmd_control(flags);
    if (*appc) return cmd_appendix_c(flags);
    if (*inv) return run_checks(h::run_invariant_suite(resolve(flags)));
    if (*eq) return run_checks(h::run_oracle_equivalence(resolve(flags)));
  } catch (const nkpc::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
