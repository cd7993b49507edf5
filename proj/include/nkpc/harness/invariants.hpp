#pragma once

#include <string>
#include <vector>

#include "nkpc/harness/config.hpp"
#include "nkpc/lds.hpp"
#include "nkpc/rng.hpp"

namespace nkpc::harness {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// Stable model with square, well-conditioned H and B and SPD noise and cost matrices.
LdsModel<double> random_full_rank_model(Eigen::Index dim, RngStream& rng);

/// Measurement-space recursions against the classical ones on random models.
std::vector<CheckResult> run_oracle_equivalence(const ExperimentConfig& config);

/// Monte-Carlo covariance identities, learning-rule fixed points, gradient and
/// Neumann checks, noise statistics and the Riccati fixed point.
std::vector<CheckResult> run_invariant_suite(const ExperimentConfig& config);

/// "PASS name: detail" / "FAIL name: detail" lines.
std::string format_checks(const std::vector<CheckResult>& checks);

}  // namespace nkpc::harness
