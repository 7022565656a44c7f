#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace admrl::gradcheck {

struct CheckResult {
  std::string id;
  std::string name;
  bool passed = false;
  double value = 0.0;  // the measured error statistic
  double threshold = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteConfig {
  std::uint64_t seed = 0;
  long pg_trajectories = 100000;
  int pg_horizon = 100;
  long hessian_trajectories = 1000000;
  int hessian_horizon = 40;
  long hessian_chunk = 50000;
  double beta = 0.1;  // entropy weight of the regularized inner problem
  double logit_scale = 1.0;
};

CheckResult check_policy_gradient(const SuiteConfig& cfg);
CheckResult check_reinforce_hessian(const SuiteConfig& cfg);
CheckResult check_hvp_assembly(const SuiteConfig& cfg);
CheckResult check_mixed_derivative(const SuiteConfig& cfg);
CheckResult check_implicit_jacobian_tabular(const SuiteConfig& cfg);
CheckResult check_implicit_jacobian_quadratic(const SuiteConfig& cfg);
CheckResult check_cg_spd(const SuiteConfig& cfg);
CheckResult check_cg_indefinite(const SuiteConfig& cfg);

std::vector<CheckResult> run_suite(const SuiteConfig& cfg);
std::string format_table(const std::vector<CheckResult>& results);

}  // namespace admrl::gradcheck
