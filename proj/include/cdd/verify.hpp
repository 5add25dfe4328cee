#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cdd {

struct CheckResult {
  std::string suite;
  std::string name;
  bool pass = false;
  double measured = 0.0;   // worst error observed
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

// Exact identities on `cases` seeded random instances: VP identity, signal /
// noise reconstruction, signal-form vs velocity-form DDIM, noise-consistency
// transport and the zero-gate adapter equivalence.
std::vector<CheckResult> algebraic_suite(std::size_t cases = 1000, std::uint64_t seed = 0);

// Reverse-mode gradients of every primitive, the velocity network and the
// distillation loss against central differences.
std::vector<CheckResult> gradient_suite(std::uint64_t seed = 0, double step = 1e-5, double tol = 1e-4);

// Gaussian closed forms: DDIM pushforward scale, score equivalence, marginal
// moments by Monte Carlo.
std::vector<CheckResult> oracle_suite(std::uint64_t seed = 0, std::size_t draws = 100000);

std::vector<CheckResult> run_all_checks(std::uint64_t seed = 0);

bool all_passed(const std::vector<CheckResult>& results);
std::string format_checks(const std::vector<CheckResult>& results);

}  // namespace cdd
