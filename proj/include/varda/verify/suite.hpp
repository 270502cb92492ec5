#pragma once

// Oracle checks shared by `varda verify` and the acceptance binary. Each
// check returns what it measured next to the tolerance it was held to.

#include <cstdint>
#include <string>
#include <vector>

namespace varda::verify {

struct Check {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteOptions {
  std::uint64_t seed = 2024;
  int kernel_instances = 500;  // alternating n = 1 and n = 2
  int mixture_instances = 60;  // n in {1, 2}, M in {1..4}, both distances
  int kl_gaussians = 50;
  int kl_samples = 1000000;
  int zero_iff_instances = 200;
  int metric_masks = 200;
  // Flip the sign of the kernel exponent inside the checks (mutation test).
  bool mutate_kernel = false;
};

Check kernel_oracle(const SuiteOptions& o);
Check mixture_oracle(const SuiteOptions& o);
Check spot_values(const SuiteOptions& o);
Check kl_oracle(const SuiteOptions& o);
/// One check per loss term: kl, D, D~, source ELBO, target ELBO, total.
std::vector<Check> gradient_checks(const SuiteOptions& o);
Check zero_iff(const SuiteOptions& o);
Check stability(const SuiteOptions& o);
Check metric_oracles(const SuiteOptions& o);
/// Two short 64-bit training runs from the same seed; loss CSVs must match
/// byte for byte.
Check training_determinism(long iterations, std::uint64_t seed);

/// "PASS name measured=... tol=... (detail) [1.2 s]"
std::string format_check(const Check& c);
/// One JSON object per line.
std::string json_line(const Check& c);

}  // namespace varda::verify
