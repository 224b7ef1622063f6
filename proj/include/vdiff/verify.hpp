#pragma once

#include <string>
#include <vector>

namespace vdiff {

// One verification check: a measured quantity against its tolerance.
// tolerance 0 means the check demands bitwise equality.
struct VerifyCheck {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;

  bool all_pass() const;
  std::string render() const;  // one "[PASS|FAIL] name: measured .. tol .." line per check
};

const std::vector<std::string>& verify_suite_names();

// suite is one of gradients | moments | zeroinit | shifted-init | gaussian-ode
// | schedule | all. gaussian_ode_clips scales the Monte-Carlo size of the
// gaussian-ode suite (default matches the acceptance budget).
VerifyReport run_verify_suite(const std::string& suite, std::uint64_t seed,
                              long gaussian_ode_clips = 10000);

}  // namespace vdiff
