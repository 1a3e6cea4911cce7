#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sgdlab {

struct CheckResult {
  std::string name;
  double value = 0.0;      // worst observed error (or margin) over all trials
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int identity_points = 5;
  int fd_points = 5;
  int kl_transforms = 5;
};

// Identity and oracle checks on small problems: the H_f = M - H_p identity,
// closed forms for least squares and logistic regression, finite-difference
// gradients and Hessian-vector products, and KL invariance under
// layer rescaling.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts = {});

}  // namespace sgdlab
