#pragma once

// Oracle and property suites run by `msvm verify`.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msvm/io.hpp"

namespace msvm {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t instances = 0;
  double max_error = 0;  // suite-specific: max |diff|, max relative error, or 0 for exact checks
  double tolerance = 0;
  double seconds = 0;
  std::string detail;                         // failure description
  std::optional<std::uint64_t> failing_seed;  // instance seed of the first failure
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  // "scan" perturbs the recurrent scan output inside the scan/kernel equivalence suite.
  std::string inject_fault;
  bool include_training = true;
};

std::vector<std::string> verify_suite_names();
std::vector<SuiteResult> run_verify(const VerifyOptions& options);
Json verify_report(const std::vector<SuiteResult>& results);

}  // namespace msvm
