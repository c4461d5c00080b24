#pragma once

#include <string>
#include <vector>

namespace selfe::verify {

struct PropertyResult {
  std::string name;
  double measured = 0;   // worst-case error observed
  double threshold = 0;  // pass iff measured <= threshold
  bool pass = false;
};

/// Self-contained property suite: schedule identities, G-parametrization,
/// lambda/renorm edge cases, Tweedie round-trip, the Result 1/2 identities,
/// finite-difference gradient checks, stop-gradient structure, DDIM/Euler
/// equivalence, guidance contracts, and metric axioms.
std::vector<PropertyResult> run_all(std::uint64_t seed = 20240901);

/// Formatted one-line-per-property report; returns the failure count.
int print_report(const std::vector<PropertyResult>& results, std::string* out);

}  // namespace selfe::verify
