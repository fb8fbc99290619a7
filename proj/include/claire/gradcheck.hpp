#pragma once

#include <cstdint>
#include <string>

namespace claire {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;   // finite-difference probes evaluated
    std::string worst;         // tensor element where the max occurred
};

/// Compare analytic gradients against central finite differences (step 1e-5,
/// relative error floored at 1e-8 in the denominator).
///
/// Components:
///   "losses"  - every loss family on a small random logits tensor
///   "cmaf"    - fusion bottleneck, input and parameter gradients
///   "network" - miniature two-stage model end to end through a loss
GradCheckResult grad_check(const std::string& component, std::uint64_t seed);

}  // namespace claire
