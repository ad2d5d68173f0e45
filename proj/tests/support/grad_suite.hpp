#pragma once

#include <string>
#include <vector>

#include "binec/grad_check.hpp"
#include "binec/models.hpp"

namespace binec::testing {

struct NamedReport {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks of every differentiable tensor operation.
std::vector<NamedReport> op_gradient_suite();

/// Composed training graph of `variant` (2 iterations, identity binariser)
/// under a smooth random-weighted loss, against the double reference net.
NamedReport model_gradient_check(Variant variant, int iterations, std::uint64_t seed);

}  // namespace binec::testing
