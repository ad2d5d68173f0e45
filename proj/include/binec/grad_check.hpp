#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "binec/tensor.hpp"

namespace binec {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Loss evaluated in double precision from double copies of the parameters,
/// in the same order as the `params` span handed to grad_check.
using ReferenceLoss = std::function<double(const std::vector<std::vector<double>>&)>;

/// Compares analytic gradients against central finite differences.
///
/// `forward` builds the float32 graph on a fresh tape and returns the scalar
/// loss; its gradients are the analytic side. `reference` recomputes the same
/// loss in 64-bit and is perturbed by +/-eps per sampled coordinate. Each
/// coordinate contributes |a - n| / max(|a|, |n|, 1e-8). Never throws on a
/// mismatch; callers compare the returned maximum with their tolerance.
GradCheckReport grad_check(const std::function<Tensor()>& forward, std::span<Tensor> params,
                           const ReferenceLoss& reference, double eps = 1e-3,
                           int samples_per_param = 8, std::uint64_t seed = 1);

}  // namespace binec
