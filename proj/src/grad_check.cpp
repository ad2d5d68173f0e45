#include "binec/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace binec {

GradCheckReport grad_check(const std::function<Tensor()>& forward, std::span<Tensor> params,
                           const ReferenceLoss& reference, double eps, int samples_per_param,
                           std::uint64_t seed) {
  for (Tensor& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = forward();
    }
    tape.backward(loss);
  }

  std::vector<std::vector<double>> values;
  values.reserve(params.size());
  for (const Tensor& p : params) values.emplace_back(p.data().begin(), p.data().end());

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::size_t n = values[pi].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (samples_per_param > 0 && n > static_cast<std::size_t>(samples_per_param)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(samples_per_param);
    }
    const auto grad = std::as_const(params[pi]).grad();
    for (std::size_t idx : coords) {
      const double saved = values[pi][idx];
      values[pi][idx] = saved + eps;
      const double up = reference(values);
      values[pi][idx] = saved - eps;
      const double down = reference(values);
      values[pi][idx] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grad[idx];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = pi;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace binec
