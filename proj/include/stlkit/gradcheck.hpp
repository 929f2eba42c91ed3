#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlkit/model.hpp"

namespace stlkit {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Fraction of each tensor's elements compared (seeded choice without
  // replacement); 1.0 checks everything.
  double subsample_fraction = 1.0;
  std::uint64_t seed = 0;
  double alpha = 0.5;
  int batch = 2;
  // Harness init: 1/sqrt(fan_in) keeps activations O(1) so finite
  // differences are well conditioned. Training init is unaffected.
  WeightInit init{0.01, true};
};

struct GradCheckParamReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // perturbation flipped a ReLU gate or pool argmax
};

struct GradCheckReport {
  std::vector<GradCheckParamReport> params;
  double max_rel_err = 0.0;
  std::size_t total_checked = 0;
  std::size_t total_excluded = 0;

  bool passes(double threshold) const { return max_rel_err < threshold; }
};

// Central finite differences (L(t+e) - L(t-e)) / 2e against the analytic
// gradient of the weighted loss, in double precision with dropout disabled.
// Elements whose perturbation crosses a ReLU kink or changes a pooling
// argmax are reported as excluded rather than compared.
GradCheckReport gradient_check(const NetworkConfig& config,
                               ModelParams<double>& params,
                               const Tensor4d& input, const Tensor4d& targets,
                               const GradCheckOptions& opts);

// Convenience wrapper: builds harness params, a uniform random input and
// random one-hot targets from the option seed.
GradCheckReport gradient_check(const NetworkConfig& config,
                               const GradCheckOptions& opts);

}  // namespace stlkit
