#pragma once

#include <functional>
#include <vector>

#include "ceia/gradnet/tensor.hpp"

namespace ceia::gradnet {

struct GradCheckResult {
  // Largest norm-wise relative error ||analytic - numeric|| / max(||analytic||,
  // ||numeric||, 1e-12) over the checked inputs.
  double max_rel_error = 0.0;
  std::size_t evaluations = 0;
};

// Compares reverse-mode gradients of the scalar `loss()` with respect to each
// of `inputs` against central differences with step `h`. `loss` must rebuild
// its graph from the current values of `inputs` on every call. When
// `corrupt` is set the analytic gradient is perturbed first (test fixture).
GradCheckResult check_gradients(const std::function<Tensor()>& loss,
                                std::vector<Tensor> inputs, double h = 1e-5,
                                bool corrupt = false);

// Deterministic weights w (seeded) so that sum(w * t) turns any tensor into a
// scalar with a generic gradient.
Tensor random_projection(const Tensor& t, unsigned seed);

}  // namespace ceia::gradnet
