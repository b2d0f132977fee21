#pragma once

#include <string>
#include <vector>

namespace ceia::pipeline {

struct OpCheck {
  std::string op;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

// Finite-difference checks of every differentiable primitive (tolerance 1e-4)
// and of a 2-block LoRA encoder (1e-3). `corrupt_op` perturbs that op's
// analytic gradient.
std::vector<OpCheck> run_gradient_suite(const std::string& corrupt_op = "", int trials = 5);

std::vector<std::string> gradient_suite_ops();

}  // namespace ceia::pipeline
