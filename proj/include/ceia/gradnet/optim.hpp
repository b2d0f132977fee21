#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ceia/gradnet/tensor.hpp"

namespace ceia::gradnet {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  double peak_lr = 5e-4;
};

// Per-parameter moment buffers, keyed by parameter name.
struct AdamWState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

// One decoupled-weight-decay Adam update over every parameter with
// requires_grad set. Parameters without a gradient buffer are treated as
// having a zero gradient. Throws NumericalError (and changes nothing) if any
// gradient is non-finite.
void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, double lr);

struct LrSchedule {
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double peak_lr = 5e-4;
};

// Linear warm-up from 0 to peak, then half-cosine decay to 0 at total_steps.
double cosine_warmup_lr(std::int64_t step, const LrSchedule& schedule);

}  // namespace ceia::gradnet
