#include "ceia/gradnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "ceia/error.hpp"

namespace ceia::gradnet {

void adamw_step(std::vector<NamedTensor>& params, AdamWState& state,
                double lr) {
  for (const auto& p : params) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    CEIA_REQUIRE(p.tensor.grad().size() == p.tensor.size(),
                 "adamw_step: gradient shape mismatch for " + p.name);
    for (double g : p.tensor.grad())
      if (!std::isfinite(g))
        throw NumericalError("adamw_step: non-finite gradient in " + p.name +
                             " at step " + std::to_string(state.step));
  }

  const auto& cfg = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (auto& p : params) {
    Tensor& t = p.tensor;
    if (!t.requires_grad()) continue;
    auto& m = state.first_moment[p.name];
    auto& v = state.second_moment[p.name];
    if (m.empty()) {
      m.assign(t.size(), 0.0);
      v.assign(t.size(), 0.0);
    }
    CEIA_REQUIRE(m.size() == t.size(),
                 "adamw_step: moment shape mismatch for " + p.name);
    auto w = t.mutable_values();
    auto g = t.grad();
    const bool has_grad = t.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * cfg.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double cosine_warmup_lr(std::int64_t step, const LrSchedule& s) {
  CEIA_REQUIRE(s.warmup_steps >= 0 && s.warmup_steps < s.total_steps,
               "lr schedule: need 0 <= warmup_steps < total_steps");
  CEIA_REQUIRE(step >= 0 && step <= s.total_steps,
               "lr schedule: step " + std::to_string(step) +
                   " outside [0, total_steps]");
  if (step < s.warmup_steps)
    return s.peak_lr * static_cast<double>(step) /
           static_cast<double>(s.warmup_steps);
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace ceia::gradnet
