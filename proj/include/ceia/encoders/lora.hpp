#pragma once

#include <random>

#include "ceia/gradnet/optim.hpp"
#include "ceia/gradnet/tensor.hpp"

namespace ceia::encoders {

using gradnet::NamedTensor;
using gradnet::Tensor;
using Rng = std::mt19937_64;

// Linear map h = W0 x + b, optionally adapted by a low-rank update
// (alpha / r) * B A x. Weight layout follows the math: W0 is [out, in].
class LoraLinear {
 public:
  LoraLinear() = default;
  LoraLinear(Tensor weight, Tensor bias);

  // U(-1/sqrt(in), 1/sqrt(in)) weights, zero bias, trainable.
  static LoraLinear init(std::size_t in, std::size_t out, Rng& rng);

  // x: [..., in] -> [..., out]
  Tensor forward(const Tensor& x) const;

  // Freezes W0 and bias, then adds trainable A ~ N(0, 0.02^2) and B = 0.
  void attach_adapter(int rank, double alpha, Rng& rng);
  void set_adapter(Tensor a, Tensor b, double alpha);
  bool adapted() const { return lora_a_.defined(); }
  void set_enabled(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }

  // Plain layer with W0 + (alpha / r) B A folded in; no adapter remains.
  LoraLinear merged() const;

  // Deep copy with fresh leaves (same requires_grad flags).
  LoraLinear clone() const;

  void set_base_trainable(bool trainable);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  int rank() const { return adapted() ? static_cast<int>(lora_a_.dim(0)) : 0; }
  double alpha() const { return alpha_; }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const Tensor& lora_a() const { return lora_a_; }
  const Tensor& lora_b() const { return lora_b_; }

 private:
  Tensor weight_;
  Tensor bias_;
  Tensor lora_a_;  // [r, in]
  Tensor lora_b_;  // [out, r]
  double alpha_ = 0.0;
  bool enabled_ = true;
};

}  // namespace ceia::encoders
