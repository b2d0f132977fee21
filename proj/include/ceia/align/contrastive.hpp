#pragma once

#include "ceia/gradnet/tensor.hpp"

namespace ceia::align {

using gradnet::Tensor;

// tau = exp(log_tau), kept inside [kMinTau, kMaxTau].
class Temperature {
 public:
  static constexpr double kMinTau = 0.01;
  static constexpr double kMaxTau = 1.0;
  static constexpr double kInitTau = 0.07;

  explicit Temperature(double tau = kInitTau, bool trainable = true);

  double tau() const;
  const Tensor& log_tau() const { return log_tau_; }
  Tensor& log_tau() { return log_tau_; }
  bool trainable() const { return log_tau_.requires_grad(); }
  void set_trainable(bool on) { log_tau_.set_requires_grad(on); }
  void clamp();

 private:
  Tensor log_tau_;  // [1]
};

// logits[i][j] = e1_i . e2_j / tau, [N, N].
Tensor similarity_logits(const Tensor& e1, const Tensor& e2, const Temperature& temp);

// Mean over rows of -log softmax(logits)_ii. Rows must be unit norm (1e-4).
Tensor info_nce(const Tensor& e1, const Tensor& e2, const Temperature& temp);

// L(a, b) + L(b, a).
Tensor symmetric_loss(const Tensor& a, const Tensor& b, const Temperature& temp);

}  // namespace ceia::align
