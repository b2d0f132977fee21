#include "ceia/align/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"

namespace ceia::align {

namespace g = gradnet;

Temperature::Temperature(double tau, bool trainable) {
  CEIA_REQUIRE(tau >= kMinTau && tau <= kMaxTau,
               "temperature " + std::to_string(tau) + " outside [0.01, 1]");
  log_tau_ = Tensor::from({1}, {std::log(tau)}, trainable);
}

double Temperature::tau() const { return std::exp(log_tau_.item()); }

void Temperature::clamp() {
  auto v = log_tau_.mutable_values();
  v[0] = std::clamp(v[0], std::log(kMinTau), std::log(kMaxTau));
}

namespace {

void check_batch(const Tensor& e1, const Tensor& e2) {
  CEIA_REQUIRE(e1.rank() == 2 && e2.rank() == 2, "info_nce: embeddings must be [N, D]");
  CEIA_REQUIRE(e1.dim(0) > 0, "info_nce: empty batch");
  CEIA_REQUIRE(e1.shape() == e2.shape(), "info_nce: batch shapes differ " +
                                             g::shape_str(e1.shape()) + " vs " +
                                             g::shape_str(e2.shape()));
  const std::size_t d = e1.dim(1);
  for (const Tensor* t : {&e1, &e2})
    for (std::size_t i = 0; i < t->dim(0); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += t->values()[i * d + j] * t->values()[i * d + j];
      if (!std::isfinite(s))
        throw NumericalError("info_nce: non-finite embedding in row " + std::to_string(i));
      CEIA_REQUIRE(std::abs(std::sqrt(s) - 1.0) <= 1e-4,
                   "info_nce: row " + std::to_string(i) + " has norm " +
                       std::to_string(std::sqrt(s)) + ", expected unit norm");
    }
}

}  // namespace

Tensor similarity_logits(const Tensor& e1, const Tensor& e2, const Temperature& temp) {
  return g::mul_scalar(g::matmul(e1, e2, true), g::exp(g::scale(temp.log_tau(), -1.0)));
}

Tensor info_nce(const Tensor& e1, const Tensor& e2, const Temperature& temp) {
  check_batch(e1, e2);
  std::vector<int> diag(e1.dim(0));
  std::iota(diag.begin(), diag.end(), 0);
  return g::cross_entropy(similarity_logits(e1, e2, temp), diag);
}

Tensor symmetric_loss(const Tensor& a, const Tensor& b, const Temperature& temp) {
  return g::add(info_nce(a, b, temp), info_nce(b, a, temp));
}

}  // namespace ceia::align
