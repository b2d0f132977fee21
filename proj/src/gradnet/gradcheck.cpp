#include "ceia/gradnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"

namespace ceia::gradnet {

GradCheckResult check_gradients(const std::function<Tensor()>& loss,
                                std::vector<Tensor> inputs, double h,
                                bool corrupt) {
  GradCheckResult result;
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor root = loss();
  CEIA_REQUIRE(root.size() == 1, "check_gradients: loss must be scalar");
  backward(root);

  for (auto& in : inputs) {
    std::vector<double> analytic(in.size(), 0.0);
    if (in.has_grad())
      std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    if (corrupt && !analytic.empty()) analytic[0] += 1.0 + std::abs(analytic[0]);

    std::vector<double> numeric(in.size());
    auto vals = in.mutable_values();
    NoGradGuard guard;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = loss().item();
      vals[i] = orig - h;
      const double fm = loss().item();
      vals[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * h);
      result.evaluations += 2;
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    result.max_rel_error =
        std::max(result.max_rel_error, std::sqrt(diff) / denom);
  }
  for (auto& in : inputs) in.zero_grad();
  return result;
}

Tensor random_projection(const Tensor& t, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(t.size());
  for (auto& x : w) x = u(rng);
  Tensor weights = Tensor::from(t.shape(), std::move(w));
  return scale(mean(mul(t, weights)), static_cast<double>(t.size()));
}

}  // namespace ceia::gradnet
