#include "ceia/encoders/lora.hpp"

#include <cmath>

#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"

namespace ceia::encoders {

namespace g = gradnet;

namespace {
Tensor copy_leaf(const Tensor& t) {
  auto c = t.detach();
  c.set_requires_grad(t.requires_grad());
  return c;
}
}  // namespace

LoraLinear::LoraLinear(Tensor weight, Tensor bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  CEIA_REQUIRE(weight_.rank() == 2, "LoraLinear: weight must be [out, in]");
  CEIA_REQUIRE(bias_.shape() == g::Shape{weight_.dim(0)},
               "LoraLinear: bias must be [out]");
}

LoraLinear LoraLinear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(out * in);
  for (auto& v : w) v = u(rng);
  return LoraLinear(Tensor::from({out, in}, std::move(w), true),
                    Tensor::zeros({out}, true));
}

Tensor LoraLinear::forward(const Tensor& x) const {
  CEIA_REQUIRE(x.rank() >= 1 && x.shape().back() == in_features(),
               "LoraLinear: input " + g::shape_str(x.shape()) + " does not have " +
                   std::to_string(in_features()) + " columns");
  Tensor x2 = x.rank() == 1 ? g::reshape(x, {1, x.size()}) : x;
  Tensor h = g::add(g::matmul(x2, weight_, /*trans_b=*/true), bias_);
  if (adapted() && enabled_) {
    Tensor down = g::matmul(x2, lora_a_, true);
    Tensor up = g::matmul(down, lora_b_, true);
    h = g::add(h, g::scale(up, alpha_ / rank()));
  }
  return x.rank() == 1 ? g::reshape(h, {out_features()}) : h;
}

void LoraLinear::attach_adapter(int rank, double alpha, Rng& rng) {
  CEIA_REQUIRE(rank > 0, "LoRA rank must be positive");
  CEIA_REQUIRE(alpha > 0, "LoRA alpha must be positive");
  std::normal_distribution<double> n(0.0, 0.02);
  std::vector<double> a(static_cast<std::size_t>(rank) * in_features());
  for (auto& v : a) v = n(rng);
  set_adapter(Tensor::from({static_cast<std::size_t>(rank), in_features()}, std::move(a), true),
              Tensor::zeros({out_features(), static_cast<std::size_t>(rank)}, true), alpha);
}

void LoraLinear::set_adapter(Tensor a, Tensor b, double alpha) {
  CEIA_REQUIRE(a.rank() == 2 && a.dim(1) == in_features(), "LoRA A must be [r, in]");
  CEIA_REQUIRE(b.rank() == 2 && b.dim(0) == out_features() && b.dim(1) == a.dim(0),
               "LoRA B must be [out, r]");
  CEIA_REQUIRE(alpha > 0, "LoRA alpha must be positive");
  set_base_trainable(false);
  lora_a_ = std::move(a);
  lora_b_ = std::move(b);
  lora_a_.set_requires_grad(true);
  lora_b_.set_requires_grad(true);
  alpha_ = alpha;
}

LoraLinear LoraLinear::merged() const {
  if (!adapted()) return clone();
  const std::size_t out = out_features(), in = in_features();
  const auto r = static_cast<std::size_t>(rank());
  const double s = alpha_ / rank();
  std::vector<double> w(weight_.values().begin(), weight_.values().end());
  auto a = lora_a_.values();
  auto b = lora_b_.values();
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t k = 0; k < r; ++k) {
      const double bik = s * b[i * r + k];
      if (bik == 0.0) continue;
      for (std::size_t j = 0; j < in; ++j) w[i * in + j] += bik * a[k * in + j];
    }
  return LoraLinear(Tensor::from({out, in}, std::move(w), false), copy_leaf(bias_));
}

LoraLinear LoraLinear::clone() const {
  LoraLinear c(copy_leaf(weight_), copy_leaf(bias_));
  if (adapted()) {
    c.lora_a_ = copy_leaf(lora_a_);
    c.lora_b_ = copy_leaf(lora_b_);
    c.alpha_ = alpha_;
  }
  c.enabled_ = enabled_;
  return c;
}

void LoraLinear::set_base_trainable(bool trainable) {
  weight_.set_requires_grad(trainable);
  bias_.set_requires_grad(trainable);
}

void LoraLinear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
  if (adapted()) {
    out.push_back({prefix + ".lora_A", lora_a_});
    out.push_back({prefix + ".lora_B", lora_b_});
  }
}

}  // namespace ceia::encoders
