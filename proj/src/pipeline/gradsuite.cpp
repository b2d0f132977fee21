#include "ceia/pipeline/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "ceia/align/contrastive.hpp"
#include "ceia/encoders/transformer.hpp"
#include "ceia/error.hpp"
#include "ceia/gradnet/gradcheck.hpp"
#include "ceia/gradnet/ops.hpp"

namespace ceia::pipeline {

namespace {

using namespace gradnet;

Tensor randn(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor rand_positive(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  return l2_normalize(randn({n, d}, rng)).detach();
}

// One trial: builds inputs from `rng`, returns the FD result.
using Trial = std::function<GradCheckResult(std::mt19937_64&, unsigned, bool)>;

struct Case {
  std::string op;
  double tol;
  Trial run;
};

const std::vector<Case>& cases() {
  static const std::vector<Case> all = [] {
    std::vector<Case> c;
    constexpr double p = 1e-4;
    c.push_back({"matmul", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 3, 4}, rng), b = randn({4, 5}, rng), bt = randn({5, 4}, rng);
                   return check_gradients(
                       [&] {
                         return add(random_projection(matmul(a, b), t),
                                    random_projection(matmul(a, bt, true), t + 1));
                       },
                       {a, b, bt}, 1e-5, bad);
                 }});
    c.push_back({"bmm", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 3, 4}, rng), b = randn({2, 4, 3}, rng), d = randn({2, 5, 4}, rng);
                   return check_gradients(
                       [&] {
                         return add(random_projection(bmm(a, b), t),
                                    random_projection(bmm(a, d, true), t + 1));
                       },
                       {a, b, d}, 1e-5, bad);
                 }});
    c.push_back({"add", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({3, 2, 4}, rng), b = randn({2, 4}, rng);
                   return check_gradients([&] { return random_projection(add(a, b), t); }, {a, b},
                                          1e-5, bad);
                 }});
    c.push_back({"mul", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({3, 4}, rng), b = randn({3, 4}, rng);
                   return check_gradients([&] { return random_projection(mul(a, b), t); }, {a, b},
                                          1e-5, bad);
                 }});
    c.push_back({"scale", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({3, 4}, rng);
                   return check_gradients([&] { return random_projection(scale(a, -1.7), t); }, {a},
                                          1e-5, bad);
                 }});
    c.push_back({"mul_scalar", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({3, 4}, rng), s = randn({1}, rng);
                   return check_gradients([&] { return random_projection(mul_scalar(a, s), t); },
                                          {a, s}, 1e-5, bad);
                 }});
    c.push_back({"exp", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({3, 4}, rng);
                   return check_gradients([&] { return random_projection(exp(a), t); }, {a}, 1e-5,
                                          bad);
                 }});
    c.push_back({"log", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = rand_positive({3, 4}, rng);
                   return check_gradients([&] { return random_projection(log(a), t); }, {a}, 1e-5,
                                          bad);
                 }});
    c.push_back({"gelu", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({4, 6}, rng, 2.0);
                   return check_gradients([&] { return random_projection(gelu(a), t); }, {a}, 1e-5,
                                          bad);
                 }});
    c.push_back({"l2_normalize", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({4, 5}, rng);
                   return check_gradients([&] { return random_projection(l2_normalize(a), t); },
                                          {a}, 1e-5, bad);
                 }});
    c.push_back({"softmax", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({4, 5}, rng, 2.0);
                   return check_gradients([&] { return random_projection(softmax(a), t); }, {a},
                                          1e-5, bad);
                 }});
    c.push_back({"log_softmax", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({4, 5}, rng, 2.0);
                   return check_gradients([&] { return random_projection(log_softmax(a), t); }, {a},
                                          1e-5, bad);
                 }});
    c.push_back({"layer_norm", p, [](auto& rng, unsigned t, bool bad) {
                   auto x = randn({3, 6}, rng, 2.0), g = randn({6}, rng), b = randn({6}, rng);
                   return check_gradients(
                       [&] { return random_projection(layer_norm(x, g, b), t); }, {x, g, b}, 1e-5,
                       bad);
                 }});
    c.push_back({"mean", p, [](auto& rng, unsigned, bool bad) {
                   auto a = randn({2, 3, 4}, rng);
                   return check_gradients([&] { return mean(mul(a, a)); }, {a}, 1e-5, bad);
                 }});
    c.push_back({"mean_tokens", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 3, 4}, rng);
                   return check_gradients([&] { return random_projection(mean_tokens(a), t); },
                                          {a}, 1e-5, bad);
                 }});
    c.push_back({"transpose", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({3, 4}, rng);
                   return check_gradients([&] { return random_projection(transpose(a), t); }, {a},
                                          1e-5, bad);
                 }});
    c.push_back({"permute", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 3, 4, 2}, rng);
                   return check_gradients(
                       [&] {
                         return add(random_projection(permute(a, {0, 2, 1, 3}), t),
                                    random_projection(permute(a, {3, 1, 0, 2}), t + 1));
                       },
                       {a}, 1e-5, bad);
                 }});
    c.push_back({"reshape", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 3, 4}, rng);
                   return check_gradients([&] { return random_projection(reshape(a, {4, 6}), t); },
                                          {a}, 1e-5, bad);
                 }});
    c.push_back({"slice", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 5, 4}, rng);
                   return check_gradients([&] { return random_projection(slice(a, 1, 1, 4), t); },
                                          {a}, 1e-5, bad);
                 }});
    c.push_back({"concat", p, [](auto& rng, unsigned t, bool bad) {
                   auto a = randn({2, 3, 4}, rng), b = randn({2, 2, 4}, rng);
                   return check_gradients([&] { return random_projection(concat({a, b}, 1), t); },
                                          {a, b}, 1e-5, bad);
                 }});
    c.push_back({"embedding_lookup", p, [](auto& rng, unsigned t, bool bad) {
                   auto table = randn({5, 3}, rng);
                   std::vector<int> ids{4, 0, 4, 2};
                   return check_gradients(
                       [&] { return random_projection(embedding_lookup(table, ids, {2, 2}), t); },
                       {table}, 1e-5, bad);
                 }});
    c.push_back({"cross_entropy", p, [](auto& rng, unsigned, bool bad) {
                   auto logits = randn({6, 4}, rng, 2.0);
                   std::vector<int> labels{0, 3, 1, 1, 2, 0};
                   return check_gradients([&] { return cross_entropy(logits, labels); }, {logits},
                                          1e-5, bad);
                 }});
    c.push_back({"info_nce", p, [](auto& rng, unsigned, bool bad) {
                   auto a = unit_rows(5, 4, rng), b = unit_rows(5, 4, rng);
                   align::Temperature temp(0.3);
                   return check_gradients(
                       [&] { return align::symmetric_loss(l2_normalize(a), l2_normalize(b), temp); },
                       {a, b, temp.log_tau()}, 1e-5, bad);
                 }});
    c.push_back({"encoder_2block", 1e-3, [](auto& rng, unsigned t, bool bad) {
                   encoders::VitConfig vc;
                   vc.image_size = 8;
                   vc.patch_size = 4;
                   vc.embed_dim = 8;
                   vc.depth = 2;
                   vc.heads = 2;
                   vc.mlp_ratio = 2;
                   vc.output_dim = 6;
                   encoders::VisionTransformer vit(vc, rng);
                   vit.set_trainable(false);
                   vit.attach_lora(encoders::LoraConfig{2, 4.0, {"q", "v"}}, rng);
                   std::vector<Tensor> inputs;
                   for (auto& blk : vit.blocks())
                     for (auto* l : {&blk.q, &blk.v}) {
                       l->set_adapter(l->lora_a(), randn(l->lora_b().shape(), rng, 0.3), 4.0);
                       inputs.push_back(l->lora_a());
                       inputs.push_back(l->lora_b());
                     }
                   auto x = randn({2, 8, 8, 3}, rng);
                   inputs.push_back(x);
                   return check_gradients([&] { return random_projection(vit.encode(x), t); },
                                          inputs, 1e-5, bad);
                 }});
    return c;
  }();
  return all;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> out;
  for (const auto& c : cases()) out.push_back(c.op);
  return out;
}

std::vector<OpCheck> run_gradient_suite(const std::string& corrupt_op, int trials) {
  CEIA_REQUIRE(trials >= 1, "gradcheck: trials must be >= 1");
  const auto ops = gradient_suite_ops();
  CEIA_REQUIRE(corrupt_op.empty() || std::find(ops.begin(), ops.end(), corrupt_op) != ops.end(),
               "gradcheck: unknown op '" + corrupt_op + "'");
  std::vector<OpCheck> out;
  for (const auto& c : cases()) {
    OpCheck r{c.op, 0.0, c.tol};
    for (int i = 0; i < trials; ++i) {
      std::mt19937_64 rng(1000 + static_cast<unsigned>(i));
      r.max_rel_error = std::max(
          r.max_rel_error, c.run(rng, static_cast<unsigned>(i), c.op == corrupt_op).max_rel_error);
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace ceia::pipeline
