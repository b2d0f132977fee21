#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ceia/align/contrastive.hpp"
#include "ceia/align/models.hpp"
#include "ceia/align/train.hpp"
#include "ceia/error.hpp"
#include "ceia/gradnet/gradcheck.hpp"
#include "ceia/gradnet/ops.hpp"

using namespace ceia::align;
namespace g = ceia::gradnet;
namespace enc = ceia::encoders;

namespace {

std::vector<double> unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (v[i * d + j] = nd(rng)) * v[i * d + j];
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] /= std::sqrt(s);
  }
  return v;
}

// Direct evaluation of the per-sample formula, averaged over i.
double brute_info_nce(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                      std::size_t d, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += a[i * d + k] * b[j * d + k];
      s[j] = dot / tau;
    }
    long double denom = 0;
    for (double x : s) denom += std::exp(static_cast<long double>(x));
    total += -std::log(static_cast<double>(std::exp(static_cast<long double>(s[i])) / denom));
  }
  return total / static_cast<double>(n);
}

enc::VitConfig tiny_vit() {
  enc::VitConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.output_dim = 8;
  return c;
}

std::vector<std::vector<double>> random_inputs(std::size_t n, std::size_t per, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<std::vector<double>> out(n, std::vector<double>(per));
  for (auto& x : out)
    for (auto& v : x) v = u(rng);
  return out;
}

std::vector<double> snapshot(const std::vector<g::NamedTensor>& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("info_nce closed form and trivial batch") {
  Temperature t1(1.0);
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(info_nce(eye, eye, t1).item() == doctest::Approx(std::log(1 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(info_nce(eye, eye, t1).item() == doctest::Approx(0.31326).epsilon(1e-5));

  std::mt19937_64 rng(1);
  auto a = Tensor::from({1, 5}, unit_rows(1, 5, rng));
  auto b = Tensor::from({1, 5}, unit_rows(1, 5, rng));
  Temperature t;
  CHECK(info_nce(a, b, t).item() == 0.0);
  CHECK(symmetric_loss(a, b, t).item() == 0.0);
}

TEST_CASE("info_nce matches brute force") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> tau_dist(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 8, d = 4 + trial % 5;
    auto av = unit_rows(n, d, rng), bv = unit_rows(n, d, rng);
    Temperature t(tau_dist(rng));
    auto a = Tensor::from({n, d}, av), b = Tensor::from({n, d}, bv);
    const double ab = brute_info_nce(av, bv, n, d, t.tau());
    const double ba = brute_info_nce(bv, av, n, d, t.tau());
    CHECK(std::abs(info_nce(a, b, t).item() - ab) < 1e-10);
    CHECK(std::abs(symmetric_loss(a, b, t).item() - (ab + ba)) < 1e-10);
    CHECK(info_nce(a, b, t).item() >= 0.0);
    CHECK(std::abs(symmetric_loss(a, a, t).item() - 2 * info_nce(a, a, t).item()) < 1e-12);
  }
}

TEST_CASE("info_nce is invariant to a shared row permutation") {
  std::mt19937_64 rng(3);
  const std::size_t n = 6, d = 5;
  auto av = unit_rows(n, d, rng), bv = unit_rows(n, d, rng);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> ap, bp;
  for (auto i : perm) {
    ap.insert(ap.end(), av.begin() + i * d, av.begin() + (i + 1) * d);
    bp.insert(bp.end(), bv.begin() + i * d, bv.begin() + (i + 1) * d);
  }
  Temperature t;
  CHECK(info_nce(Tensor::from({n, d}, av), Tensor::from({n, d}, bv), t).item() ==
        doctest::Approx(info_nce(Tensor::from({n, d}, ap), Tensor::from({n, d}, bp), t).item())
            .epsilon(1e-12));
}

TEST_CASE("info_nce errors") {
  Temperature t;
  CHECK_THROWS_AS(info_nce(Tensor::from({2, 2}, {2, 0, 0, 1}), Tensor::from({2, 2}, {1, 0, 0, 1}), t),
                  ceia::ValidationError);
  CHECK_THROWS_AS(info_nce(Tensor::zeros({0, 3}), Tensor::zeros({0, 3}), t), ceia::ValidationError);
  CHECK_THROWS_AS(info_nce(Tensor::from({1, 2}, {1, 0}), Tensor::from({2, 2}, {1, 0, 0, 1}), t),
                  ceia::ValidationError);
  CHECK_THROWS_AS(info_nce(Tensor::from({1, 2}, {NAN, 0}), Tensor::from({1, 2}, {1, 0}), t),
                  ceia::NumericalError);
}

TEST_CASE("info_nce gradients match finite differences") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> raw1(5 * 4), raw2(5 * 4);
    for (auto& v : raw1) v = nd(rng);
    for (auto& v : raw2) v = nd(rng);
    auto x1 = Tensor::from({5, 4}, raw1, true), x2 = Tensor::from({5, 4}, raw2, true);
    Temperature t(0.3);
    auto res = g::check_gradients(
        [&] { return symmetric_loss(g::l2_normalize(x1), g::l2_normalize(x2), t); },
        {x1, x2, t.log_tau()});
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("duplicated targets keep the loss above zero") {
  // Rows 0,1 share a target and rows 2,3 share another: each of those rows can
  // put at most half its softmax mass on the diagonal.
  std::mt19937_64 rng(5);
  const std::size_t d = 6;
  auto tv = unit_rows(3, d, rng);
  std::vector<double> targets;
  for (int r : {0, 0, 1, 1, 2})
    targets.insert(targets.end(), tv.begin() + r * d, tv.begin() + (r + 1) * d);
  auto t = Tensor::from({5, d}, targets);
  for (double tau : {0.01, 0.07, 1.0}) {
    Temperature temp(tau);
    const double floor = 4.0 / 5.0 * std::log(2.0);
    CHECK(info_nce(t, t, temp).item() >= floor - 1e-12);
    auto e = Tensor::from({5, d}, unit_rows(5, d, rng));
    CHECK(info_nce(e, t, temp).item() >= floor - 1e-12);
  }
}

TEST_CASE("temperature clamp") {
  Temperature t;
  CHECK(t.tau() == doctest::Approx(0.07));
  t.log_tau().mutable_values()[0] = 5.0;
  t.clamp();
  CHECK(t.tau() == doctest::Approx(1.0));
  t.log_tau().mutable_values()[0] = -50.0;
  t.clamp();
  CHECK(t.tau() == doctest::Approx(0.01));
  CHECK_THROWS_AS(Temperature(2.0), ceia::ValidationError);
}

TEST_CASE("train config defaults") {
  auto c = TrainConfig::defaults(Mode::Ceia);
  CHECK(c.batch_size == 128);
  CHECK(c.peak_lr == 5e-4);
  CHECK(c.weight_decay == 1e-2);
  CHECK_FALSE(c.train_tau);
  auto f = TrainConfig::defaults(Mode::FullFinetune);
  CHECK(f.peak_lr == 1e-7);
  CHECK(f.weight_decay == 1e-1);
  CHECK(parse_mode("ceta") == Mode::Ceta);
  CHECK_THROWS_AS(parse_mode("clip"), ceia::ValidationError);
  CHECK(to_json(StepLog{3, 0.5, 1.25, 0.07}) == "{\"step\":3,\"lr\":0.5,\"loss\":1.25,\"tau\":0.070000000000000007}");
}

TEST_CASE("batch sampler draws without replacement per epoch") {
  BatchSampler s(10, 3, 7);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 3; ++i)
    for (auto v : s.next()) seen.insert(v);
  CHECK(seen.size() == 9);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 9);
  CHECK(s.epoch() == 1);
  BatchSampler a(50, 8, 1), b(50, 8, 1);
  for (int i = 0; i < 20; ++i) CHECK(a.next() == b.next());
  BatchSampler small(3, 128, 1);
  CHECK(small.next().size() == 3);
}

TEST_CASE("alignment freezes the image encoder and moves only adapters") {
  enc::Rng rng(9);
  enc::VisionTransformer image(tiny_vit(), rng);
  image.set_trainable(false);
  auto event = enc::init_event_encoder_from_image(image, enc::LoraConfig{4, 8.0, {"q", "v"}}, rng);
  auto events = random_inputs(24, 8 * 8 * 3, 1);
  auto images = random_inputs(24, 8 * 8 * 3, 2);

  const auto image_before = snapshot(image.parameters());
  std::vector<g::NamedTensor> base;
  for (const auto& p : event.parameters())
    if (!p.name.ends_with(".lora_A") && !p.name.ends_with(".lora_B")) base.push_back(p);
  const auto base_before = snapshot(base);

  auto cfg = TrainConfig::defaults(Mode::Ceia);
  cfg.batch_size = 8;
  cfg.total_steps = 6;
  cfg.warmup_steps = 1;
  cfg.peak_lr = 1e-2;
  Temperature temp(0.1, false);

  // Step-0 loss equals the frozen image encoder applied to the event inputs.
  std::vector<StepLog> logs;
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& l) { logs.push_back(l); };
  auto targets = embed_inputs(image, images);
  BatchSampler first(24, 8, cfg.seed);
  auto idx = first.next();
  std::vector<std::vector<double>> ev_batch, tg;
  std::vector<double> tv;
  for (auto i : idx) {
    ev_batch.push_back(events[i]);
    auto row = targets.values().subspan(i * 8, 8);
    tv.insert(tv.end(), row.begin(), row.end());
  }
  const double expected0 =
      symmetric_loss(embed_inputs(image, ev_batch), Tensor::from({8, 8}, tv), temp).item();

  auto res = train_ceia(event, image, events, images, temp, cfg, hooks);
  CHECK(res.steps == 6);
  CHECK(logs.size() == 6);
  CHECK(logs[0].loss == expected0);
  CHECK(snapshot(image.parameters()) == image_before);
  CHECK(snapshot(base) == base_before);
  CHECK(temp.tau() == doctest::Approx(0.1));
  double bsum = 0;
  for (const auto& blk : event.blocks())
    for (double v : blk.q.lora_b().values()) bsum += std::abs(v);
  CHECK(bsum > 0);

  // An encoder whose base weights are trainable is refused in ceia mode.
  auto loose = image.clone();
  loose.set_trainable(true);
  loose.attach_lora(enc::LoraConfig{2, 4.0, {"q"}}, rng);
  CHECK_THROWS_AS(train_ceia(loose, image, events, images, temp, cfg), ceia::ValidationError);
  auto plain = image.clone();
  CHECK_THROWS_AS(train_ceia(plain, image, events, images, temp, cfg), ceia::ValidationError);
}

TEST_CASE("full finetune updates base weights") {
  enc::Rng rng(10);
  enc::VisionTransformer image(tiny_vit(), rng);
  image.set_trainable(false);
  auto event = image.clone();
  event.set_trainable(true);
  auto events = random_inputs(16, 8 * 8 * 3, 3);
  auto images = random_inputs(16, 8 * 8 * 3, 4);
  const auto before = snapshot(event.parameters());
  auto cfg = TrainConfig::defaults(Mode::FullFinetune);
  cfg.batch_size = 8;
  cfg.total_steps = 3;
  cfg.warmup_steps = 0;
  Temperature temp;
  train_ceia(event, image, events, images, temp, cfg);
  CHECK(snapshot(event.parameters()) != before);
}

TEST_CASE("training is bit reproducible and checkpoints round trip") {
  auto run = [] {
    enc::Rng rng(11);
    enc::VisionTransformer image(tiny_vit(), rng);
    image.set_trainable(false);
    auto event = enc::init_event_encoder_from_image(image, enc::LoraConfig{}, rng);
    auto events = random_inputs(20, 8 * 8 * 3, 5);
    auto images = random_inputs(20, 8 * 8 * 3, 6);
    auto cfg = TrainConfig::defaults(Mode::Ceia);
    cfg.batch_size = 6;
    cfg.total_steps = 5;
    cfg.warmup_steps = 1;
    cfg.seed = 42;
    cfg.train_tau = true;
    EventModel m{event, Temperature(), Mode::Ceia};
    train_ceia(m.event, image, events, images, m.temp, cfg);
    return to_checkpoint(m, 123);
  };
  auto a = run(), b = run();
  CHECK(a == b);
  auto m = event_from_checkpoint(a);
  CHECK(to_checkpoint(m, 123) == a);
  CHECK(m.mode == Mode::Ceia);
  for (const auto& p : m.event.trainable_parameters())
    CHECK((p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B")));
  CHECK_THROWS_AS(require_vocab(a, 124), ceia::ValidationError);
  CHECK_THROWS_AS(stage0_from_checkpoint(a), ceia::ValidationError);
}

TEST_CASE("stage0 trains both encoders then freezes them") {
  enc::Rng rng(12);
  enc::VisionTransformer image(tiny_vit(), rng);
  enc::TextEncoderConfig tc;
  tc.vocab_size = 6;
  tc.embed_dim = 16;
  tc.heads = 2;
  tc.output_dim = 8;
  enc::TextTransformer text(tc, rng);
  ImageTextPairs data;
  data.images = random_inputs(12, 8 * 8 * 3, 7);
  for (int i = 0; i < 12; ++i) {
    data.labels.push_back(i % 3);
    data.captions.push_back({{0, 1, 2 + i % 3}, {5, 2 + i % 3}});
  }
  auto cfg = TrainConfig::defaults(Mode::Stage0);
  cfg.batch_size = 6;
  cfg.total_steps = 4;
  cfg.warmup_steps = 1;
  Temperature temp;
  const auto img0 = snapshot(image.parameters());
  auto res = train_stage0(image, text, temp, data, cfg);
  CHECK(res.losses.size() == 4);
  CHECK(snapshot(image.parameters()) != img0);
  CHECK(image.trainable_parameters().empty());
  CHECK_FALSE(temp.trainable());
  CHECK(temp.tau() != 0.07);

  Stage0Model m{image, text, temp};
  auto ck = to_checkpoint(m, 9);
  auto back = stage0_from_checkpoint(ck);
  CHECK(to_checkpoint(back, 9) == ck);

  ImageTextPairs one_class = data;
  std::fill(one_class.labels.begin(), one_class.labels.end(), 0);
  CHECK_THROWS_AS(train_stage0(image, text, temp, one_class, cfg), ceia::ValidationError);
}

TEST_CASE("non-finite inputs abort training") {
  enc::Rng rng(13);
  enc::VisionTransformer image(tiny_vit(), rng);
  image.set_trainable(false);
  auto event = enc::init_event_encoder_from_image(image, enc::LoraConfig{}, rng);
  auto events = random_inputs(8, 8 * 8 * 3, 8);
  auto images = random_inputs(8, 8 * 8 * 3, 9);
  for (auto& e : events) e[0] = NAN;
  auto cfg = TrainConfig::defaults(Mode::Ceia);
  cfg.batch_size = 4;
  cfg.total_steps = 2;
  cfg.warmup_steps = 0;
  Temperature temp;
  CHECK_THROWS_AS(train_ceia(event, image, events, images, temp, cfg), ceia::NumericalError);
  std::vector<std::vector<double>> none;
  CHECK_THROWS_AS(train_ceia(event, image, none, none, temp, cfg), ceia::ValidationError);
}
