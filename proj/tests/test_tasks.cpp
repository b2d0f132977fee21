#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ceia/align/train.hpp"
#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"
#include "ceia/tasks/tasks.hpp"

using namespace ceia::tasks;
namespace g = ceia::gradnet;
namespace enc = ceia::encoders;
namespace ed = ceia::eventdata;

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

// Exhaustive: sort classes by (score desc, index asc) and look for the label.
double oracle_topk(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                   int k) {
  int hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<int> idx(rows[i].size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return rows[i][a] != rows[i][b] ? rows[i][a] > rows[i][b] : a < b;
    });
    hits += std::find(idx.begin(), idx.begin() + k, labels[i]) != idx.begin() + k;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

TextClassifier manual_classifier(std::vector<double> w, std::size_t k, std::size_t d) {
  TextClassifier c;
  c.weights = Tensor::from({k, d}, std::move(w));
  for (std::size_t i = 0; i < k; ++i) c.class_names.push_back("c" + std::to_string(i));
  return c;
}

enc::TextTransformer small_text(std::size_t vocab) {
  enc::TextEncoderConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 16;
  c.heads = 2;
  c.output_dim = 8;
  enc::Rng rng(4);
  return enc::TextTransformer(c, rng);
}

}  // namespace

TEST_CASE("zero-shot closed forms") {
  auto clf = manual_classifier({1, 0, 0, 1}, 2, 2);
  std::vector<double> f{1, 0};
  auto p = zero_shot_classify(f, clf);
  CHECK(p.label == 0);
  CHECK(p.probs[0] == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(p.probs[1] == doctest::Approx(0.2689414214).epsilon(1e-9));
  CHECK(p.probs[0] + p.probs[1] == doctest::Approx(1.0));

  // f equal to row 2 of an orthonormal classifier.
  auto eye = manual_classifier({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, 3);
  std::vector<double> row2{0, 0, 1};
  CHECK(zero_shot_classify(row2, eye).label == 2);

  std::vector<double> bad{1, 0, 0};
  CHECK_THROWS_AS(zero_shot_classify(bad, clf), ceia::ValidationError);
}

TEST_CASE("zero-shot argmax is scale invariant") {
  std::mt19937_64 rng(1);
  const std::size_t k = 6, d = 5;
  auto clf = manual_classifier(unit_rows(k, d, rng), k, d);
  for (int t = 0; t < 20; ++t) {
    auto f = unit_rows(1, d, rng);
    auto p = zero_shot_classify(f, clf);
    for (double c : {0.01, 3.0, 100.0}) {
      std::vector<double> scaled(f);
      for (auto& v : scaled) v *= c;
      CHECK(zero_shot_classify(scaled, clf).label == p.label);
    }
  }
}

TEST_CASE("text classifier rows, duplicates and permutation") {
  std::vector<std::string> templ{"a photo of a [CLASS]"};
  std::vector<std::string> names{"red circle", "blue square", "red square"};
  auto vocab = ed::Vocabulary::build(templ, names);
  auto text = small_text(vocab.size());
  auto clf = build_text_classifier(names, templ[0], vocab, text);
  CHECK_FALSE(clf.degenerate);
  const std::size_t d = clf.weights.dim(1);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += std::pow(clf.weights.values()[i * d + j], 2);
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }
  std::vector<std::string> perm{"red square", "red circle", "blue square"};
  auto clf2 = build_text_classifier(perm, templ[0], vocab, text);
  const int map[3] = {2, 0, 1};
  for (int r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(clf2.weights.values()[r * d + j] == clf.weights.values()[map[r] * d + j]);

  auto dup = build_text_classifier({"red circle", "red circle"}, templ[0], vocab, text);
  CHECK(dup.degenerate);
  CHECK(std::equal(dup.weights.values().begin(), dup.weights.values().begin() + d,
                   dup.weights.values().begin() + d));
  CHECK_THROWS_AS(build_text_classifier({"green circle", "red circle"}, templ[0], vocab, text),
                  ceia::ValidationError);
}

TEST_CASE("topk accuracy vs exhaustive oracle") {
  CHECK(topk_accuracy({{0.1, 0.5, 0.3, 0.05, 0.05}}, std::vector<int>{2}, 1) == 0.0);
  CHECK(topk_accuracy({{0.1, 0.5, 0.3, 0.05, 0.05}}, std::vector<int>{2}, 5) == 1.0);
  // ties go to the lower index
  CHECK(topk_accuracy({{0.5, 0.5}}, std::vector<int>{0}, 1) == 1.0);
  CHECK(topk_accuracy({{0.5, 0.5}}, std::vector<int>{1}, 1) == 0.0);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coarse(0, 4);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 20, k = 10;
    std::vector<std::vector<double>> rows(n, std::vector<double>(k));
    std::vector<int> labels(n);
    for (auto& r : rows)
      for (auto& v : r) v = coarse(rng) / 4.0;  // frequent ties
    for (auto& y : labels) y = coarse(rng) * 2;
    for (int kk = 1; kk <= k; ++kk)
      CHECK(topk_accuracy(rows, labels, kk) == oracle_topk(rows, labels, kk));
    CHECK(topk_accuracy(rows, labels, k) == 1.0);
    CHECK(topk_accuracy(rows, labels, 1) <= topk_accuracy(rows, labels, 5));
  }
  CHECK_THROWS_AS(topk_accuracy({{0.5, 0.5}}, std::vector<int>{2}, 1), ceia::ValidationError);
  CHECK_THROWS_AS(topk_accuracy({{0.5, 0.5}}, std::vector<int>{0}, 3), ceia::ValidationError);
}

TEST_CASE("retrieval ranking") {
  std::mt19937_64 rng(3);
  auto gal = Tensor::from({5, 4}, unit_rows(5, 4, rng));
  // self retrieval
  for (int i = 0; i < 5; ++i) {
    auto r = retrieve(gal.values().subspan(i * 4, 4), gal, i);
    CHECK(r.rank_of_correct == 1);
    CHECK(r.order[0] == i);
  }
  // brute force
  for (int t = 0; t < 100; ++t) {
    auto q = unit_rows(1, 4, rng);
    auto r = retrieve(q, gal);
    std::vector<std::pair<double, int>> s;
    for (int i = 0; i < 5; ++i) {
      double dot = 0;
      for (int j = 0; j < 4; ++j) dot += q[j] * gal.values()[i * 4 + j];
      s.push_back({-dot, i});
    }
    std::sort(s.begin(), s.end());
    for (int i = 0; i < 5; ++i) CHECK(r.order[i] == s[i].second);
  }
  // orthogonal gallery, scaled query
  auto eye = Tensor::from({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  std::vector<double> q{0, 0, 0, 0.5};
  double n = std::sqrt(0.25);
  for (auto& v : q) v /= n;
  CHECK(retrieve(q, eye).order[0] == 3);
  // ties by ascending index
  auto dup = Tensor::from({3, 2}, {0, 1, 1, 0, 1, 0});
  std::vector<double> q2{1, 0};
  CHECK(retrieve(q2, dup).order == std::vector<int>{1, 2, 0});
  CHECK_THROWS_AS(retrieve(q2, Tensor::zeros({0, 2})), ceia::ValidationError);
}

TEST_CASE("recall at k") {
  auto mk = [](std::vector<int> ranks) {
    std::vector<RankedResult> out;
    for (int r : ranks) out.push_back(RankedResult{0, {}, r});
    return out;
  };
  auto r = mk({1, 2, 6});
  CHECK(recall_at_k(r, 1) == doctest::Approx(1.0 / 3));
  CHECK(recall_at_k(r, 5) == doctest::Approx(2.0 / 3));
  CHECK(recall_at_k(r, 10) == 1.0);
  auto ones = mk({1, 1, 1, 1});
  for (int k : {1, 5, 10}) CHECK(recall_at_k(ones, k) == 1.0);
  std::vector<RankedResult> none;
  CHECK_THROWS_AS(recall_at_k(none, 1), ceia::ValidationError);
  CHECK_THROWS_AS(recall_at_k(r, 0), ceia::ValidationError);
}

TEST_CASE("metrics report") {
  MetricsReport m{"zeroshot", "ceia", 0.5, 0.9, {{1, 0.2}, {5, 0.4}, {10, 0.6}}, 100};
  m.check();
  CHECK(m.to_json() ==
        "{\"task\":\"zeroshot\",\"mode\":\"ceia\",\"acc1\":0.5,\"acc5\":0.90000000000000002,"
        "\"r_at\":{\"1\":0.20000000000000001,\"5\":0.40000000000000002,\"10\":0.59999999999999998},"
        "\"n\":100}");
  m.acc1 = 0.95;
  CHECK_THROWS_AS(m.check(), ceia::ValidationError);
}

TEST_CASE("domain adaptation head") {
  // Separable two-class toy set.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 0.2);
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    const int c = i % 2;
    x.push_back((c ? 1.0 : -1.0) + nd(rng));
    x.push_back(nd(rng));
    y.push_back(c);
  }
  auto feats = Tensor::from({40, 2}, x);
  HeadConfig cfg;
  cfg.num_classes = 2;
  cfg.steps = 200;
  cfg.lr = 5e-2;

  TaskHead zero(2, cfg, true);
  CHECK(g::cross_entropy(zero.logits(feats), y).item() == doctest::Approx(std::log(2.0)));
  HeadConfig k5 = cfg;
  k5.num_classes = 5;
  TaskHead zero5(2, k5, true);
  std::vector<int> y5(40, 3);
  CHECK(g::cross_entropy(zero5.logits(feats), y5).item() == doctest::Approx(std::log(5.0)));

  auto head = da_train_head(feats, y, cfg);
  auto pred = da_predict(feats, head);
  CHECK(accuracy(pred, y) == 1.0);
  auto head2 = da_train_head(feats, y, cfg);
  for (std::size_t i = 0; i < head.parameters().size(); ++i)
    CHECK(std::equal(head.parameters()[i].tensor.values().begin(),
                     head.parameters()[i].tensor.values().end(),
                     head2.parameters()[i].tensor.values().begin()));
  // prediction leaves the head untouched
  auto before = head.parameters()[0].tensor.values();
  std::vector<double> copy(before.begin(), before.end());
  da_predict(feats, head);
  CHECK(std::equal(copy.begin(), copy.end(), head.parameters()[0].tensor.values().begin()));

  HeadConfig deep = cfg;
  deep.hidden = {8};
  CHECK(accuracy(da_predict(feats, da_train_head(feats, y, deep)), y) == 1.0);

  std::vector<int> one_class(40, 0);
  CHECK_THROWS_AS(da_train_head(feats, one_class, cfg), ceia::ValidationError);
  CHECK_THROWS_AS(da_predict(Tensor::zeros({3, 4}), head), ceia::ValidationError);
}

TEST_CASE("random heads score near chance") {
  std::mt19937_64 rng(6);
  const std::size_t n = 400, d = 8;
  auto f = Tensor::from({n, d}, unit_rows(n, d, rng));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 4);
  double mean = 0;
  for (int s = 0; s < 32; ++s) {
    HeadConfig cfg;
    cfg.num_classes = 4;
    cfg.seed = static_cast<std::uint64_t>(s);
    mean += accuracy(da_predict(f, TaskHead(d, cfg, false)), y);
  }
  mean /= 32;
  CHECK(std::abs(mean - 0.25) < 0.03);
}

TEST_CASE("few-shot adaptation") {
  enc::VitConfig vc;
  vc.image_size = 8;
  vc.patch_size = 4;
  vc.embed_dim = 16;
  vc.depth = 2;
  vc.heads = 2;
  vc.mlp_ratio = 2;
  vc.output_dim = 8;
  enc::Rng rng(7);
  enc::VisionTransformer image(vc, rng);
  image.set_trainable(false);
  auto event = enc::init_event_encoder_from_image(image, enc::LoraConfig{4, 8.0, {"q", "v"}}, rng);
  std::mt19937_64 drng(8);
  auto clf = manual_classifier(unit_rows(3, 8, drng), 3, 8);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<std::vector<double>> support(12, std::vector<double>(8 * 8 * 3));
  std::vector<int> labels;
  for (std::size_t i = 0; i < support.size(); ++i) {
    for (auto& v : support[i]) v = u(drng) + (static_cast<int>(i % 3) - 1) * 0.5;
    labels.push_back(static_cast<int>(i % 3));
  }
  auto acc = [&](const enc::VisionTransformer& e) {
    auto p = zero_shot_probs(ceia::align::embed_inputs(e, support), clf);
    return topk_accuracy(p, labels, 1);
  };
  auto before = ceia::align::embed_inputs(event, support);
  FewShotConfig cfg;
  cfg.steps = 0;
  few_shot_adapt(event, support, labels, clf, cfg);
  auto same = ceia::align::embed_inputs(event, support);
  CHECK(std::equal(before.values().begin(), before.values().end(), same.values().begin()));

  const double acc0 = acc(event);
  cfg.steps = 60;
  cfg.lr = 1e-2;
  few_shot_adapt(event, support, labels, clf, cfg);
  CHECK(acc(event) >= acc0);
  CHECK(acc(event) > 0.9);

  std::vector<int> missing(12, 0);
  CHECK_THROWS_AS(few_shot_adapt(event, support, missing, clf, cfg), ceia::ValidationError);
}

TEST_CASE("support sampling") {
  std::vector<int> pool;
  for (int i = 0; i < 30; ++i) pool.push_back(i % 3);
  auto s = sample_support(pool, 3, 4, 1);
  CHECK(s.size() == 12);
  std::vector<int> count(3, 0);
  for (int i : s) ++count[pool[i]];
  CHECK(count == std::vector<int>{4, 4, 4});
  CHECK(sample_support(pool, 3, 4, 1) == s);
  CHECK_THROWS_AS(sample_support(pool, 3, 11, 1), ceia::ValidationError);
}

TEST_CASE("eventclip baseline equals event encoder at init") {
  enc::VitConfig vc;
  vc.image_size = 8;
  vc.patch_size = 4;
  vc.embed_dim = 16;
  vc.depth = 2;
  vc.heads = 2;
  vc.output_dim = 8;
  enc::Rng rng(9);
  enc::VisionTransformer image(vc, rng);
  image.set_trainable(false);
  auto event = enc::init_event_encoder_from_image(image, enc::LoraConfig{}, rng);
  std::vector<std::vector<double>> frames(5, std::vector<double>(8 * 8 * 3, 0.0));
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i][i] = 1.0;
  auto a = eventclip_baseline_embed(image, frames);
  auto b = ceia::align::embed_inputs(event, frames);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}
