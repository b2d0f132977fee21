#include "ceia/tasks/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ceia/align/train.hpp"
#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"
#include "ceia/gradnet/optim.hpp"

namespace ceia::tasks {

namespace g = gradnet;

TextClassifier build_text_classifier(const std::vector<std::string>& class_names,
                                     const std::string& templ, const eventdata::Vocabulary& vocab,
                                     const TextTransformer& text) {
  CEIA_REQUIRE(class_names.size() >= 2, "text classifier needs at least 2 classes");
  std::vector<std::vector<int>> captions;
  for (const auto& name : class_names)
    captions.push_back(eventdata::make_caption(name, templ, vocab).tokens);
  TextClassifier c{align::embed_captions(text, captions), class_names, templ, false};
  if (std::set<std::vector<int>>(captions.begin(), captions.end()).size() != captions.size()) {
    c.degenerate = true;
    std::cerr << "warning: text classifier has duplicate class captions; rows coincide\n";
  }
  return c;
}

int argmax(std::span<const double> v) {
  CEIA_REQUIRE(!v.empty(), "argmax of empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace {

std::vector<double> softmax_row(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

Prediction zero_shot_classify(std::span<const double> f, const TextClassifier& classifier) {
  const std::size_t k = classifier.weights.dim(0), d = classifier.weights.dim(1);
  CEIA_REQUIRE(f.size() == d, "zero-shot: feature dim " + std::to_string(f.size()) +
                                  " does not match classifier dim " + std::to_string(d));
  std::vector<double> logits(k, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) logits[c] += f[j] * classifier.weights.values()[c * d + j];
  Prediction p;
  p.probs = softmax_row(logits);
  p.label = argmax(logits);
  return p;
}

std::vector<std::vector<double>> zero_shot_probs(const Tensor& features,
                                                 const TextClassifier& classifier) {
  CEIA_REQUIRE(features.rank() == 2, "zero-shot: features must be [N, D]");
  const std::size_t d = features.dim(1);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < features.dim(0); ++i)
    out.push_back(zero_shot_classify(features.values().subspan(i * d, d), classifier).probs);
  return out;
}

double topk_accuracy(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                     int k) {
  CEIA_REQUIRE(!rows.empty(), "topk_accuracy: no rows");
  CEIA_REQUIRE(rows.size() == labels.size(), "topk_accuracy: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const int kk = static_cast<int>(r.size());
    CEIA_REQUIRE(k >= 1 && k <= kk, "topk_accuracy: k=" + std::to_string(k) + " outside [1, " +
                                        std::to_string(kk) + "]");
    const int y = labels[i];
    CEIA_REQUIRE(y >= 0 && y < kk, "topk_accuracy: label " + std::to_string(y) + " out of range");
    // Classes ranked ahead of y: higher score, or equal score with lower index.
    int ahead = 0;
    for (int c = 0; c < kk; ++c)
      if (r[c] > r[y] || (r[c] == r[y] && c < y)) ++ahead;
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

RankedResult retrieve(std::span<const double> query, const Tensor& gallery, int correct,
                      int query_id) {
  CEIA_REQUIRE(gallery.rank() == 2 && gallery.dim(0) > 0, "retrieve: empty gallery");
  const std::size_t m = gallery.dim(0), d = gallery.dim(1);
  CEIA_REQUIRE(query.size() == d, "retrieve: query dim " + std::to_string(query.size()) +
                                      " does not match gallery dim " + std::to_string(d));
  std::vector<double> score(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) score[i] += query[j] * gallery.values()[i * d + j];
  RankedResult r;
  r.query = query_id;
  r.order.resize(m);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  if (correct >= 0) {
    CEIA_REQUIRE(static_cast<std::size_t>(correct) < m, "retrieve: correct index out of range");
    r.rank_of_correct =
        static_cast<int>(std::find(r.order.begin(), r.order.end(), correct) - r.order.begin()) + 1;
  }
  return r;
}

std::vector<RankedResult> retrieve_paired(const Tensor& queries, const Tensor& gallery) {
  CEIA_REQUIRE(queries.rank() == 2 && queries.shape() == gallery.shape(),
               "retrieve: paired query and gallery sets must have equal shapes");
  const std::size_t d = queries.dim(1);
  std::vector<RankedResult> out;
  for (std::size_t i = 0; i < queries.dim(0); ++i)
    out.push_back(retrieve(queries.values().subspan(i * d, d), gallery, static_cast<int>(i),
                           static_cast<int>(i)));
  return out;
}

double recall_at_k(std::span<const RankedResult> results, int k) {
  CEIA_REQUIRE(!results.empty(), "recall_at_k: no results");
  CEIA_REQUIRE(k >= 1, "recall_at_k: K must be >= 1");
  std::size_t hits = 0;
  for (const auto& r : results) {
    CEIA_REQUIRE(r.rank_of_correct >= 1, "recall_at_k: result without a correct item");
    if (r.rank_of_correct <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

void MetricsReport::check() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  CEIA_REQUIRE(in01(acc1) && in01(acc5) && acc1 <= acc5, "metrics: need 0 <= acc1 <= acc5 <= 1");
  double prev = 0.0;
  for (const auto& [k, v] : r_at) {
    CEIA_REQUIRE(in01(v) && v >= prev, "metrics: R@K must be in [0,1] and non-decreasing in K");
    prev = v;
  }
}

std::string MetricsReport::to_json() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"task\":\"" << task << "\",\"mode\":\"" << mode << "\",\"acc1\":" << acc1
     << ",\"acc5\":" << acc5 << ",\"r_at\":{";
  bool first = true;
  for (const auto& [k, v] : r_at) {
    os << (first ? "" : ",") << "\"" << k << "\":" << v;
    first = false;
  }
  os << "},\"n\":" << n << "}";
  return os.str();
}

void few_shot_adapt(VisionTransformer& event, std::span<const std::vector<double>> support,
                    std::span<const int> labels, const TextClassifier& classifier,
                    const FewShotConfig& config) {
  const int k = static_cast<int>(classifier.weights.dim(0));
  CEIA_REQUIRE(support.size() == labels.size(), "few-shot: support/label count mismatch");
  std::vector<int> per_class(k, 0);
  for (int y : labels) {
    CEIA_REQUIRE(y >= 0 && y < k, "few-shot: label out of range");
    ++per_class[y];
  }
  for (int c = 0; c < k; ++c)
    CEIA_REQUIRE(per_class[c] > 0, "few-shot: class '" + classifier.class_names[c] +
                                       "' has no support examples");
  CEIA_REQUIRE(config.steps >= 0, "few-shot: steps must be >= 0");
  if (config.steps == 0) return;
  auto params = event.trainable_parameters();
  CEIA_REQUIRE(!params.empty(), "few-shot: encoder has no trainable parameters");

  g::AdamWState state;
  state.config.weight_decay = config.weight_decay;
  align::BatchSampler sampler(support.size(), static_cast<std::size_t>(config.batch_size),
                              config.seed);
  const g::LrSchedule sched{0, config.steps, config.lr};
  const std::size_t size = event.config().image_size;
  for (int step = 0; step < config.steps; ++step) {
    auto idx = sampler.next();
    std::vector<const std::vector<double>*> ptrs;
    std::vector<int> y;
    for (auto i : idx) {
      ptrs.push_back(&support[i]);
      y.push_back(labels[i]);
    }
    for (auto& p : params) p.tensor.zero_grad();
    auto f = event.encode(encoders::stack_images(ptrs, size));
    auto loss = g::cross_entropy(g::matmul(f, classifier.weights, true), y);
    if (!std::isfinite(loss.item()))
      throw NumericalError("few-shot: loss is not finite at step " + std::to_string(step));
    g::backward(loss);
    g::adamw_step(params, state, g::cosine_warmup_lr(step, sched));
  }
}

std::vector<int> sample_support(std::span<const int> pool_labels, int num_classes, int n,
                                std::uint64_t seed) {
  CEIA_REQUIRE(n >= 1, "few-shot: N must be >= 1");
  std::vector<int> order(pool_labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> taken(num_classes, 0), out;
  for (int i : order) {
    const int y = pool_labels[i];
    if (y >= 0 && y < num_classes && taken[y] < n) {
      ++taken[y];
      out.push_back(i);
    }
  }
  for (int c = 0; c < num_classes; ++c)
    CEIA_REQUIRE(taken[c] == n, "few-shot: class " + std::to_string(c) + " has only " +
                                    std::to_string(taken[c]) + " candidates for " +
                                    std::to_string(n) + "-shot support");
  std::sort(out.begin(), out.end());
  return out;
}

TaskHead::TaskHead(std::size_t in_dim, const HeadConfig& config, bool zero_init)
    : in_dim_(in_dim), num_classes_(config.num_classes) {
  CEIA_REQUIRE(config.num_classes >= 2, "task head needs at least 2 classes");
  CEIA_REQUIRE(in_dim > 0, "task head: zero input dim");
  encoders::Rng rng(config.seed);
  std::size_t prev = in_dim;
  for (auto h : config.hidden) {
    CEIA_REQUIRE(h > 0, "task head: zero hidden width");
    layers_.push_back(encoders::LoraLinear::init(prev, h, rng));
    prev = h;
  }
  const auto k = static_cast<std::size_t>(config.num_classes);
  if (zero_init)
    layers_.emplace_back(Tensor::zeros({k, prev}, true), Tensor::zeros({k}, true));
  else
    layers_.push_back(encoders::LoraLinear::init(prev, k, rng));
}

Tensor TaskHead::logits(const Tensor& features) const {
  CEIA_REQUIRE(features.rank() == 2 && features.dim(1) == in_dim_,
               "task head: expected [N, " + std::to_string(in_dim_) + "] features, got " +
                   g::shape_str(features.shape()));
  Tensor x = features;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x);
    if (i + 1 < layers_.size()) x = g::gelu(x);
  }
  return x;
}

std::vector<g::NamedTensor> TaskHead::parameters() const {
  std::vector<g::NamedTensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect("head." + std::to_string(i), out);
  return out;
}

TaskHead da_train_head(const Tensor& feats, std::span<const int> labels, const HeadConfig& config) {
  CEIA_REQUIRE(feats.rank() == 2 && feats.dim(0) == labels.size() && !labels.empty(),
               "task head: need one label per feature row");
  CEIA_REQUIRE(std::set<int>(labels.begin(), labels.end()).size() >= 2,
               "task head: training set has a single class");
  TaskHead head(feats.dim(1), config, true);
  auto params = head.parameters();
  g::AdamWState state;
  state.config.weight_decay = config.weight_decay;
  const g::LrSchedule sched{0, std::max(config.steps, 1), config.lr};
  for (int step = 0; step < config.steps; ++step) {
    for (auto& p : params) p.tensor.zero_grad();
    auto loss = g::cross_entropy(head.logits(feats), labels);
    if (!std::isfinite(loss.item()))
      throw NumericalError("task head: loss is not finite at step " + std::to_string(step));
    g::backward(loss);
    g::adamw_step(params, state, g::cosine_warmup_lr(step, sched));
  }
  for (auto& p : params) {
    p.tensor.zero_grad();
    p.tensor.set_requires_grad(false);
  }
  return head;
}

std::vector<int> da_predict(const Tensor& event_features, const TaskHead& head) {
  g::NoGradGuard no_grad;
  auto logits = head.logits(event_features);
  const std::size_t k = logits.dim(1);
  std::vector<int> out;
  for (std::size_t i = 0; i < logits.dim(0); ++i)
    out.push_back(argmax(logits.values().subspan(i * k, k)));
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  CEIA_REQUIRE(!labels.empty() && predictions.size() == labels.size(),
               "accuracy: prediction/label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Tensor eventclip_baseline_embed(const VisionTransformer& image,
                                std::span<const std::vector<double>> frames) {
  return align::embed_inputs(image, frames);
}

}  // namespace ceia::tasks
