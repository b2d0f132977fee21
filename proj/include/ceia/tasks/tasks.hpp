#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ceia/encoders/transformer.hpp"
#include "ceia/eventdata/dataset.hpp"

namespace ceia::tasks {

using encoders::TextTransformer;
using encoders::VisionTransformer;
using gradnet::Tensor;

struct TextClassifier {
  Tensor weights;  // [K, D], unit rows
  std::vector<std::string> class_names;
  std::string templ;
  bool degenerate = false;  // two classes share a caption
};

TextClassifier build_text_classifier(const std::vector<std::string>& class_names,
                                     const std::string& templ, const eventdata::Vocabulary& vocab,
                                     const TextTransformer& text);

struct Prediction {
  std::vector<double> probs;
  int label = 0;
};

// p = softmax(f W^T), argmax with ties to the lower index.
Prediction zero_shot_classify(std::span<const double> f, const TextClassifier& classifier);
// Rows of softmax(F W^T) for F [N, D].
std::vector<std::vector<double>> zero_shot_probs(const Tensor& features,
                                                 const TextClassifier& classifier);

int argmax(std::span<const double> v);

// Fraction of rows whose label is among the k largest entries; ties between
// equal scores rank the lower class index first.
double topk_accuracy(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                     int k);

struct RankedResult {
  int query = 0;
  std::vector<int> order;  // gallery indices, best first
  int rank_of_correct = 0;  // 1-based, 0 if no correct index was given
};

RankedResult retrieve(std::span<const double> query, const Tensor& gallery, int correct = -1,
                      int query_id = 0);
// Query i is scored against gallery item i.
std::vector<RankedResult> retrieve_paired(const Tensor& queries, const Tensor& gallery);
double recall_at_k(std::span<const RankedResult> results, int k);

struct MetricsReport {
  std::string task;
  std::string mode;
  double acc1 = 0;
  double acc5 = 0;
  std::map<int, double> r_at;
  std::size_t n = 0;

  void check() const;
  std::string to_json() const;
};

struct FewShotConfig {
  int steps = 50;
  int batch_size = 128;
  double lr = 5e-4;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
};

// Cross-entropy on f W^T over the support set with W frozen; only the
// encoder's trainable parameters (its adapters) move.
void few_shot_adapt(VisionTransformer& event, std::span<const std::vector<double>> support,
                    std::span<const int> labels, const TextClassifier& classifier,
                    const FewShotConfig& config);

// Picks n samples per class from `pool_labels` in a seeded order.
std::vector<int> sample_support(std::span<const int> pool_labels, int num_classes, int n,
                                std::uint64_t seed);

struct HeadConfig {
  int num_classes = 0;
  std::vector<std::size_t> hidden;  // empty: single linear layer
  int steps = 300;
  double lr = 1e-2;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

class TaskHead {
 public:
  TaskHead() = default;
  TaskHead(std::size_t in_dim, const HeadConfig& config, bool zero_init);

  Tensor logits(const Tensor& features) const;
  std::vector<gradnet::NamedTensor> parameters() const;
  std::size_t in_dim() const { return in_dim_; }
  int num_classes() const { return num_classes_; }

 private:
  std::size_t in_dim_ = 0;
  int num_classes_ = 0;
  std::vector<encoders::LoraLinear> layers_;
};

// Full-batch AdamW on cross-entropy, starting from zero (last-layer) weights.
TaskHead da_train_head(const Tensor& image_features, std::span<const int> labels,
                       const HeadConfig& config);
std::vector<int> da_predict(const Tensor& event_features, const TaskHead& head);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Frozen image encoder applied to normalised event frames.
Tensor eventclip_baseline_embed(const VisionTransformer& image,
                                std::span<const std::vector<double>> frames);

}  // namespace ceia::tasks
