#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ceia/eventdata/events.hpp"
#include "ceia/eventdata/image.hpp"

namespace ceia::eventdata {

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  // Lower-cased whitespace tokens of every template (slot removed) and class.
  static Vocabulary build(std::span<const std::string> templates,
                          std::span<const std::string> class_names);

  int id(const std::string& token) const;  // throws if unknown
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Order-sensitive FNV-1a over the token list.
  std::uint32_t fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct Caption {
  std::vector<int> tokens;
  std::string text;
  int label = -1;
};

inline const std::string kClassSlot = "[CLASS]";

// Substitutes `class_name` into the single [CLASS] slot, lower-cases and
// tokenises on whitespace.
Caption make_caption(const std::string& class_name, const std::string& templ,
                     const Vocabulary& vocab, int label = -1);

struct DatasetSplit {
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::vector<int> heldout_class_ids;
  std::uint64_t seed = 0;
};

// Stratified by class: every sample of a held-out class goes to test, the
// rest are split so that round(test_fraction * n_remaining) land in test.
DatasetSplit split_dataset(std::span<const int> sample_labels,
                           const std::set<int>& heldout_classes,
                           double test_fraction, std::uint64_t seed);

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index);

struct DatasetConfig {
  std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
  std::vector<std::string> colors{"blue", "yellow"};
  int samples_per_class = 250;
  RenderConfig render;
  int min_size_px = 10;
  int max_size_px = 18;
  std::vector<MotionStep> motion{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  double threshold = 0.2;
  std::uint64_t frame_dt_us = 1000;
  std::uint64_t seed = 1;
};

struct Sample {
  int id = 0;
  int label = 0;
  SceneSpec scene;
  Image image;
  EventStream events;
};

// Samples are interleaved by class (id i has label i % K); each sample is a
// pure function of (config, i).
std::vector<Sample> generate_dataset(const DatasetConfig& config);
Sample generate_sample(const DatasetConfig& config, const LabelSet& labels, int id);

// On-disk corpus: images/<id>.ppm, events/<id>.evst, labels.csv (id,shape,color),
// vocab.txt, and splits.csv when a split is given.
void write_corpus(const std::filesystem::path& dir, std::span<const Sample> samples,
                  const LabelSet& labels, const Vocabulary& vocab,
                  const DatasetSplit* split);

struct Corpus {
  std::vector<Sample> samples;
  Vocabulary vocab;
  DatasetSplit split;
};

Corpus read_corpus(const std::filesystem::path& dir, const LabelSet& labels);

}  // namespace ceia::eventdata
