#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ceia/align/models.hpp"
#include "ceia/pipeline/config.hpp"
#include "ceia/tasks/tasks.hpp"

namespace ceia::pipeline {

// Seed streams derived from RunConfig::seed.
enum class SeedStream : std::uint64_t {
  Stage0Data = 1,
  EventData = 2,
  Split = 3,
  Stage0Init = 4,
  Stage0Train = 5,
  LoraInit = 6,
  Stage1Train = 7,
  Eval = 8,
};
std::uint64_t seed_for(const RunConfig& config, SeedStream stream);

struct Data {
  eventdata::LabelSet labels;
  eventdata::Vocabulary vocab;
  std::vector<eventdata::Sample> stage0;  // image-text pretraining corpus
  std::vector<eventdata::Sample> pairs;   // event-image pairs
  eventdata::DatasetSplit split;
};

eventdata::LabelSet label_set(const RunConfig& config);
eventdata::Vocabulary build_vocab(const RunConfig& config);
Data generate_data(const RunConfig& config);
// <dir>/stage0 and <dir>/pairs corpora.
void write_data(const Data& data, const std::filesystem::path& dir);
Data read_data(const RunConfig& config, const std::filesystem::path& dir);

// All stage-0 caption variants for one sample.
std::vector<std::vector<int>> stage0_captions(const RunConfig& config, const Data& data,
                                              const eventdata::Sample& sample);

std::vector<std::vector<double>> image_inputs(const Data& data, std::span<const int> ids);
std::vector<std::vector<double>> event_inputs(const RunConfig& config, const Data& data,
                                              std::span<const int> ids);
std::vector<int> labels_of(const Data& data, std::span<const int> ids);

align::Stage0Model new_stage0_model(const RunConfig& config, const Data& data);
align::Stage0Model run_stage0(const RunConfig& config, const Data& data,
                              const align::TrainHooks& hooks = {});

// Event encoder ready for stage 1: LoRA-initialised copy of the image encoder
// (or a fully trainable copy for full_finetune).
align::EventModel init_event_model(const RunConfig& config, const align::Stage0Model& stage0,
                                   align::Mode mode);

// Trains on the split's train ids (or `train_ids` when given).
align::EventModel run_stage1(const RunConfig& config, const Data& data,
                             const align::Stage0Model& stage0, align::Mode mode,
                             const align::TrainHooks& hooks = {},
                             const std::vector<int>* train_ids = nullptr);

// Test ids restricted to the held-out classes.
std::vector<int> heldout_test_ids(const Data& data);

tasks::TextClassifier make_classifier(const RunConfig& config, const Data& data,
                                      const align::Stage0Model& stage0);

// Zero-shot Acc1/Acc5 of `encoder` on event frames of `ids`.
tasks::MetricsReport eval_zeroshot(const RunConfig& config, const Data& data,
                                   const align::Stage0Model& stage0,
                                   const encoders::VisionTransformer& encoder,
                                   std::span<const int> ids, const std::string& mode);

// Zero-shot on paired images through the image encoder (stage-0 check).
tasks::MetricsReport eval_image_zeroshot(const RunConfig& config, const Data& data,
                                         const align::Stage0Model& stage0,
                                         std::span<const int> ids);

// One report per N: support drawn from the train split, scored on the test split.
std::vector<tasks::MetricsReport> eval_fewshot(const RunConfig& config, const Data& data,
                                               const align::Stage0Model& stage0,
                                               const encoders::VisionTransformer& encoder,
                                               const std::string& mode);

enum class RetrievalDirection { EventToImage, ImageToEvent, EventToText };
std::string to_string(RetrievalDirection d);
RetrievalDirection parse_direction(const std::string& name);

// Gallery: the first `retrieval_gallery` test pairs. Event-to-text queries
// retrieve class captions and count a hit on the sample's class.
tasks::MetricsReport eval_retrieval(const RunConfig& config, const Data& data,
                                    const align::Stage0Model& stage0,
                                    const encoders::VisionTransformer& encoder,
                                    RetrievalDirection direction, const std::string& mode);

struct DaResult {
  tasks::MetricsReport event_report;  // head on event features
  double image_acc = 0;               // head on image features of the test split
  double untrained_acc = 0;           // mean accuracy of untrained heads on events
};

// Head trained on image features of the train split, evaluated on event
// features of the test split.
DaResult eval_da(const RunConfig& config, const Data& data, const align::Stage0Model& stage0,
                 const encoders::VisionTransformer& encoder, const std::string& mode,
                 int untrained_heads = 64);

}  // namespace ceia::pipeline
