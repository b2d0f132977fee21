#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ceia/align/train.hpp"
#include "ceia/encoders/transformer.hpp"
#include "ceia/eventdata/dataset.hpp"
#include "ceia/repr/frames.hpp"

namespace ceia::pipeline {

struct DataSection {
  eventdata::DatasetConfig events;  // stage-1 event/image pairs
  int stage0_samples_per_class = 250;
  double test_fraction = 0.2;
  std::vector<std::string> heldout{"yellow cross", "blue triangle"};
  std::vector<std::string> stage0_templates{
      "a photo of a [CLASS]",          "an image of a [CLASS]",   "a [CLASS]",
      "a picture of the [CLASS]",      "a rendering of a [CLASS]", "a drawing of a [CLASS]",
      "a point cloud image of a [CLASS]", "a photo of the [CLASS]"};
  // Stage-0 captions also name the shape's size and position.
  bool attribute_captions = true;
};

struct EvalSection {
  std::string templ = "a point cloud image of a [CLASS]";
  std::vector<int> fewshot_shots{1, 2, 5, 10, 20};
  int fewshot_steps = 40;
  double fewshot_lr = 5e-4;
  int retrieval_gallery = 200;
  int da_steps = 300;
  double da_lr = 1e-2;
  std::vector<std::size_t> da_hidden;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DataSection data;
  repr::FrameOptions frame;
  encoders::VitConfig vit;
  encoders::TextEncoderConfig text;  // vocab_size is taken from the data
  encoders::LoraConfig lora;
  align::TrainConfig stage0;
  align::TrainConfig stage1;
  EvalSection eval;

  RunConfig();
  void validate() const;
};

// Flat INI with sections; unknown keys are errors.
RunConfig parse_config(const std::string& ini_text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_ini(const RunConfig& config);
// "section.key=value" override, e.g. "stage1.total_steps=100".
void set_option(RunConfig& config, const std::string& assignment);

}  // namespace ceia::pipeline
