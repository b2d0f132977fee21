#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ceia/align/contrastive.hpp"
#include "ceia/encoders/transformer.hpp"

namespace ceia::align {

using encoders::TextTransformer;
using encoders::VisionTransformer;

enum class Mode { Stage0, Ceia, Ceta, FullFinetune };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

struct TrainConfig {
  Mode mode = Mode::Ceia;
  int batch_size = 128;
  double peak_lr = 5e-4;
  double weight_decay = 1e-2;
  std::int64_t warmup_steps = 20;
  std::int64_t total_steps = 200;
  std::uint64_t seed = 0;
  // Stage 0 always learns tau; later stages only when this is set.
  bool train_tau = false;

  // Mode-specific optimiser defaults (full finetune: lr 1e-7, wd 1e-1).
  static TrainConfig defaults(Mode mode);
  void validate() const;
};

struct StepLog {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
  double tau = 0;
};

// JSON line {"step":..,"lr":..,"loss":..,"tau":..}
std::string to_json(const StepLog& log);

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(int epoch, double mean_loss)> on_epoch;
  // Called after optimiser step `step` (1-based) when step % checkpoint_every == 0.
  std::function<void(std::int64_t step)> on_checkpoint;
  std::int64_t checkpoint_every = 0;
};

struct TrainResult {
  std::vector<double> losses;  // one per step
  std::int64_t steps = 0;
};

// Image i is paired with one of captions[i], drawn per visit.
struct ImageTextPairs {
  std::vector<std::vector<double>> images;
  std::vector<std::vector<std::vector<int>>> captions;
  std::vector<int> labels;
};

// Joint symmetric InfoNCE over both encoders and tau; both encoders and tau
// are frozen on return.
TrainResult train_stage0(VisionTransformer& image, TextTransformer& text, Temperature& temp,
                         const ImageTextPairs& data, const TrainConfig& config,
                         const TrainHooks& hooks = {});

// Trains the event encoder's trainable parameters so that
// symmetric_loss(event(inputs[batch]), targets[batch]) falls. `targets` is a
// constant [N, D] matrix of unit rows.
TrainResult train_alignment(VisionTransformer& event, std::span<const std::vector<double>> inputs,
                            const Tensor& targets, Temperature& temp, const TrainConfig& config,
                            const TrainHooks& hooks = {});

// Event-image alignment against the frozen image encoder's embeddings of the
// paired images.
TrainResult train_ceia(VisionTransformer& event, const VisionTransformer& image,
                       std::span<const std::vector<double>> event_inputs,
                       std::span<const std::vector<double>> image_inputs, Temperature& temp,
                       const TrainConfig& config, const TrainHooks& hooks = {});

// Event-text alignment against the frozen text encoder's caption embeddings.
TrainResult train_ceta(VisionTransformer& event, const TextTransformer& text,
                       std::span<const std::vector<double>> event_inputs,
                       std::span<const std::vector<int>> captions, Temperature& temp,
                       const TrainConfig& config, const TrainHooks& hooks = {});

// No-grad batched encoding, [N, D].
Tensor embed_inputs(const VisionTransformer& encoder, std::span<const std::vector<double>> inputs,
                    std::size_t chunk = 256);
Tensor embed_captions(const TextTransformer& encoder, std::span<const std::vector<int>> captions,
                      std::size_t chunk = 512);

// Epoch-wise batch schedule: a seeded permutation per epoch, full batches only
// (one short batch when n < batch_size).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  int epoch() const { return epoch_; }
  bool epoch_finished() const { return cursor_ == 0; }

 private:
  void reshuffle();

  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  int epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace ceia::align
