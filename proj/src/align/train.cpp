#include "ceia/align/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"
#include "ceia/gradnet/optim.hpp"

namespace ceia::align {

namespace g = gradnet;

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Stage0: return "stage0";
    case Mode::Ceia: return "ceia";
    case Mode::Ceta: return "ceta";
    case Mode::FullFinetune: return "full_finetune";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::Stage0, Mode::Ceia, Mode::Ceta, Mode::FullFinetune})
    if (to_string(m) == name) return m;
  throw ValidationError("unknown training mode '" + name +
                        "' (expected stage0, ceia, ceta, full_finetune)");
}

TrainConfig TrainConfig::defaults(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  if (mode == Mode::FullFinetune) {
    c.peak_lr = 1e-7;
    c.weight_decay = 1e-1;
  }
  if (mode == Mode::Stage0) c.train_tau = true;
  return c;
}

void TrainConfig::validate() const {
  CEIA_REQUIRE(batch_size >= 1, "train: batch_size must be >= 1");
  CEIA_REQUIRE(peak_lr >= 0 && std::isfinite(peak_lr), "train: bad peak_lr");
  CEIA_REQUIRE(weight_decay >= 0, "train: weight_decay must be >= 0");
  CEIA_REQUIRE(total_steps >= 1, "train: total_steps must be >= 1");
  CEIA_REQUIRE(warmup_steps >= 0 && warmup_steps < total_steps,
               "train: need 0 <= warmup_steps < total_steps");
}

std::string to_json(const StepLog& log) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"step\":" << log.step << ",\"lr\":" << log.lr << ",\"loss\":" << log.loss
     << ",\"tau\":" << log.tau << "}";
  return os.str();
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min(batch_size, n)), seed_(seed) {
  CEIA_REQUIRE(n > 0, "train: empty dataset");
  CEIA_REQUIRE(batch_size > 0, "train: batch_size must be >= 1");
  order_.resize(n_);
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(seed_ ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch_ + 1)));
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  if (cursor_ + batch_ > n_) {
    cursor_ = 0;
    ++epoch_;
    reshuffle();
  }
  return out;
}

namespace {

Tensor stack_rows(std::span<const std::vector<double>> inputs, std::span<const std::size_t> idx,
                  std::size_t image_size) {
  std::vector<const std::vector<double>*> ptrs;
  ptrs.reserve(idx.size());
  for (auto i : idx) ptrs.push_back(&inputs[i]);
  return encoders::stack_images(ptrs, image_size);
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  const std::size_t d = m.dim(1);
  std::vector<double> v;
  v.reserve(idx.size() * d);
  for (auto i : idx) {
    auto row = m.values().subspan(i * d, d);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor::from({idx.size(), d}, std::move(v));
}

void prefix_params(const std::string& prefix, std::vector<g::NamedTensor> in,
                   std::vector<g::NamedTensor>& out) {
  for (auto& p : in) {
    if (!p.tensor.requires_grad()) continue;
    p.name = prefix + p.name;
    out.push_back(std::move(p));
  }
}

// Shared optimisation loop: `step_loss(idx)` builds the loss for a batch.
class Loop {
 public:
  Loop(std::vector<g::NamedTensor> params, Temperature& temp, const TrainConfig& cfg,
       const TrainHooks& hooks, std::string stage)
      : params_(std::move(params)), temp_(temp), cfg_(cfg), hooks_(hooks),
        stage_(std::move(stage)) {
    state_.config.weight_decay = cfg.weight_decay;
    state_.config.peak_lr = cfg.peak_lr;
    tau_state_.config.weight_decay = 0.0;
    if (temp_.trainable()) tau_params_.push_back({"log_tau", temp_.log_tau()});
    CEIA_REQUIRE(!params_.empty() || !tau_params_.empty(),
                 stage_ + ": nothing to train (all parameters frozen)");
  }

  template <class BuildLoss>
  TrainResult run(BatchSampler& sampler, BuildLoss build_loss) {
    TrainResult result;
    const g::LrSchedule sched{cfg_.warmup_steps, cfg_.total_steps, cfg_.peak_lr};
    double epoch_sum = 0;
    int epoch_count = 0;
    for (std::int64_t step = 0; step < cfg_.total_steps; ++step) {
      const int epoch = sampler.epoch();
      auto idx = sampler.next();
      for (auto& p : params_) p.tensor.zero_grad();
      for (auto& p : tau_params_) p.tensor.zero_grad();
      Tensor loss = build_loss(idx);
      const double value = loss.item();
      const double lr = g::cosine_warmup_lr(std::min(step + 1, cfg_.total_steps), sched);
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << stage_ << ": loss is " << value << " at step " << step << " (lr " << lr
           << ", tau " << temp_.tau() << "); aborting";
        throw NumericalError(os.str());
      }
      g::backward(loss);
      g::adamw_step(params_, state_, lr);
      if (!tau_params_.empty()) {
        g::adamw_step(tau_params_, tau_state_, lr);
        temp_.clamp();
      }
      result.losses.push_back(value);
      result.steps = step + 1;
      if (hooks_.on_step) hooks_.on_step(StepLog{step, lr, value, temp_.tau()});
      epoch_sum += value;
      ++epoch_count;
      if (sampler.epoch() != epoch || step + 1 == cfg_.total_steps) {
        if (hooks_.on_epoch) hooks_.on_epoch(epoch, epoch_sum / epoch_count);
        epoch_sum = 0;
        epoch_count = 0;
      }
      if (hooks_.on_checkpoint && hooks_.checkpoint_every > 0 &&
          (step + 1) % hooks_.checkpoint_every == 0)
        hooks_.on_checkpoint(step + 1);
    }
    return result;
  }

 private:
  std::vector<g::NamedTensor> params_;
  std::vector<g::NamedTensor> tau_params_;
  Temperature& temp_;
  const TrainConfig& cfg_;
  const TrainHooks& hooks_;
  std::string stage_;
  g::AdamWState state_;
  g::AdamWState tau_state_;
};

void check_targets(const VisionTransformer& event, std::size_t n, const Tensor& targets) {
  CEIA_REQUIRE(n > 0, "train: empty dataset");
  CEIA_REQUIRE(targets.rank() == 2 && targets.dim(0) == n,
               "train: need one target row per input (" + std::to_string(n) + "), got " +
                   g::shape_str(targets.shape()));
  CEIA_REQUIRE(targets.dim(1) == event.config().output_dim,
               "train: target dim " + std::to_string(targets.dim(1)) +
                   " differs from encoder output dim " +
                   std::to_string(event.config().output_dim));
}

void check_adapter_only(const VisionTransformer& event, Mode mode) {
  if (mode == Mode::FullFinetune) return;
  CEIA_REQUIRE(event.adapter_parameter_count() > 0,
               to_string(mode) + ": event encoder has no LoRA adapters; initialise it from the "
                                 "image encoder first");
  for (const auto& p : event.trainable_parameters())
    CEIA_REQUIRE(p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B"),
                 to_string(mode) + ": base weight " + p.name + " is trainable");
}

}  // namespace

TrainResult train_stage0(VisionTransformer& image, TextTransformer& text, Temperature& temp,
                         const ImageTextPairs& data, const TrainConfig& config,
                         const TrainHooks& hooks) {
  config.validate();
  const std::size_t n = data.images.size();
  CEIA_REQUIRE(n > 0, "stage0: empty dataset");
  CEIA_REQUIRE(data.captions.size() == n && data.labels.size() == n,
               "stage0: images, captions and labels differ in length");
  CEIA_REQUIRE(std::set<int>(data.labels.begin(), data.labels.end()).size() >= 2,
               "stage0: need at least 2 classes in the training data");
  for (const auto& c : data.captions) CEIA_REQUIRE(!c.empty(), "stage0: image without caption");
  CEIA_REQUIRE(image.config().output_dim == text.config().output_dim,
               "stage0: image and text encoders must share output_dim");

  image.set_trainable(true);
  text.set_trainable(true);
  temp.set_trainable(true);
  std::vector<g::NamedTensor> params;
  prefix_params("image.", image.parameters(), params);
  prefix_params("text.", text.parameters(), params);

  BatchSampler sampler(n, static_cast<std::size_t>(config.batch_size), config.seed);
  std::mt19937_64 caption_rng(config.seed ^ 0xC0FFEEULL);
  const std::size_t size = image.config().image_size;
  Loop loop(std::move(params), temp, config, hooks, "stage0");
  auto result = loop.run(sampler, [&](const std::vector<std::size_t>& idx) {
    std::vector<std::vector<int>> caps;
    caps.reserve(idx.size());
    for (auto i : idx) {
      const auto& choices = data.captions[i];
      caps.push_back(choices[caption_rng() % choices.size()]);
    }
    Tensor ei = image.encode(stack_rows(data.images, idx, size));
    Tensor et = text.encode(caps);
    return symmetric_loss(ei, et, temp);
  });
  image.set_trainable(false);
  text.set_trainable(false);
  temp.set_trainable(false);
  return result;
}

TrainResult train_alignment(VisionTransformer& event, std::span<const std::vector<double>> inputs,
                            const Tensor& targets, Temperature& temp, const TrainConfig& config,
                            const TrainHooks& hooks) {
  config.validate();
  check_targets(event, inputs.size(), targets);
  temp.set_trainable(config.train_tau);
  std::vector<g::NamedTensor> params;
  prefix_params("event.", event.parameters(), params);
  BatchSampler sampler(inputs.size(), static_cast<std::size_t>(config.batch_size), config.seed);
  const std::size_t size = event.config().image_size;
  Loop loop(std::move(params), temp, config, hooks, to_string(config.mode));
  auto result = loop.run(sampler, [&](const std::vector<std::size_t>& idx) {
    Tensor e = event.encode(stack_rows(inputs, idx, size));
    return symmetric_loss(e, gather_rows(targets, idx), temp);
  });
  temp.set_trainable(false);
  return result;
}

TrainResult train_ceia(VisionTransformer& event, const VisionTransformer& image,
                       std::span<const std::vector<double>> event_inputs,
                       std::span<const std::vector<double>> image_inputs, Temperature& temp,
                       const TrainConfig& config, const TrainHooks& hooks) {
  CEIA_REQUIRE(config.mode == Mode::Ceia || config.mode == Mode::FullFinetune,
               "train_ceia: mode must be ceia or full_finetune");
  CEIA_REQUIRE(event_inputs.size() == image_inputs.size(),
               "train_ceia: event and image sets differ in length");
  check_adapter_only(event, config.mode);
  Tensor targets = embed_inputs(image, image_inputs);
  return train_alignment(event, event_inputs, targets, temp, config, hooks);
}

TrainResult train_ceta(VisionTransformer& event, const TextTransformer& text,
                       std::span<const std::vector<double>> event_inputs,
                       std::span<const std::vector<int>> captions, Temperature& temp,
                       const TrainConfig& config, const TrainHooks& hooks) {
  CEIA_REQUIRE(config.mode == Mode::Ceta, "train_ceta: mode must be ceta");
  CEIA_REQUIRE(event_inputs.size() == captions.size(),
               "train_ceta: events and captions differ in length");
  check_adapter_only(event, config.mode);
  Tensor targets = embed_captions(text, captions);
  return train_alignment(event, event_inputs, targets, temp, config, hooks);
}

Tensor embed_inputs(const VisionTransformer& encoder, std::span<const std::vector<double>> inputs,
                    std::size_t chunk) {
  CEIA_REQUIRE(!inputs.empty(), "embed: no inputs");
  g::NoGradGuard no_grad;
  const std::size_t d = encoder.config().output_dim, size = encoder.config().image_size;
  std::vector<double> out;
  out.reserve(inputs.size() * d);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < inputs.size(); begin += chunk) {
    idx.resize(std::min(chunk, inputs.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    auto e = encoder.encode(stack_rows(inputs, idx, size));
    out.insert(out.end(), e.values().begin(), e.values().end());
  }
  return Tensor::from({inputs.size(), d}, std::move(out));
}

Tensor embed_captions(const TextTransformer& encoder, std::span<const std::vector<int>> captions,
                      std::size_t chunk) {
  CEIA_REQUIRE(!captions.empty(), "embed: no captions");
  g::NoGradGuard no_grad;
  const std::size_t d = encoder.config().output_dim;
  std::vector<double> out;
  out.reserve(captions.size() * d);
  for (std::size_t begin = 0; begin < captions.size(); begin += chunk) {
    auto e = encoder.encode(captions.subspan(begin, std::min(chunk, captions.size() - begin)));
    out.insert(out.end(), e.values().begin(), e.values().end());
  }
  return Tensor::from({captions.size(), d}, std::move(out));
}

}  // namespace ceia::align
