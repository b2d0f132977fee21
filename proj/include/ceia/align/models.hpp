#pragma once

#include <cstdint>

#include "ceia/align/train.hpp"
#include "ceia/encoders/checkpoint.hpp"

namespace ceia::align {

using encoders::Checkpoint;

// Frozen image/text pair plus the learned temperature.
struct Stage0Model {
  VisionTransformer image;
  TextTransformer text;
  Temperature temp;
};

struct EventModel {
  VisionTransformer event;
  Temperature temp;
  Mode mode = Mode::Ceia;
};

Checkpoint to_checkpoint(const Stage0Model& model, std::uint32_t vocab_fingerprint);
Checkpoint to_checkpoint(const EventModel& model, std::uint32_t vocab_fingerprint);

// Loaded encoders are frozen; an event model keeps its adapters (or, after
// full finetuning, its base weights) trainable.
Stage0Model stage0_from_checkpoint(const Checkpoint& ckpt);
EventModel event_from_checkpoint(const Checkpoint& ckpt);

std::uint32_t vocab_fingerprint_of(const Checkpoint& ckpt);
// Throws ValidationError when the checkpoint was trained with another vocabulary.
void require_vocab(const Checkpoint& ckpt, std::uint32_t vocab_fingerprint);

}  // namespace ceia::align
