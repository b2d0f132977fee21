#include "ceia/align/models.hpp"

#include <cmath>

#include "ceia/error.hpp"

namespace ceia::align {

namespace {

void put_common(Checkpoint& ck, const Temperature& temp, std::uint32_t fp) {
  ck.put("log_tau", temp.log_tau());
  ck.put("meta.vocab_fingerprint", {1}, {static_cast<double>(fp)});
}

Temperature temp_from(const Checkpoint& ck) {
  Temperature t(Temperature::kInitTau, false);
  ck.assign("log_tau", t.log_tau());
  const double tau = t.tau();
  CEIA_REQUIRE(tau >= Temperature::kMinTau * (1 - 1e-12) && tau <= Temperature::kMaxTau * (1 + 1e-12),
               "checkpoint: temperature out of range");
  return t;
}

}  // namespace

Checkpoint to_checkpoint(const Stage0Model& model, std::uint32_t fp) {
  Checkpoint ck;
  put_common(ck, model.temp, fp);
  encoders::put_config(ck, "image.", model.image.config());
  encoders::put_config(ck, "text.", model.text.config());
  model.image.save_to(ck, "image.");
  model.text.save_to(ck, "text.");
  return ck;
}

Checkpoint to_checkpoint(const EventModel& model, std::uint32_t fp) {
  Checkpoint ck;
  put_common(ck, model.temp, fp);
  ck.put("meta.mode", {1}, {static_cast<double>(static_cast<int>(model.mode))});
  encoders::put_config(ck, "event.", model.event.config());
  model.event.save_to(ck, "event.");
  return ck;
}

Stage0Model stage0_from_checkpoint(const Checkpoint& ck) {
  CEIA_REQUIRE(ck.has("image.config") && ck.has("text.config"),
               "checkpoint does not hold a stage-0 image/text model");
  encoders::Rng rng(0);
  Stage0Model m{VisionTransformer(encoders::get_vit_config(ck, "image."), rng),
                TextTransformer(encoders::get_text_config(ck, "text."), rng), temp_from(ck)};
  m.image.load_from(ck, "image.");
  m.text.load_from(ck, "text.");
  m.image.set_trainable(false);
  m.text.set_trainable(false);
  return m;
}

EventModel event_from_checkpoint(const Checkpoint& ck) {
  CEIA_REQUIRE(ck.has("event.config") && ck.has("meta.mode"),
               "checkpoint does not hold an event encoder");
  const double mode = ck.scalar("meta.mode");
  CEIA_REQUIRE(mode >= 0 && mode <= 3 && mode == std::floor(mode), "checkpoint: bad meta.mode");
  encoders::Rng rng(0);
  EventModel m{VisionTransformer(encoders::get_vit_config(ck, "event."), rng), temp_from(ck),
               static_cast<Mode>(static_cast<int>(mode))};
  m.event.load_from(ck, "event.");
  const bool full = m.mode == Mode::FullFinetune;
  for (auto& p : m.event.parameters()) {
    const bool adapter = p.name.ends_with(".lora_A") || p.name.ends_with(".lora_B");
    p.tensor.set_requires_grad(full || adapter);
  }
  return m;
}

std::uint32_t vocab_fingerprint_of(const Checkpoint& ck) {
  return static_cast<std::uint32_t>(ck.scalar("meta.vocab_fingerprint"));
}

void require_vocab(const Checkpoint& ck, std::uint32_t fp) {
  const auto have = vocab_fingerprint_of(ck);
  CEIA_REQUIRE(have == fp, "vocabulary mismatch: checkpoint fingerprint " + std::to_string(have) +
                               ", dataset fingerprint " + std::to_string(fp));
}

}  // namespace ceia::align
