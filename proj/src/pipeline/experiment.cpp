#include "ceia/pipeline/experiment.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <set>

#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"

namespace ceia::pipeline {

namespace g = gradnet;

std::uint64_t seed_for(const RunConfig& config, SeedStream stream) {
  return eventdata::derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

eventdata::LabelSet label_set(const RunConfig& config) {
  return eventdata::LabelSet(config.data.events.shapes, config.data.events.colors);
}

namespace {

const std::vector<std::string> kAttributeWords{"small", "medium", "large", "at", "the",
                                               "top",   "middle", "bottom", "left", "center",
                                               "right"};

std::string size_word(int size_px, const eventdata::DatasetConfig& dc) {
  const int span = dc.max_size_px - dc.min_size_px + 1;
  const int bucket = (size_px - dc.min_size_px) * 3 / span;
  return std::array<const char*, 3>{"small", "medium", "large"}[std::clamp(bucket, 0, 2)];
}

std::string position_phrase(const eventdata::SceneSpec& s, std::size_t sensor) {
  const auto third = [&](int v) {
    return std::clamp(static_cast<int>(static_cast<std::size_t>(v) * 3 / sensor), 0, 2);
  };
  static const char* rows[] = {"top", "middle", "bottom"};
  static const char* cols[] = {"left", "center", "right"};
  return std::string("at the ") + rows[third(s.row)] + " " + cols[third(s.col)];
}

std::set<int> heldout_labels(const RunConfig& config, const eventdata::LabelSet& labels) {
  std::set<int> out;
  for (const auto& name : config.data.heldout) out.insert(labels.label_of_name(name));
  return out;
}

}  // namespace

eventdata::Vocabulary build_vocab(const RunConfig& config) {
  auto labels = label_set(config);
  std::vector<std::string> templ = config.data.stage0_templates;
  templ.push_back(config.eval.templ);
  if (config.data.attribute_captions) {
    std::string words;
    for (const auto& w : kAttributeWords) words += w + " ";
    templ.push_back(words);
  }
  return eventdata::Vocabulary::build(templ, labels.class_names());
}

Data generate_data(const RunConfig& config) {
  config.validate();
  Data d{label_set(config)};
  d.vocab = build_vocab(config);
  for (const auto& name : config.data.heldout) d.labels.label_of_name(name);

  auto s0 = config.data.events;
  s0.samples_per_class = config.data.stage0_samples_per_class;
  s0.seed = seed_for(config, SeedStream::Stage0Data);
  d.stage0 = eventdata::generate_dataset(s0);

  auto ev = config.data.events;
  ev.seed = seed_for(config, SeedStream::EventData);
  d.pairs = eventdata::generate_dataset(ev);

  std::vector<int> labels;
  for (const auto& s : d.pairs) labels.push_back(s.label);
  d.split = eventdata::split_dataset(labels, heldout_labels(config, d.labels),
                                     config.data.test_fraction, seed_for(config, SeedStream::Split));
  return d;
}

void write_data(const Data& data, const std::filesystem::path& dir) {
  eventdata::write_corpus(dir / "stage0", data.stage0, data.labels, data.vocab, nullptr);
  eventdata::write_corpus(dir / "pairs", data.pairs, data.labels, data.vocab, &data.split);
}

Data read_data(const RunConfig& config, const std::filesystem::path& dir) {
  CEIA_REQUIRE(std::filesystem::exists(dir / "pairs" / "labels.csv"),
               "no dataset at " + dir.string() + " (run gen-data first)");
  Data d{label_set(config)};
  auto s0 = eventdata::read_corpus(dir / "stage0", d.labels);
  auto pairs = eventdata::read_corpus(dir / "pairs", d.labels);
  d.vocab = pairs.vocab;
  CEIA_REQUIRE(d.vocab.fingerprint() == build_vocab(config).fingerprint(),
               "dataset vocabulary does not match the configuration");
  d.stage0 = std::move(s0.samples);
  d.pairs = std::move(pairs.samples);
  d.split = std::move(pairs.split);
  auto want = heldout_labels(config, d.labels);
  CEIA_REQUIRE(std::set<int>(d.split.heldout_class_ids.begin(), d.split.heldout_class_ids.end()) == want,
               "dataset held-out classes do not match the configuration");
  return d;
}

std::vector<std::vector<int>> stage0_captions(const RunConfig& config, const Data& data,
                                              const eventdata::Sample& s) {
  std::vector<std::vector<int>> out;
  const auto name = data.labels.class_name(s.label);
  for (const auto& t : config.data.stage0_templates) {
    out.push_back(eventdata::make_caption(name, t, data.vocab).tokens);
    if (config.data.attribute_captions) {
      const auto rich = size_word(s.scene.size_px, config.data.events) + " " + name;
      out.push_back(eventdata::make_caption(
                        rich, t + " " + position_phrase(s.scene, config.data.events.render.height),
                        data.vocab)
                        .tokens);
    }
  }
  return out;
}

std::vector<std::vector<double>> image_inputs(const Data& data, std::span<const int> ids) {
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(repr::normalize_image(data.pairs.at(id).image.pixels));
  return out;
}

std::vector<std::vector<double>> event_inputs(const RunConfig& config, const Data& data,
                                              std::span<const int> ids) {
  const std::size_t s = config.vit.image_size;
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (int id : ids)
    out.push_back(repr::normalize_for_encoder(
        repr::make_frame(data.pairs.at(id).events, s, s, config.frame), s, s));
  return out;
}

std::vector<int> labels_of(const Data& data, std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) out.push_back(data.pairs.at(id).label);
  return out;
}

align::Stage0Model new_stage0_model(const RunConfig& config, const Data& data) {
  encoders::Rng rng(seed_for(config, SeedStream::Stage0Init));
  auto tc = config.text;
  tc.vocab_size = data.vocab.size();
  tc.output_dim = config.vit.output_dim;
  align::Stage0Model m{encoders::VisionTransformer(config.vit, rng),
                       encoders::TextTransformer(tc, rng), align::Temperature()};
  return m;
}

align::Stage0Model run_stage0(const RunConfig& config, const Data& data,
                              const align::TrainHooks& hooks) {
  auto model = new_stage0_model(config, data);
  align::ImageTextPairs pairs;
  for (const auto& s : data.stage0) {
    pairs.images.push_back(repr::normalize_image(s.image.pixels));
    pairs.captions.push_back(stage0_captions(config, data, s));
    pairs.labels.push_back(s.label);
  }
  auto tc = config.stage0;
  tc.mode = align::Mode::Stage0;
  tc.seed = seed_for(config, SeedStream::Stage0Train);
  align::train_stage0(model.image, model.text, model.temp, pairs, tc, hooks);
  return model;
}

align::EventModel init_event_model(const RunConfig& config, const align::Stage0Model& stage0,
                                   align::Mode mode) {
  CEIA_REQUIRE(mode != align::Mode::Stage0, "stage-1 mode cannot be stage0");
  encoders::Rng rng(seed_for(config, SeedStream::LoraInit));
  align::EventModel m{encoders::VisionTransformer(), stage0.temp, mode};
  m.temp = align::Temperature(stage0.temp.tau(), false);
  if (mode == align::Mode::FullFinetune) {
    m.event = stage0.image.clone();
    m.event.set_trainable(true);
  } else {
    m.event = encoders::init_event_encoder_from_image(stage0.image, config.lora, rng);
  }
  return m;
}

align::EventModel run_stage1(const RunConfig& config, const Data& data,
                             const align::Stage0Model& stage0, align::Mode mode,
                             const align::TrainHooks& hooks, const std::vector<int>* train_ids) {
  auto model = init_event_model(config, stage0, mode);
  const auto& ids = train_ids ? *train_ids : data.split.train_ids;
  auto tc = config.stage1;
  tc.mode = mode;
  tc.seed = seed_for(config, SeedStream::Stage1Train);
  if (mode == align::Mode::FullFinetune) {
    const auto d = align::TrainConfig::defaults(mode);
    const auto base = align::TrainConfig::defaults(align::Mode::Ceia);
    // Keep the mode-specific optimiser defaults unless the config changed them.
    if (tc.peak_lr == base.peak_lr) tc.peak_lr = d.peak_lr;
    if (tc.weight_decay == base.weight_decay) tc.weight_decay = d.weight_decay;
  }
  auto events = event_inputs(config, data, ids);
  if (mode == align::Mode::Ceta) {
    std::vector<std::vector<int>> caps;
    for (int id : ids)
      caps.push_back(eventdata::make_caption(data.labels.class_name(data.pairs.at(id).label),
                                             config.eval.templ, data.vocab)
                         .tokens);
    align::train_ceta(model.event, stage0.text, events, caps, model.temp, tc, hooks);
  } else {
    align::train_ceia(model.event, stage0.image, events, image_inputs(data, ids), model.temp, tc,
                      hooks);
  }
  return model;
}

std::vector<int> heldout_test_ids(const Data& data) {
  std::set<int> held(data.split.heldout_class_ids.begin(), data.split.heldout_class_ids.end());
  std::vector<int> out;
  for (int id : data.split.test_ids)
    if (held.count(data.pairs.at(id).label)) out.push_back(id);
  return out;
}

tasks::TextClassifier make_classifier(const RunConfig& config, const Data& data,
                                      const align::Stage0Model& stage0) {
  return tasks::build_text_classifier(data.labels.class_names(), config.eval.templ, data.vocab,
                                      stage0.text);
}

namespace {

tasks::MetricsReport classify_report(const tasks::TextClassifier& clf, const g::Tensor& feats,
                                     const std::vector<int>& labels, const std::string& task,
                                     const std::string& mode) {
  auto probs = tasks::zero_shot_probs(feats, clf);
  const int k = static_cast<int>(clf.weights.dim(0));
  tasks::MetricsReport r;
  r.task = task;
  r.mode = mode;
  r.acc1 = tasks::topk_accuracy(probs, labels, 1);
  r.acc5 = tasks::topk_accuracy(probs, labels, std::min(5, k));
  r.n = labels.size();
  r.check();
  return r;
}

}  // namespace

tasks::MetricsReport eval_zeroshot(const RunConfig& config, const Data& data,
                                   const align::Stage0Model& stage0,
                                   const encoders::VisionTransformer& encoder,
                                   std::span<const int> ids, const std::string& mode) {
  CEIA_REQUIRE(!ids.empty(), "zero-shot: no evaluation samples");
  auto clf = make_classifier(config, data, stage0);
  auto feats = align::embed_inputs(encoder, event_inputs(config, data, ids));
  return classify_report(clf, feats, labels_of(data, ids), "zeroshot", mode);
}

tasks::MetricsReport eval_image_zeroshot(const RunConfig& config, const Data& data,
                                         const align::Stage0Model& stage0,
                                         std::span<const int> ids) {
  CEIA_REQUIRE(!ids.empty(), "zero-shot: no evaluation samples");
  auto clf = make_classifier(config, data, stage0);
  auto feats = align::embed_inputs(stage0.image, image_inputs(data, ids));
  return classify_report(clf, feats, labels_of(data, ids), "zeroshot-image", "stage0");
}

std::vector<tasks::MetricsReport> eval_fewshot(const RunConfig& config, const Data& data,
                                               const align::Stage0Model& stage0,
                                               const encoders::VisionTransformer& encoder,
                                               const std::string& mode) {
  auto clf = make_classifier(config, data, stage0);
  const auto& pool = data.split.test_ids;
  const auto pool_labels = labels_of(data, pool);
  std::vector<tasks::MetricsReport> out;
  for (int n : config.eval.fewshot_shots) {
    const auto picks = tasks::sample_support(pool_labels, data.labels.num_classes(), n,
                                             eventdata::derive_seed(seed_for(config, SeedStream::Eval),
                                                                    static_cast<std::uint64_t>(n)));
    std::vector<int> support_ids, eval_ids;
    std::set<int> chosen(picks.begin(), picks.end());
    for (std::size_t i = 0; i < pool.size(); ++i)
      (chosen.count(static_cast<int>(i)) ? support_ids : eval_ids).push_back(pool[i]);
    CEIA_REQUIRE(!eval_ids.empty(), "few-shot: no samples left for evaluation");
    auto adapted = encoder.clone();
    if (adapted.adapter_parameter_count() == 0) {
      encoders::Rng rng(seed_for(config, SeedStream::LoraInit));
      adapted.set_trainable(false);
      adapted.attach_lora(config.lora, rng);
    }
    tasks::FewShotConfig fc;
    fc.steps = config.eval.fewshot_steps;
    fc.lr = config.eval.fewshot_lr;
    fc.batch_size = config.stage1.batch_size;
    fc.seed = seed_for(config, SeedStream::Eval);
    tasks::few_shot_adapt(adapted, event_inputs(config, data, support_ids),
                          labels_of(data, support_ids), clf, fc);
    auto feats = align::embed_inputs(adapted, event_inputs(config, data, eval_ids));
    auto r = classify_report(clf, feats, labels_of(data, eval_ids),
                             "fewshot-" + std::to_string(n), mode);
    out.push_back(r);
  }
  return out;
}

std::string to_string(RetrievalDirection d) {
  switch (d) {
    case RetrievalDirection::EventToImage: return "event-image";
    case RetrievalDirection::ImageToEvent: return "image-event";
    case RetrievalDirection::EventToText: return "event-text";
  }
  return "?";
}

RetrievalDirection parse_direction(const std::string& name) {
  for (auto d : {RetrievalDirection::EventToImage, RetrievalDirection::ImageToEvent,
                 RetrievalDirection::EventToText})
    if (to_string(d) == name) return d;
  throw ValidationError("unknown retrieval direction '" + name +
                        "' (expected event-image, image-event, event-text)");
}

tasks::MetricsReport eval_retrieval(const RunConfig& config, const Data& data,
                                    const align::Stage0Model& stage0,
                                    const encoders::VisionTransformer& encoder,
                                    RetrievalDirection direction, const std::string& mode) {
  const auto& test = data.split.test_ids;
  CEIA_REQUIRE(static_cast<std::size_t>(config.eval.retrieval_gallery) <= test.size(),
               "retrieval: gallery of " + std::to_string(config.eval.retrieval_gallery) +
                   " exceeds the " + std::to_string(test.size()) + " test pairs");
  std::vector<int> ids(test.begin(), test.begin() + config.eval.retrieval_gallery);
  auto ev = align::embed_inputs(encoder, event_inputs(config, data, ids));
  std::vector<tasks::RankedResult> results;
  if (direction == RetrievalDirection::EventToText) {
    auto clf = make_classifier(config, data, stage0);
    const std::size_t d = ev.dim(1);
    const auto labels = labels_of(data, ids);
    for (std::size_t i = 0; i < ids.size(); ++i)
      results.push_back(tasks::retrieve(ev.values().subspan(i * d, d), clf.weights, labels[i],
                                        static_cast<int>(i)));
  } else {
    auto im = align::embed_inputs(stage0.image, image_inputs(data, ids));
    results = direction == RetrievalDirection::EventToImage ? tasks::retrieve_paired(ev, im)
                                                            : tasks::retrieve_paired(im, ev);
  }
  tasks::MetricsReport r;
  r.task = "retrieval-" + to_string(direction);
  r.mode = mode;
  for (int k : {1, 5, 10}) r.r_at[k] = tasks::recall_at_k(results, k);
  r.acc1 = r.r_at[1];
  r.acc5 = r.r_at[5];
  r.n = results.size();
  r.check();
  return r;
}

DaResult eval_da(const RunConfig& config, const Data& data, const align::Stage0Model& stage0,
                 const encoders::VisionTransformer& encoder, const std::string& mode,
                 int untrained_heads) {
  std::vector<std::vector<double>> train_images;
  std::vector<int> train_labels;
  for (const auto& s : data.stage0) {
    train_images.push_back(repr::normalize_image(s.image.pixels));
    train_labels.push_back(s.label);
  }
  tasks::HeadConfig hc;
  hc.num_classes = data.labels.num_classes();
  hc.hidden = config.eval.da_hidden;
  hc.steps = config.eval.da_steps;
  hc.lr = config.eval.da_lr;
  hc.seed = seed_for(config, SeedStream::Eval);
  auto head = tasks::da_train_head(align::embed_inputs(stage0.image, train_images), train_labels, hc);

  const auto& test = data.split.test_ids;
  const auto labels = labels_of(data, test);
  auto ev = align::embed_inputs(encoder, event_inputs(config, data, test));
  auto im = align::embed_inputs(stage0.image, image_inputs(data, test));

  DaResult out;
  out.event_report.task = "da";
  out.event_report.mode = mode;
  out.event_report.acc1 = tasks::accuracy(tasks::da_predict(ev, head), labels);
  out.event_report.acc5 = out.event_report.acc1;
  {
    g::NoGradGuard no_grad;
    auto logits = head.logits(ev);
    std::vector<std::vector<double>> rows;
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
      auto row = logits.values().subspan(i * k, k);
      rows.emplace_back(row.begin(), row.end());
    }
    out.event_report.acc5 = tasks::topk_accuracy(rows, labels, std::min<int>(5, static_cast<int>(k)));
  }
  out.event_report.n = labels.size();
  out.event_report.check();
  out.image_acc = tasks::accuracy(tasks::da_predict(im, head), labels);
  double sum = 0;
  for (int h = 0; h < untrained_heads; ++h) {
    auto rc = hc;
    rc.seed = eventdata::derive_seed(hc.seed, static_cast<std::uint64_t>(h + 1));
    sum += tasks::accuracy(tasks::da_predict(ev, tasks::TaskHead(ev.dim(1), rc, false)), labels);
  }
  out.untrained_acc = untrained_heads > 0 ? sum / untrained_heads : 0.0;
  return out;
}

}  // namespace ceia::pipeline
