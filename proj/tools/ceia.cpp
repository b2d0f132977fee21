#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ceia/error.hpp"
#include "ceia/gradnet/tensor.hpp"
#include "ceia/pipeline/experiment.hpp"
#include "ceia/pipeline/gradsuite.hpp"

namespace fs = std::filesystem;
using namespace ceia;
using namespace ceia::pipeline;
using nlohmann::ordered_json;

namespace {

struct Globals {
  std::string run_dir = "run";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

fs::path snapshot_path(const Globals& g) { return fs::path(g.run_dir) / "config.snapshot"; }
fs::path data_dir(const Globals& g) { return fs::path(g.run_dir) / "data"; }
fs::path ckpt_dir(const Globals& g) { return fs::path(g.run_dir) / "checkpoints"; }
fs::path stage0_ckpt(const Globals& g) { return ckpt_dir(g) / "stage0.ckpt"; }

// --config, else the run's snapshot, else defaults; then --seed and --set.
RunConfig resolve_config(const Globals& g) {
  RunConfig c;
  if (!g.config_path.empty())
    c = load_config(g.config_path);
  else if (fs::exists(snapshot_path(g)))
    c = load_config(snapshot_path(g));
  if (g.seed) c.seed = *g.seed;
  for (const auto& o : g.overrides) set_option(c, o);
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  CEIA_REQUIRE(out, "cannot write " + path.string());
  out << text;
  CEIA_REQUIRE(out.good(), "write failed: " + path.string());
}

void save_ckpt(const encoders::Checkpoint& ck, const fs::path& path) {
  fs::create_directories(path.parent_path());
  encoders::save_checkpoint(ck, path);
}

void append_log(const Globals& g, const std::string& stage, const align::StepLog& l) {
  auto j = ordered_json::parse(align::to_json(l));
  ordered_json line;
  line["stage"] = stage;
  for (auto& [k, v] : j.items()) line[k] = v;
  std::ofstream out(fs::path(g.run_dir) / "logs.jsonl", std::ios::app);
  CEIA_REQUIRE(out, "cannot append to logs.jsonl");
  out << line.dump() << "\n";
}

align::TrainHooks logging_hooks(const Globals& g, const std::string& stage, bool quiet) {
  align::TrainHooks h;
  h.on_step = [&g, stage, quiet](const align::StepLog& l) {
    append_log(g, stage, l);
    if (!quiet && l.step % 25 == 0)
      std::printf("%s step %lld loss %.4f lr %.3g tau %.4f\n", stage.c_str(),
                  static_cast<long long>(l.step), l.loss, l.lr, l.tau);
  };
  return h;
}

void emit_report(const Globals& g, const tasks::MetricsReport& r, const ordered_json& extra = {}) {
  r.check();
  auto j = ordered_json::parse(r.to_json());
  for (auto& [k, v] : extra.items()) j[k] = v;
  const auto text = j.dump();
  write_text(fs::path(g.run_dir) / "metrics" / (r.task + "-" + r.mode + ".json"), text + "\n");
  std::cout << text << "\n";
}

align::Stage0Model load_stage0(const Globals& g, const Data& data) {
  CEIA_REQUIRE(fs::exists(stage0_ckpt(g)),
               "missing stage-0 checkpoint " + stage0_ckpt(g).string() + " (run pretrain-clip first)");
  auto ck = encoders::load_checkpoint(stage0_ckpt(g));
  align::require_vocab(ck, data.vocab.fingerprint());
  return align::stage0_from_checkpoint(ck);
}

struct Evaluated {
  encoders::VisionTransformer encoder;
  std::string mode;  // checkpoint stem, or the baseline name
};

Evaluated load_evaluated(const Globals& g, const Data& data, const align::Stage0Model& s0,
                         const std::string& checkpoint, const std::string& baseline) {
  if (!baseline.empty()) {
    CEIA_REQUIRE(baseline == "eventclip", "unknown baseline '" + baseline + "' (expected eventclip)");
    return {s0.image, "eventclip"};
  }
  const fs::path path = checkpoint.empty() ? ckpt_dir(g) / "ceia.ckpt" : fs::path(checkpoint);
  CEIA_REQUIRE(fs::exists(path), "missing checkpoint " + path.string());
  auto ck = encoders::load_checkpoint(path);
  align::require_vocab(ck, data.vocab.fingerprint());
  auto m = align::event_from_checkpoint(ck);
  return {m.event, path.stem().string()};
}

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      CEIA_REQUIRE(used == item.size() && v >= 0, "bad id '" + item + "'");
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ValidationError("bad id '" + item + "'");
    }
  }
  return out;
}

int cmd_gen_data(const Globals& g) {
  auto cfg = resolve_config(g);
  auto data = generate_data(cfg);
  fs::create_directories(g.run_dir);
  write_text(snapshot_path(g), to_ini(cfg));
  write_data(data, data_dir(g));
  read_data(cfg, data_dir(g));  // reload scan of every written file
  std::printf("wrote %zu stage-0 samples and %zu event/image pairs (%zu train, %zu test) to %s\n",
              data.stage0.size(), data.pairs.size(), data.split.train_ids.size(),
              data.split.test_ids.size(), data_dir(g).string().c_str());
  return 0;
}

int cmd_pretrain(const Globals& g, bool quiet) {
  auto cfg = resolve_config(g);
  auto data = read_data(cfg, data_dir(g));
  auto model = run_stage0(cfg, data, logging_hooks(g, "stage0", quiet));
  save_ckpt(align::to_checkpoint(model, data.vocab.fingerprint()), stage0_ckpt(g));
  std::vector<int> heldin;
  const auto held = heldout_test_ids(data);
  for (int id : data.split.test_ids)
    if (std::find(held.begin(), held.end(), id) == held.end()) heldin.push_back(id);
  auto r = eval_image_zeroshot(cfg, data, model, heldin);
  r.mode = "stage0-heldin";
  emit_report(g, r, {{"tau", model.temp.tau()}});
  return 0;
}

struct TrainOpts {
  bool init_only = false;
  int train_limit = 0;
  bool quiet = false;
};

int cmd_train(const Globals& g, align::Mode mode, const TrainOpts& o) {
  auto cfg = resolve_config(g);
  auto data = read_data(cfg, data_dir(g));
  auto s0 = load_stage0(g, data);
  std::vector<int> ids = data.split.train_ids;
  if (o.train_limit > 0) {
    CEIA_REQUIRE(static_cast<std::size_t>(o.train_limit) <= ids.size(),
                 "--train-limit exceeds the " + std::to_string(ids.size()) + " training pairs");
    ids.resize(static_cast<std::size_t>(o.train_limit));
  }
  const auto name = align::to_string(mode);
  align::EventModel model;
  if (o.init_only) {
    model = init_event_model(cfg, s0, mode);
  } else {
    auto probe = init_event_model(cfg, s0, mode);
    std::size_t trainable = 0;
    for (const auto& p : probe.event.trainable_parameters()) trainable += gradnet::numel(p.tensor.shape());
    if (mode == align::Mode::FullFinetune)
      std::printf("trainable parameters: %zu (full finetune)\n", trainable);
    else
      std::printf("trainable parameters: %zu (LoRA r=%d alpha=%g on %zu blocks)\n", trainable,
                  cfg.lora.rank, cfg.lora.alpha, cfg.vit.depth);
    model = run_stage1(cfg, data, s0, mode, logging_hooks(g, name, o.quiet), &ids);
  }
  const auto path = ckpt_dir(g) / (name + (o.init_only ? "-init" : "") + ".ckpt");
  save_ckpt(align::to_checkpoint(model, data.vocab.fingerprint()), path);
  std::printf("saved %s\n", path.string().c_str());
  return 0;
}

struct EvalOpts {
  std::string checkpoint;
  std::string baseline;
  std::string classes = "all";
  std::string direction = "event-image";
  std::vector<int> shots;
};

int cmd_eval(const Globals& g, const std::string& what, const EvalOpts& o) {
  auto cfg = resolve_config(g);
  if (!o.shots.empty()) cfg.eval.fewshot_shots = o.shots;
  cfg.validate();
  auto data = read_data(cfg, data_dir(g));
  auto s0 = load_stage0(g, data);
  auto ev = load_evaluated(g, data, s0, o.checkpoint, o.baseline);
  if (what == "zeroshot") {
    std::vector<int> ids;
    const auto held = heldout_test_ids(data);
    if (o.classes == "all") {
      ids = data.split.test_ids;
    } else if (o.classes == "heldout") {
      ids = held;
    } else if (o.classes == "heldin") {
      for (int id : data.split.test_ids)
        if (std::find(held.begin(), held.end(), id) == held.end()) ids.push_back(id);
    } else {
      throw ValidationError("--classes must be all, heldout or heldin");
    }
    auto r = eval_zeroshot(cfg, data, s0, ev.encoder, ids, ev.mode);
    if (o.classes != "all") r.task += "-" + o.classes;
    emit_report(g, r);
  } else if (what == "fewshot") {
    for (const auto& r : eval_fewshot(cfg, data, s0, ev.encoder, ev.mode)) emit_report(g, r);
  } else if (what == "retrieval") {
    emit_report(g, eval_retrieval(cfg, data, s0, ev.encoder, parse_direction(o.direction), ev.mode));
  } else {
    auto r = eval_da(cfg, data, s0, ev.encoder, ev.mode);
    emit_report(g, r.event_report, {{"image_acc", r.image_acc}, {"untrained_acc", r.untrained_acc}});
  }
  return 0;
}

int cmd_gradcheck(const std::string& corrupt, int trials) {
  auto results = run_gradient_suite(corrupt, trials);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-18s max_rel_error %.3e  tol %.0e  %s\n", r.op.c_str(), r.max_rel_error,
                r.tolerance, r.passed() ? "ok" : "FAILED");
    ok = ok && r.passed();
  }
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
  return ok ? 0 : 1;
}

int cmd_export_frames(const Globals& g, const std::string& ids_text, const std::string& out_dir) {
  auto cfg = resolve_config(g);
  auto data = read_data(cfg, data_dir(g));
  const fs::path out = out_dir.empty() ? fs::path(g.run_dir) / "frames" : fs::path(out_dir);
  fs::create_directories(out);
  const std::size_t s = cfg.vit.image_size;
  for (int id : parse_ids(ids_text)) {
    CEIA_REQUIRE(static_cast<std::size_t>(id) < data.pairs.size(), "no pair " + std::to_string(id));
    const auto& p = data.pairs[static_cast<std::size_t>(id)];
    const auto path = out / (std::to_string(id) + "-" + repr::to_string(cfg.frame.kind) + ".ppm");
    repr::save_frame_ppm(repr::make_frame(p.events, s, s, cfg.frame), path);
    std::printf("%s\n", path.string().c_str());
  }
  return 0;
}

int cmd_ablate_repr(const Globals& g, bool quiet) {
  auto base = resolve_config(g);
  auto data = read_data(base, data_dir(g));
  auto s0 = load_stage0(g, data);
  ordered_json table = ordered_json::array();
  for (auto kind : {repr::FrameKind::RedBlue, repr::FrameKind::Gray, repr::FrameKind::TimeSurface,
                    repr::FrameKind::Voxel}) {
    auto cfg = base;
    cfg.frame.kind = kind;
    const auto name = repr::to_string(kind);
    auto model = run_stage1(cfg, data, s0, align::Mode::Ceia, logging_hooks(g, "ceia-" + name, quiet));
    auto zs = eval_zeroshot(cfg, data, s0, model.event, data.split.test_ids, "ceia-" + name);
    auto zb = eval_zeroshot(cfg, data, s0, s0.image, data.split.test_ids, "eventclip-" + name);
    auto rr = eval_retrieval(cfg, data, s0, model.event, RetrievalDirection::EventToImage,
                             "ceia-" + name);
    zs.check();
    rr.check();
    table.push_back({{"repr", name},
                     {"zeroshot_acc1", zs.acc1},
                     {"zeroshot_acc5", zs.acc5},
                     {"baseline_acc1", zb.acc1},
                     {"retrieval_r1", rr.r_at.at(1)},
                     {"retrieval_r10", rr.r_at.at(10)}});
    std::printf("%-13s zero-shot acc1 %.4f (baseline %.4f)  R@1 %.4f\n", name.c_str(), zs.acc1,
                zb.acc1, rr.r_at.at(1));
  }
  write_text(fs::path(g.run_dir) / "metrics" / "ablation-repr.json", table.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  gradnet::tune_allocator();
  CLI::App app{"Event-image alignment experiments on synthetic event data"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Global seed (overrides the config)");
  app.add_option("--config", g.config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--run-dir", g.run_dir, "Run directory")->capture_default_str();
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print results");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic image/event corpora");
  auto* pre = app.add_subcommand("pretrain-clip", "Stage 0: train the image-text stand-in");
  TrainOpts topt;
  std::vector<std::pair<CLI::App*, align::Mode>> trains{
      {app.add_subcommand("train-ceia", "Align the event encoder to images with LoRA"), align::Mode::Ceia},
      {app.add_subcommand("train-ceta", "Align the event encoder to text with LoRA"), align::Mode::Ceta},
      {app.add_subcommand("train-full", "Align to images by finetuning every weight"),
       align::Mode::FullFinetune}};
  for (auto& [sub, mode] : trains) {
    sub->add_flag("--init-only", topt.init_only, "Save the initial stage-1 checkpoint without training");
    sub->add_option("--train-limit", topt.train_limit, "Use only the first N training pairs");
  }
  EvalOpts eopt;
  std::vector<std::pair<CLI::App*, std::string>> evals{
      {app.add_subcommand("eval-zeroshot", "Zero-shot event classification"), "zeroshot"},
      {app.add_subcommand("eval-fewshot", "Few-shot LoRA adaptation, one report per N"), "fewshot"},
      {app.add_subcommand("eval-retrieval", "Retrieval with R@1/5/10"), "retrieval"},
      {app.add_subcommand("eval-da", "Domain adaptation: image-trained head on event features"), "da"}};
  for (auto& [sub, what] : evals) {
    sub->add_option("--checkpoint", eopt.checkpoint, "Event checkpoint (default checkpoints/ceia.ckpt)");
    sub->add_option("--baseline", eopt.baseline, "Frozen-encoder arm instead of a checkpoint")
        ->check(CLI::IsMember({"eventclip"}));
  }
  evals[0].first->add_option("--classes", eopt.classes, "all, heldout or heldin")
      ->check(CLI::IsMember({"all", "heldout", "heldin"}));
  evals[1].first->add_option("--shots", eopt.shots, "Shot counts")->delimiter(',');
  evals[2].first->add_option("--direction", eopt.direction, "event-image, image-event or event-text")
      ->check(CLI::IsMember({"event-image", "image-event", "event-text"}));

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  std::string corrupt;
  int trials = 5;
  grad->add_option("--corrupt", corrupt, "Perturb this op's gradient (test fixture)");
  grad->add_option("--trials", trials, "Random points per op")->check(CLI::PositiveNumber);

  auto* frames = app.add_subcommand("export-frames", "Write event frames of given pairs as PPM");
  std::string ids = "0", out_dir;
  frames->add_option("--ids", ids, "Comma-separated pair ids");
  frames->add_option("--out", out_dir, "Output directory (default <run-dir>/frames)");

  auto* ablate = app.add_subcommand("ablate-repr", "CEIA with each event representation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) return cmd_gen_data(g);
    if (*pre) return cmd_pretrain(g, quiet);
    for (auto& [sub, mode] : trains) {
      topt.quiet = quiet;
      if (*sub) return cmd_train(g, mode, topt);
    }
    for (auto& [sub, what] : evals)
      if (*sub) return cmd_eval(g, what, eopt);
    if (*grad) return cmd_gradcheck(corrupt, trials);
    if (*frames) return cmd_export_frames(g, ids, out_dir);
    if (*ablate) return cmd_ablate_repr(g, quiet);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
