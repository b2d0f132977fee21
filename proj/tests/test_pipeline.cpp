#include <doctest.h>

#include <filesystem>
#include <set>

#include "ceia/error.hpp"
#include "ceia/pipeline/experiment.hpp"
#include "ceia/pipeline/gradsuite.hpp"

using namespace ceia::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig tiny() {
  RunConfig c;
  c.data.events.samples_per_class = 6;
  c.data.stage0_samples_per_class = 4;
  c.vit.patch_size = 16;
  c.vit.embed_dim = 16;
  c.vit.depth = 1;
  c.vit.heads = 2;
  c.vit.output_dim = 8;
  c.text.embed_dim = 16;
  c.text.depth = 1;
  c.text.heads = 2;
  c.lora.rank = 2;
  c.stage0.batch_size = 8;
  c.stage0.total_steps = 3;
  c.stage0.warmup_steps = 1;
  c.stage1.batch_size = 8;
  c.stage1.total_steps = 3;
  c.stage1.warmup_steps = 1;
  c.eval.retrieval_gallery = 8;
  c.eval.fewshot_shots = {1};
  c.eval.fewshot_steps = 2;
  c.eval.da_steps = 5;
  return c;
}

}  // namespace

TEST_CASE("config round trips through INI") {
  RunConfig c;
  c.seed = 42;
  c.vit.patch_size = 8;
  c.vit.pool = ceia::encoders::Pool::Mean;
  c.stage1.peak_lr = 1.25e-4;
  c.data.heldout = {"blue circle"};
  c.eval.da_hidden = {32, 16};
  c.frame.kind = ceia::repr::FrameKind::Voxel;
  auto back = parse_config(to_ini(c));
  CHECK(to_ini(back) == to_ini(c));
  CHECK(back.seed == 42);
  CHECK(back.vit.pool == ceia::encoders::Pool::Mean);
  CHECK(back.stage1.peak_lr == 1.25e-4);
  CHECK(back.data.stage0_templates == c.data.stage0_templates);
  CHECK(back.eval.da_hidden == std::vector<std::size_t>{32, 16});
}

TEST_CASE("config defaults") {
  RunConfig c;
  CHECK(c.vit.patch_size == 4);
  CHECK(c.lora.rank == 16);
  CHECK(c.lora.alpha == 32);
  CHECK(c.stage1.peak_lr == 5e-4);
  CHECK(c.stage1.batch_size == 128);
  CHECK_FALSE(c.stage1.train_tau);
  CHECK(c.stage0.train_tau);
  CHECK_NOTHROW(c.validate());
  CHECK(parse_config("").seed == c.seed);
}

TEST_CASE("config errors and overrides") {
  CHECK_THROWS_AS(parse_config("[vit]\nbogus = 3\n"), ceia::ValidationError);
  CHECK_THROWS_AS(parse_config("[nosuch]\nseed = 3\n"), ceia::ValidationError);
  CHECK_THROWS_AS(parse_config("[vit]\npatch_size = abc\n"), ceia::ValidationError);
  CHECK_THROWS_AS(parse_config("[vit]\npatch_size = 5\n"), ceia::ValidationError);
  CHECK_THROWS_AS(parse_config("[lora]\ntargets = q,z\n"), ceia::ValidationError);
  CHECK_THROWS_AS(parse_config("[stage1]\ntrain_tau = maybe\n"), ceia::ValidationError);
  RunConfig c;
  set_option(c, "stage1.total_steps=77");
  set_option(c, "data.sensor_size=48");
  CHECK(c.stage1.total_steps == 77);
  CHECK(c.data.events.render.width == 48);
  CHECK_THROWS_AS(c.validate(), ceia::ValidationError);
  set_option(c, "vit.image_size=48");
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(set_option(c, "stage1.total_steps"), ceia::ValidationError);
  CHECK_THROWS_AS(set_option(c, "nodot=1"), ceia::ValidationError);
}

TEST_CASE("data generation, split and disk round trip") {
  auto cfg = tiny();
  auto d = generate_data(cfg);
  CHECK(d.pairs.size() == 48);
  CHECK(d.stage0.size() == 32);
  CHECK(d.split.train_ids.size() + d.split.test_ids.size() == 48);
  const int yc = d.labels.label_of_name("yellow cross");
  for (int id : d.split.train_ids) CHECK(d.pairs[id].label != yc);
  CHECK(heldout_test_ids(d).size() == 12);
  auto caps = stage0_captions(cfg, d, d.stage0[0]);
  CHECK(caps.size() == 2 * cfg.data.stage0_templates.size());

  auto dir = fs::temp_directory_path() / "ceia_pipeline_data";
  fs::remove_all(dir);
  write_data(d, dir);
  auto back = read_data(cfg, dir);
  CHECK(back.split.test_ids == d.split.test_ids);
  CHECK(back.pairs.size() == d.pairs.size());
  CHECK(back.vocab.fingerprint() == d.vocab.fingerprint());
  auto other = cfg;
  other.data.heldout = {"blue circle"};
  CHECK_THROWS_AS(read_data(other, dir), ceia::ValidationError);
  CHECK_THROWS_AS(read_data(cfg, dir / "missing"), ceia::ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("seed streams are distinct and stable") {
  RunConfig c;
  std::set<std::uint64_t> seen;
  for (auto s : {SeedStream::Stage0Data, SeedStream::EventData, SeedStream::Split,
                 SeedStream::Stage0Init, SeedStream::Stage0Train, SeedStream::LoraInit,
                 SeedStream::Stage1Train, SeedStream::Eval})
    seen.insert(seed_for(c, s));
  CHECK(seen.size() == 8);
  auto c2 = c;
  CHECK(seed_for(c2, SeedStream::Split) == seed_for(c, SeedStream::Split));
  c2.seed = 2;
  CHECK(seed_for(c2, SeedStream::Split) != seed_for(c, SeedStream::Split));
}

TEST_CASE("end to end on a tiny run") {
  auto cfg = tiny();
  auto d = generate_data(cfg);
  auto s0 = run_stage0(cfg, d);
  CHECK(s0.image.trainable_parameters().empty());
  auto m = run_stage1(cfg, d, s0, ceia::align::Mode::Ceia);
  CHECK(m.event.adapter_parameter_count() > 0);
  CHECK_FALSE(m.temp.trainable());
  CHECK(m.temp.tau() == doctest::Approx(s0.temp.tau()).epsilon(1e-12));

  auto zs = eval_zeroshot(cfg, d, s0, m.event, d.split.test_ids, "ceia");
  CHECK(zs.n == d.split.test_ids.size());
  CHECK_NOTHROW(zs.check());
  for (auto dir : {RetrievalDirection::EventToImage, RetrievalDirection::ImageToEvent,
                   RetrievalDirection::EventToText}) {
    auto r = eval_retrieval(cfg, d, s0, m.event, dir, "ceia");
    CHECK(r.n == 8);
    CHECK(parse_direction(to_string(dir)) == dir);
  }
  auto fs_reports = eval_fewshot(cfg, d, s0, m.event, "ceia");
  REQUIRE(fs_reports.size() == 1);
  CHECK(fs_reports[0].task == "fewshot-1");
  auto da = eval_da(cfg, d, s0, m.event, "ceia", 4);
  CHECK(da.event_report.acc1 <= da.event_report.acc5);

  auto big = cfg;
  big.eval.retrieval_gallery = 1000;
  CHECK_THROWS_AS(eval_retrieval(big, d, s0, m.event, RetrievalDirection::EventToImage, "x"),
                  ceia::ValidationError);
  CHECK_THROWS_AS(parse_direction("sideways"), ceia::ValidationError);
  CHECK_THROWS_AS(init_event_model(cfg, s0, ceia::align::Mode::Stage0), ceia::ValidationError);

  auto ceta = run_stage1(cfg, d, s0, ceia::align::Mode::Ceta);
  CHECK(ceta.mode == ceia::align::Mode::Ceta);
  auto full = run_stage1(cfg, d, s0, ceia::align::Mode::FullFinetune);
  CHECK(full.event.adapter_parameter_count() == 0);
}

TEST_CASE("gradient suite passes and flags a corrupted op") {
  auto clean = run_gradient_suite("", 2);
  CHECK(clean.size() == gradient_suite_ops().size());
  for (const auto& r : clean) {
    INFO(r.op << " " << r.max_rel_error);
    CHECK(r.passed());
  }
  auto bad = run_gradient_suite("softmax", 1);
  for (const auto& r : bad) CHECK(r.passed() == (r.op != "softmax"));
  CHECK_THROWS_AS(run_gradient_suite("nosuch"), ceia::ValidationError);
}
