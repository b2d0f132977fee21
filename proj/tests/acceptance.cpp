#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ceia/align/contrastive.hpp"
#include "ceia/error.hpp"
#include "ceia/gradnet/ops.hpp"
#include "ceia/pipeline/experiment.hpp"
#include "ceia/pipeline/gradsuite.hpp"

using namespace ceia;
using namespace ceia::pipeline;
namespace g = ceia::gradnet;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ordered_json g_report = ordered_json::object();
int g_failed = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  g_report[std::to_string(id)] = {{"name", name}, {"pass", pass}, {"detail", detail}};
  if (!pass) ++g_failed;
}

void progress(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += fmt(i ? ", %.3f" : "%.3f", v[i]);
  return s + "]";
}

g::Tensor randn(g::Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(g::numel(shape));
  for (auto& x : v) x = n(rng);
  return g::Tensor::from(std::move(shape), std::move(v));
}

std::vector<double> unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      v[i * d + j] = nd(rng);
      s += v[i * d + j] * v[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] /= std::sqrt(s);
  }
  return v;
}

// Every report seen during the run, for the monotonicity half of criterion 4.
std::vector<tasks::MetricsReport> g_reports;
tasks::MetricsReport keep(tasks::MetricsReport r) {
  g_reports.push_back(r);
  return r;
}

// 1 -------------------------------------------------------------------------
void criterion_gradients() {
  const auto t0 = Clock::now();
  auto results = run_gradient_suite("", 5);
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0;
  double worst_p = 0, worst_c = 0;
  std::string failed;
  for (const auto& r : results) {
    ok = ok && r.passed();
    if (!r.passed()) failed += " " + r.op;
    (r.op == "encoder_2block" ? worst_c : worst_p) = std::max(
        r.op == "encoder_2block" ? worst_c : worst_p, r.max_rel_error);
  }
  verdict(1, "gradient suite", ok,
          fmt("%zu checks, worst primitive %.2e (< 1e-4), 2-block encoder %.2e (< 1e-3), %.1fs",
              results.size(), worst_p, worst_c, secs) +
              (failed.empty() ? "" : ", failed:" + failed));
}

// 2 -------------------------------------------------------------------------
void criterion_lora(const RunConfig& cfg) {
  encoders::Rng rng(7);
  encoders::VisionTransformer base(cfg.vit, rng);
  base.set_trainable(false);
  encoders::LoraConfig lc;  // r=16, alpha=32, {q, v}
  auto event = encoders::init_event_encoder_from_image(base, lc, rng);

  std::mt19937_64 xr(11);
  const auto s = cfg.vit.image_size;
  bool identical = true;
  for (int i = 0; i < 4; ++i) {
    auto x = randn({8, s, s, 3}, xr);
    auto a = base.encode(x), b = event.encode(x);
    identical = identical && std::equal(a.values().begin(), a.values().end(), b.values().begin());
  }

  // Train-like state: random B so the adapters actually move the output.
  for (auto& blk : event.blocks())
    for (const auto& name : lc.targets) {
      auto& l = blk.linear(name);
      l.set_adapter(l.lora_a(), randn(l.lora_b().shape(), xr, 0.05), l.alpha());
    }
  auto merged = event.merged();
  double worst = 0;
  bool moved = false;
  for (int i = 0; i < 100; ++i) {
    auto x = randn({1, s, s, 3}, xr);
    auto a = event.encode(x), m = merged.encode(x), b = base.encode(x);
    double num = 0, den = 0, shift = 0;
    for (std::size_t j = 0; j < a.values().size(); ++j) {
      num += std::pow(a.values()[j] - m.values()[j], 2);
      den += std::pow(a.values()[j], 2);
      shift += std::pow(a.values()[j] - b.values()[j], 2);
    }
    worst = std::max(worst, std::sqrt(num / den));
    moved = moved || shift > 1e-12;
  }
  const bool count_ok = event.adapter_parameter_count() == encoders::expected_adapter_count(cfg.vit, lc);
  verdict(2, "LoRA identity and merge", identical && worst < 1e-5 && moved && count_ok,
          fmt("zero-init bit-equal: %s; merged vs adapted worst rel err %.2e over 100 inputs "
              "(r=%d, alpha=%g, {q,v}, %zu adapter params)",
              identical ? "yes" : "no", worst, lc.rank, lc.alpha, event.adapter_parameter_count()));
}

// 3 -------------------------------------------------------------------------
// L = -1/N sum_i log( exp(s_ii / tau) / sum_j exp(s_ij / tau) ), plain loops.
double brute_info_nce(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                      std::size_t d, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(n);
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += a[i * d + k] * b[j * d + k];
      z[j] = dot / tau;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double den = 0;
    for (double v : z) den += std::exp(v - m);
    total += -(z[i] - m - std::log(den));
  }
  return total / static_cast<double>(n);
}

void criterion_loss() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> nd(1, 8), dd(2, 16);
  std::uniform_real_distribution<double> td(0.02, 1.0);
  double worst = 0, worst_sym = 0;
  bool n1_zero = true;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = nd(rng), d = dd(rng);
    const double tau = td(rng);
    auto a = unit_rows(n, d, rng), b = unit_rows(n, d, rng);
    const auto ta = g::Tensor::from({n, d}, a), tb = g::Tensor::from({n, d}, b);
    align::Temperature temp(tau);
    const double got = align::info_nce(ta, tb, temp).item();
    worst = std::max(worst, std::abs(got - brute_info_nce(a, b, n, d, temp.tau())));
    const double sym = align::symmetric_loss(ta, tb, temp).item();
    const double want = brute_info_nce(a, b, n, d, temp.tau()) + brute_info_nce(b, a, n, d, temp.tau());
    worst_sym = std::max(worst_sym, std::abs(sym - want));
    const double self = align::symmetric_loss(ta, ta, temp).item();
    worst_sym = std::max(worst_sym, std::abs(self - 2 * align::info_nce(ta, ta, temp).item()));
    if (n == 1) n1_zero = n1_zero && got == 0.0;
  }
  for (int t = 0; t < 10; ++t) {
    const auto d = dd(rng);
    auto a = g::Tensor::from({1, d}, unit_rows(1, d, rng));
    auto b = g::Tensor::from({1, d}, unit_rows(1, d, rng));
    n1_zero = n1_zero && align::info_nce(a, b, align::Temperature(td(rng))).item() == 0.0;
  }
  verdict(3, "InfoNCE oracles", worst < 1e-10 && worst_sym < 1e-10 && n1_zero,
          fmt("200 random batches N<=8: max |info_nce - brute| %.1e, symmetric %.1e; N=1 gives 0: %s",
              worst, worst_sym, n1_zero ? "yes" : "no"));
}

// 4 -------------------------------------------------------------------------
// Full sort of every row, then a scan of the first k entries.
double oracle_topk(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels, int k) {
  int hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<int> idx(rows[i].size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return rows[i][a] != rows[i][b] ? rows[i][a] > rows[i][b] : a < b;
    });
    for (int j = 0; j < k && j < static_cast<int>(idx.size()); ++j)
      if (idx[j] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

void criterion_metrics_oracles(int& mismatches, int& instances) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> nd(1, 12), kd(2, 9), vd(0, 3);
  for (int t = 0; t < 100; ++t, ++instances) {
    const int n = nd(rng), k = kd(rng);
    std::vector<std::vector<double>> rows(n, std::vector<double>(k));
    std::vector<int> labels(n);
    for (auto& r : rows)
      for (auto& v : r) v = vd(rng) * 0.25;  // coarse values force ties
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, k - 1)(rng);
    for (int kk = 1; kk <= k; ++kk)
      if (tasks::topk_accuracy(rows, labels, kk) != oracle_topk(rows, labels, kk)) ++mismatches;

    // Retrieval: rank of the paired item by brute-force counting.
    const std::size_t q = static_cast<std::size_t>(nd(rng)), d = 4;
    std::vector<double> qa(q * d), ga(q * d);
    for (auto& v : qa) v = vd(rng) * 0.5;
    for (auto& v : ga) v = vd(rng) * 0.5;
    auto res = tasks::retrieve_paired(g::Tensor::from({q, d}, qa), g::Tensor::from({q, d}, ga));
    for (int kk : {1, 2, 5, 10}) {
      int hits = 0;
      for (std::size_t i = 0; i < q; ++i) {
        auto score = [&](std::size_t j) {
          double s = 0;
          for (std::size_t c = 0; c < d; ++c) s += qa[i * d + c] * ga[j * d + c];
          return s;
        };
        int ahead = 0;
        for (std::size_t j = 0; j < q; ++j)
          if (score(j) > score(i) || (score(j) == score(i) && j < i)) ++ahead;
        if (ahead < kk) ++hits;
      }
      if (tasks::recall_at_k(res, kk) != static_cast<double>(hits) / static_cast<double>(q)) ++mismatches;
    }
  }
}

void criterion_metrics(int mismatches, int instances) {
  int bad = 0;
  for (const auto& r : g_reports) {
    bool ok = r.acc1 <= r.acc5;
    if (r.r_at.count(1) && r.r_at.count(5)) ok = ok && r.r_at.at(1) <= r.r_at.at(5);
    if (r.r_at.count(5) && r.r_at.count(10)) ok = ok && r.r_at.at(5) <= r.r_at.at(10);
    if (!ok) ++bad;
  }
  verdict(4, "metric oracles", mismatches == 0 && bad == 0,
          fmt("%d random instances, %d mismatches vs exhaustive oracles; %zu reports, %d violate "
              "Acc1<=Acc5 or R@1<=R@5<=R@10",
              instances, mismatches, g_reports.size(), bad));
}

// 12 ------------------------------------------------------------------------
std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_repro(const fs::path& scratch) {
  RunConfig c;
  c.data.events.samples_per_class = 40;
  c.data.stage0_samples_per_class = 30;
  c.vit.patch_size = 8;
  c.vit.embed_dim = 32;
  c.vit.depth = 2;
  c.text.embed_dim = 32;
  c.text.depth = 1;
  c.stage0.batch_size = 32;
  c.stage0.total_steps = 20;
  c.stage0.warmup_steps = 2;
  c.stage1.batch_size = 32;
  c.stage1.total_steps = 20;
  c.stage1.warmup_steps = 2;
  c.eval.retrieval_gallery = 40;
  c.eval.fewshot_shots = {1, 2};
  c.eval.fewshot_steps = 3;
  c.eval.da_steps = 20;

  std::vector<std::string> blobs[2];
  for (int run = 0; run < 2; ++run) {
    const auto cfg = parse_config(to_ini(c));  // persisted config round trip
    auto data = generate_data(cfg);
    auto s0 = run_stage0(cfg, data);
    auto m = run_stage1(cfg, data, s0, align::Mode::Ceia);
    const auto p0 = scratch / fmt("repro%d-stage0.ckpt", run);
    const auto p1 = scratch / fmt("repro%d-ceia.ckpt", run);
    encoders::save_checkpoint(align::to_checkpoint(s0, data.vocab.fingerprint()), p0);
    encoders::save_checkpoint(align::to_checkpoint(m, data.vocab.fingerprint()), p1);
    blobs[run].push_back(file_bytes(p0));
    blobs[run].push_back(file_bytes(p1));
    blobs[run].push_back(keep(eval_zeroshot(cfg, data, s0, m.event, data.split.test_ids, "ceia")).to_json());
    blobs[run].push_back(keep(eval_retrieval(cfg, data, s0, m.event, RetrievalDirection::EventToImage, "ceia")).to_json());
    for (const auto& r : eval_fewshot(cfg, data, s0, m.event, "ceia")) blobs[run].push_back(keep(r).to_json());
    auto da = eval_da(cfg, data, s0, m.event, "ceia", 4);
    blobs[run].push_back(keep(da.event_report).to_json() + fmt("%.17g", da.untrained_acc));
    fs::remove(p0);
    fs::remove(p1);
  }
  const bool same = blobs[0] == blobs[1];
  verdict(12, "reproducibility", same,
          fmt("two runs of one persisted config: %zu artefacts (2 checkpoints, %zu metric reports) %s",
              blobs[0].size(), blobs[0].size() - 2, same ? "bit-identical" : "DIFFER"));
}

// Main experiment -------------------------------------------------------------

struct SeedResult {
  double base_zs = 0, ceia_zs = 0, ceta_zs = 0, small_zs = 0;
  double base_r1 = 0, ceia_r1 = 0, ceta_r1 = 0;
  double base_da = 0, ceia_da = 0, untrained = 0;
  double image_da = 0;
  bool self_retrieval = false;
};

double r1_both(const RunConfig& cfg, const Data& data, const align::Stage0Model& s0,
               const encoders::VisionTransformer& enc, const std::string& mode) {
  auto a = keep(eval_retrieval(cfg, data, s0, enc, RetrievalDirection::EventToImage, mode));
  auto b = keep(eval_retrieval(cfg, data, s0, enc, RetrievalDirection::ImageToEvent, mode));
  return 0.5 * (a.r_at.at(1) + b.r_at.at(1));
}

std::vector<int> half_train_ids(const Data& data) {
  // Every other training id keeps the class balance of the full set.
  std::vector<int> ids;
  for (std::size_t i = 0; i < data.split.train_ids.size(); i += 2) ids.push_back(data.split.train_ids[i]);
  return ids;
}

SeedResult run_seed(const RunConfig& base_cfg, const Data& data, const align::Stage0Model& s0,
                    std::uint64_t seed) {
  auto cfg = base_cfg;
  cfg.seed = seed;
  SeedResult r;
  const auto& test = data.split.test_ids;

  r.base_zs = keep(eval_zeroshot(cfg, data, s0, s0.image, test, "eventclip")).acc1;
  r.base_r1 = r1_both(cfg, data, s0, s0.image, "eventclip");
  auto bda = eval_da(cfg, data, s0, s0.image, "eventclip");
  r.base_da = keep(bda.event_report).acc1;

  auto t0 = Clock::now();
  auto ceia = run_stage1(cfg, data, s0, align::Mode::Ceia);
  progress(fmt("seed %llu: CEIA trained in %.0fs", static_cast<unsigned long long>(seed), seconds_since(t0)));
  r.ceia_zs = keep(eval_zeroshot(cfg, data, s0, ceia.event, test, "ceia")).acc1;
  keep(eval_zeroshot(cfg, data, s0, ceia.event, heldout_test_ids(data), "ceia-heldout"));
  r.ceia_r1 = r1_both(cfg, data, s0, ceia.event, "ceia");
  {
    std::vector<int> ids(test.begin(), test.begin() + cfg.eval.retrieval_gallery);
    auto ev = align::embed_inputs(ceia.event, event_inputs(cfg, data, ids));
    auto self = tasks::retrieve_paired(ev, ev);
    r.self_retrieval = tasks::recall_at_k(self, 1) == 1.0;
  }
  auto da = eval_da(cfg, data, s0, ceia.event, "ceia");
  r.ceia_da = keep(da.event_report).acc1;
  r.untrained = da.untrained_acc;
  r.image_da = da.image_acc;

  t0 = Clock::now();
  auto ceta = run_stage1(cfg, data, s0, align::Mode::Ceta);
  progress(fmt("seed %llu: CETA trained in %.0fs", static_cast<unsigned long long>(seed), seconds_since(t0)));
  r.ceta_zs = keep(eval_zeroshot(cfg, data, s0, ceta.event, test, "ceta")).acc1;
  r.ceta_r1 = r1_both(cfg, data, s0, ceta.event, "ceta");

  const auto half = half_train_ids(data);
  t0 = Clock::now();
  auto small = run_stage1(cfg, data, s0, align::Mode::Ceia, {}, &half);
  progress(fmt("seed %llu: CEIA-S trained in %.0fs", static_cast<unsigned long long>(seed), seconds_since(t0)));
  r.small_zs = keep(eval_zeroshot(cfg, data, s0, small.event, test, "ceia-s")).acc1;

  progress(fmt("seed %llu: zs base %.3f ceia %.3f ceta %.3f small %.3f | R@1 base %.3f ceia %.3f ceta %.3f | "
               "DA base %.3f ceia %.3f untrained %.3f",
               static_cast<unsigned long long>(seed), r.base_zs, r.ceia_zs, r.ceta_zs, r.small_zs,
               r.base_r1, r.ceia_r1, r.ceta_r1, r.base_da, r.ceia_da, r.untrained));
  return r;
}

void criterion_ablation(const RunConfig& base_cfg, const Data& data, const align::Stage0Model& s0,
                        int steps, const fs::path& out) {
  ordered_json table = ordered_json::array();
  bool ok = true;
  std::string summary;
  for (auto kind : {repr::FrameKind::RedBlue, repr::FrameKind::Gray, repr::FrameKind::TimeSurface,
                    repr::FrameKind::Voxel}) {
    auto cfg = base_cfg;
    cfg.frame.kind = kind;
    cfg.stage1.total_steps = steps;
    cfg.stage1.warmup_steps = std::min<std::int64_t>(cfg.stage1.warmup_steps, steps / 10);
    const auto name = repr::to_string(kind);
    try {
      auto m = run_stage1(cfg, data, s0, align::Mode::Ceia);
      auto zs = keep(eval_zeroshot(cfg, data, s0, m.event, data.split.test_ids, "ceia-" + name));
      auto zb = keep(eval_zeroshot(cfg, data, s0, s0.image, data.split.test_ids, "eventclip-" + name));
      auto rr = keep(eval_retrieval(cfg, data, s0, m.event, RetrievalDirection::EventToImage, "ceia-" + name));
      table.push_back({{"repr", name}, {"zeroshot_acc1", zs.acc1}, {"baseline_acc1", zb.acc1},
                       {"retrieval_r1", rr.r_at.at(1)}, {"steps", steps}});
      summary += fmt("%s %.3f ", name.c_str(), zs.acc1);
    } catch (const std::exception& e) {
      ok = false;
      summary += name + " failed (" + e.what() + ") ";
    }
  }
  std::ofstream(out) << table.dump(2) << "\n";
  verdict(10, "representation ablation harness", ok && table.size() == 4,
          "zero-shot Acc1 by representation: " + summary + "-> " + out.filename().string());
}

}  // namespace

int main(int argc, char** argv) {
  g::tune_allocator();
  CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
  std::string config_path, out_dir = ".";
  int seeds = 3, ablation_steps = 300;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI config for the experiment criteria")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Config override section.key=value");
  app.add_option("--seeds", seeds, "Stage-1 seeds")->check(CLI::PositiveNumber);
  app.add_option("--ablation-steps", ablation_steps, "Stage-1 steps per representation")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Directory for acceptance_report.json");
  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = config_path.empty() ? RunConfig() : load_config(config_path);
    for (const auto& o : overrides) set_option(cfg, o);
    cfg.validate();
    fs::create_directories(out_dir);
    const auto t_all = Clock::now();

    criterion_gradients();
    criterion_lora(cfg);
    criterion_loss();
    int mismatches = 0, instances = 0;
    criterion_metrics_oracles(mismatches, instances);
    criterion_repro(out_dir);

    // 5: stage 0
    auto data = generate_data(cfg);
    progress(fmt("data: %zu stage-0 samples, %zu pairs (%zu train / %zu test)", data.stage0.size(),
                 data.pairs.size(), data.split.train_ids.size(), data.split.test_ids.size()));
    auto t0 = Clock::now();
    auto s0 = run_stage0(cfg, data);
    const double s0_secs = seconds_since(t0);
    std::vector<int> heldin;
    const auto held = heldout_test_ids(data);
    for (int id : data.split.test_ids)
      if (std::find(held.begin(), held.end(), id) == held.end()) heldin.push_back(id);
    auto img = keep(eval_image_zeroshot(cfg, data, s0, heldin));
    const int k = data.labels.num_classes();
    verdict(5, "stage-0 stand-in", img.acc1 >= 0.90 && s0_secs < 900 && k >= 8,
            fmt("image zero-shot Acc1 %.3f on %zu held-in test images (%d classes, chance %.3f), "
                "trained in %.0fs",
                img.acc1, img.n, k, 1.0 / k, s0_secs));

    std::vector<SeedResult> runs;
    for (int s = 0; s < seeds; ++s) runs.push_back(run_seed(cfg, data, s0, cfg.seed + static_cast<std::uint64_t>(s)));
    auto col = [&](double SeedResult::*f) {
      std::vector<double> v;
      for (const auto& r : runs) v.push_back(r.*f);
      return v;
    };

    const double zs_gain = mean(col(&SeedResult::ceia_zs)) - mean(col(&SeedResult::base_zs));
    verdict(6, "CEIA > EventCLIP zero-shot", zs_gain >= 0.10,
            fmt("mean Acc1 CEIA %.3f vs frozen baseline %.3f (+%.1f pts, need >= 10); per seed CEIA ",
                mean(col(&SeedResult::ceia_zs)), mean(col(&SeedResult::base_zs)), 100 * zs_gain) +
                list(col(&SeedResult::ceia_zs)));

    const double chance = 1.0 / cfg.eval.retrieval_gallery;
    const double r1 = mean(col(&SeedResult::ceia_r1)), r1b = mean(col(&SeedResult::base_r1));
    bool self_ok = true;
    for (const auto& r : runs) self_ok = self_ok && r.self_retrieval;
    verdict(7, "retrieval direction", r1 >= 5 * r1b && r1 >= 20 * chance && self_ok,
            fmt("event<->image R@1 %.3f vs baseline %.3f (need >= 5x) and chance %.4f (need >= %.3f), "
                "gallery %d; self-retrieval R@1 = 1: %s; per seed ",
                r1, r1b, chance, 20 * chance, cfg.eval.retrieval_gallery, self_ok ? "yes" : "no") +
                list(col(&SeedResult::ceia_r1)));

    const double ceta_zs = mean(col(&SeedResult::ceta_zs)), ceta_r1 = mean(col(&SeedResult::ceta_r1));
    const double ceia_zs = mean(col(&SeedResult::ceia_zs));
    verdict(8, "CEIA >= CETA", ceia_zs >= ceta_zs && r1 >= ceta_r1,
            fmt("zero-shot Acc1 CEIA %.3f vs CETA %.3f; event<->image R@1 CEIA %.3f vs CETA %.3f",
                ceia_zs, ceta_zs, r1, ceta_r1));

    const double da_gain = mean(col(&SeedResult::ceia_da)) - mean(col(&SeedResult::base_da));
    const double untrained = mean(col(&SeedResult::untrained));
    verdict(9, "domain adaptation", da_gain >= 0.15 && std::abs(untrained - 1.0 / k) <= 0.03,
            fmt("image-trained head on events: CEIA %.3f vs baseline %.3f (+%.1f pts, need >= 15); "
                "on test images %.3f; untrained heads %.3f (chance %.3f)",
                mean(col(&SeedResult::ceia_da)), mean(col(&SeedResult::base_da)), 100 * da_gain,
                mean(col(&SeedResult::image_da)), untrained, 1.0 / k));

    criterion_ablation(cfg, data, s0, ablation_steps, fs::path(out_dir) / "ablation_repr.json");

    const double large = ceia_zs, small = mean(col(&SeedResult::small_zs));
    const double n = static_cast<double>(data.split.test_ids.size());
    const double noise = 2 * std::sqrt(std::max(small * (1 - small), 1e-12) / n);
    verdict(11, "data scaling", large >= small - noise,
            fmt("zero-shot Acc1 with %zu pairs %.3f vs %zu pairs %.3f (allowed drop %.3f = 2 binomial SE)",
                data.split.train_ids.size(), large, half_train_ids(data).size(), small, noise));

    criterion_metrics(mismatches, instances);

    g_report["seconds"] = seconds_since(t_all);
    g_report["config"] = to_ini(cfg);
    std::ofstream(fs::path(out_dir) / "acceptance_report.json") << g_report.dump(2) << "\n";
    std::printf("%d of 12 criteria failed, %.0fs\n", g_failed, seconds_since(t_all));
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance run aborted: %s\n", e.what());
    return 1;
  }
  return g_failed == 0 ? 0 : 1;
}
