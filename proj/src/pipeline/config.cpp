#include "ceia/pipeline/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <sstream>

#include "ceia/error.hpp"

namespace ceia::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  CEIA_REQUIRE(!is.fail() && (is >> std::ws).eof(), "config: bad value '" + v + "' for " + key);
  if constexpr (std::is_unsigned_v<T>)
    CEIA_REQUIRE(v.find('-') == std::string::npos, "config: negative value for " + key);
  return out;
}

template <class T>
std::string fmt(T v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: expected true/false for " + key + ", got '" + v + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T, class Acc>
Field num(std::string sec, std::string key, Acc acc) {
  const std::string full = sec + "." + key;
  return {sec, key, [acc](const RunConfig& c) { return fmt(acc(const_cast<RunConfig&>(c))); },
          [acc, full](RunConfig& c, const std::string& v) { acc(c) = parse_number<T>(full, v); }};
}

template <class Acc>
Field flag(std::string sec, std::string key, Acc acc) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [acc](const RunConfig& c) { return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [acc, full](RunConfig& c, const std::string& v) { acc(c) = parse_bool(full, v); }};
}

template <class Acc>
Field strings(std::string sec, std::string key, Acc acc) {
  return {sec, key, [acc](const RunConfig& c) { return join(acc(const_cast<RunConfig&>(c))); },
          [acc](RunConfig& c, const std::string& v) { acc(c) = split_list(v); }};
}

template <class T, class Acc>
Field numbers(std::string sec, std::string key, Acc acc) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [acc](const RunConfig& c) {
            std::vector<std::string> s;
            for (auto v : acc(const_cast<RunConfig&>(c))) s.push_back(fmt(v));
            return join(s);
          },
          [acc, full](RunConfig& c, const std::string& v) {
            std::vector<T> out;
            for (const auto& s : split_list(v)) out.push_back(parse_number<T>(full, s));
            acc(c) = out;
          }};
}

void train_fields(std::vector<Field>& f, const std::string& sec,
                  align::TrainConfig RunConfig::*member) {
  f.push_back(num<int>(sec, "batch_size", [member](RunConfig& c) -> auto& { return (c.*member).batch_size; }));
  f.push_back(num<double>(sec, "peak_lr", [member](RunConfig& c) -> auto& { return (c.*member).peak_lr; }));
  f.push_back(num<double>(sec, "weight_decay", [member](RunConfig& c) -> auto& { return (c.*member).weight_decay; }));
  f.push_back(num<std::int64_t>(sec, "warmup_steps", [member](RunConfig& c) -> auto& { return (c.*member).warmup_steps; }));
  f.push_back(num<std::int64_t>(sec, "total_steps", [member](RunConfig& c) -> auto& { return (c.*member).total_steps; }));
  f.push_back(flag(sec, "train_tau", [member](RunConfig& c) -> auto& { return (c.*member).train_tau; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> f;
    f.push_back(num<std::uint64_t>("run", "seed", [](RunConfig& c) -> auto& { return c.seed; }));

    f.push_back(strings("data", "shapes", [](RunConfig& c) -> auto& { return c.data.events.shapes; }));
    f.push_back(strings("data", "colors", [](RunConfig& c) -> auto& { return c.data.events.colors; }));
    f.push_back(num<int>("data", "samples_per_class", [](RunConfig& c) -> auto& { return c.data.events.samples_per_class; }));
    f.push_back(num<int>("data", "stage0_samples_per_class", [](RunConfig& c) -> auto& { return c.data.stage0_samples_per_class; }));
    f.push_back(num<double>("data", "test_fraction", [](RunConfig& c) -> auto& { return c.data.test_fraction; }));
    f.push_back(strings("data", "heldout", [](RunConfig& c) -> auto& { return c.data.heldout; }));
    f.push_back(num<int>("data", "min_size_px", [](RunConfig& c) -> auto& { return c.data.events.min_size_px; }));
    f.push_back(num<int>("data", "max_size_px", [](RunConfig& c) -> auto& { return c.data.events.max_size_px; }));
    f.push_back(num<double>("data", "threshold", [](RunConfig& c) -> auto& { return c.data.events.threshold; }));
    f.push_back(num<std::uint64_t>("data", "frame_dt_us", [](RunConfig& c) -> auto& { return c.data.events.frame_dt_us; }));
    f.push_back(num<std::size_t>("data", "sensor_size", [](RunConfig& c) -> auto& { return c.data.events.render.height; }));
    f.push_back(flag("data", "attribute_captions", [](RunConfig& c) -> auto& { return c.data.attribute_captions; }));
    f.push_back({"data", "stage0_templates",
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.data.stage0_templates.size(); ++i)
                     out += (i ? "|" : "") + c.data.stage0_templates[i];
                   return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.data.stage0_templates.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, '|'))
                     if (auto t = trim(item); !t.empty()) c.data.stage0_templates.push_back(t);
                 }});

    f.push_back({"repr", "kind", [](const RunConfig& c) { return repr::to_string(c.frame.kind); },
                 [](RunConfig& c, const std::string& v) { c.frame.kind = repr::parse_frame_kind(v); }});
    f.push_back(num<std::size_t>("repr", "voxel_bins", [](RunConfig& c) -> auto& { return c.frame.voxel_bins; }));
    f.push_back(num<double>("repr", "tau_us", [](RunConfig& c) -> auto& { return c.frame.tau_us; }));

    f.push_back(num<std::size_t>("vit", "image_size", [](RunConfig& c) -> auto& { return c.vit.image_size; }));
    f.push_back(num<std::size_t>("vit", "patch_size", [](RunConfig& c) -> auto& { return c.vit.patch_size; }));
    f.push_back(num<std::size_t>("vit", "embed_dim", [](RunConfig& c) -> auto& { return c.vit.embed_dim; }));
    f.push_back(num<std::size_t>("vit", "depth", [](RunConfig& c) -> auto& { return c.vit.depth; }));
    f.push_back(num<std::size_t>("vit", "heads", [](RunConfig& c) -> auto& { return c.vit.heads; }));
    f.push_back(num<std::size_t>("vit", "mlp_ratio", [](RunConfig& c) -> auto& { return c.vit.mlp_ratio; }));
    f.push_back(num<std::size_t>("vit", "output_dim", [](RunConfig& c) -> auto& { return c.vit.output_dim; }));
    f.push_back({"vit", "pool",
                 [](const RunConfig& c) { return std::string(c.vit.pool == encoders::Pool::Cls ? "cls" : "mean"); },
                 [](RunConfig& c, const std::string& v) {
                   CEIA_REQUIRE(v == "cls" || v == "mean", "config: vit.pool must be cls or mean");
                   c.vit.pool = v == "cls" ? encoders::Pool::Cls : encoders::Pool::Mean;
                 }});

    f.push_back(num<std::size_t>("text", "embed_dim", [](RunConfig& c) -> auto& { return c.text.embed_dim; }));
    f.push_back(num<std::size_t>("text", "depth", [](RunConfig& c) -> auto& { return c.text.depth; }));
    f.push_back(num<std::size_t>("text", "heads", [](RunConfig& c) -> auto& { return c.text.heads; }));
    f.push_back(num<std::size_t>("text", "mlp_ratio", [](RunConfig& c) -> auto& { return c.text.mlp_ratio; }));
    f.push_back(num<std::size_t>("text", "max_tokens", [](RunConfig& c) -> auto& { return c.text.max_tokens; }));

    f.push_back(num<int>("lora", "rank", [](RunConfig& c) -> auto& { return c.lora.rank; }));
    f.push_back(num<double>("lora", "alpha", [](RunConfig& c) -> auto& { return c.lora.alpha; }));
    f.push_back(strings("lora", "targets", [](RunConfig& c) -> auto& { return c.lora.targets; }));

    train_fields(f, "stage0", &RunConfig::stage0);
    train_fields(f, "stage1", &RunConfig::stage1);

    f.push_back({"eval", "template", [](const RunConfig& c) { return c.eval.templ; },
                 [](RunConfig& c, const std::string& v) { c.eval.templ = v; }});
    f.push_back(numbers<int>("eval", "fewshot_shots", [](RunConfig& c) -> auto& { return c.eval.fewshot_shots; }));
    f.push_back(num<int>("eval", "fewshot_steps", [](RunConfig& c) -> auto& { return c.eval.fewshot_steps; }));
    f.push_back(num<double>("eval", "fewshot_lr", [](RunConfig& c) -> auto& { return c.eval.fewshot_lr; }));
    f.push_back(num<int>("eval", "retrieval_gallery", [](RunConfig& c) -> auto& { return c.eval.retrieval_gallery; }));
    f.push_back(num<int>("eval", "da_steps", [](RunConfig& c) -> auto& { return c.eval.da_steps; }));
    f.push_back(num<double>("eval", "da_lr", [](RunConfig& c) -> auto& { return c.eval.da_lr; }));
    f.push_back(numbers<std::size_t>("eval", "da_hidden", [](RunConfig& c) -> auto& { return c.eval.da_hidden; }));
    return f;
  }();
  return f;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return f;
  throw ValidationError("config: unknown key '" + section + "." + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  stage0 = align::TrainConfig::defaults(align::Mode::Stage0);
  stage0.peak_lr = 2e-3;
  stage0.total_steps = 600;
  stage0.warmup_steps = 60;
  stage1 = align::TrainConfig::defaults(align::Mode::Ceia);
  stage1.total_steps = 300;
  stage1.warmup_steps = 30;
}

void RunConfig::validate() const {
  CEIA_REQUIRE(data.events.render.height == data.events.render.width,
               "config: sensor must be square");
  CEIA_REQUIRE(vit.image_size == data.events.render.height,
               "config: vit.image_size must equal data.sensor_size");
  CEIA_REQUIRE(data.events.samples_per_class >= 2 && data.stage0_samples_per_class >= 1,
               "config: too few samples per class");
  CEIA_REQUIRE(data.test_fraction > 0 && data.test_fraction < 1,
               "config: test_fraction must be in (0, 1)");
  CEIA_REQUIRE(!data.stage0_templates.empty(), "config: no stage-0 templates");
  CEIA_REQUIRE(eval.retrieval_gallery >= 1, "config: retrieval_gallery must be >= 1");
  for (int n : eval.fewshot_shots) CEIA_REQUIRE(n >= 1, "config: few-shot N must be >= 1");
  vit.validate();
  stage0.validate();
  stage1.validate();
  CEIA_REQUIRE(lora.rank > 0 && lora.alpha > 0, "config: LoRA rank and alpha must be positive");
  for (const auto& t : lora.targets)
    CEIA_REQUIRE(std::find(encoders::adaptable_linears().begin(), encoders::adaptable_linears().end(),
                           t) != encoders::adaptable_linears().end(),
                 "config: LoRA target '" + t + "' does not name a weight (expected q, k, v, o, fc1, fc2)");
  CEIA_REQUIRE(text.heads > 0 && text.embed_dim % text.heads == 0,
               "config: text embed_dim must be divisible by heads");
}

RunConfig parse_config(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(ini_text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    CEIA_REQUIRE(!body.empty() || body.data().empty(), "config: key outside a section: " + section);
    for (const auto& [key, value] : body) find_field(section, key).set(c, trim(value.data()));
  }
  c.data.events.render.width = c.data.events.render.height;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  CEIA_REQUIRE(in.good(), "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get(config) << "\n";
  }
  return os.str();
}

void set_option(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  CEIA_REQUIRE(eq != std::string::npos && dot != std::string::npos && dot < eq,
               "config override must look like section.key=value, got '" + assignment + "'");
  find_field(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)))
      .set(config, trim(assignment.substr(eq + 1)));
  config.data.events.render.width = config.data.events.render.height;
}

}  // namespace ceia::pipeline
