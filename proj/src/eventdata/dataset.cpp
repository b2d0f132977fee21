#include "ceia/eventdata/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ceia/error.hpp"

namespace ceia::eventdata {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::size_t count_slots(const std::string& templ) {
  std::size_t n = 0;
  for (auto pos = templ.find(kClassSlot); pos != std::string::npos;
       pos = templ.find(kClassSlot, pos + kClassSlot.size()))
    ++n;
  return n;
}

std::string id_name(int id) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << id;
  return os.str();
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, fresh] = index_.emplace(tokens_[i], static_cast<int>(i));
    CEIA_REQUIRE(fresh, "vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> templates,
                             std::span<const std::string> class_names) {
  std::set<std::string> toks;
  for (const auto& t : templates) {
    std::string body = t;
    for (auto pos = body.find(kClassSlot); pos != std::string::npos;
         pos = body.find(kClassSlot))
      body.replace(pos, kClassSlot.size(), " ");
    for (auto& w : split_ws(lower(body))) toks.insert(w);
  }
  for (const auto& c : class_names)
    for (auto& w : split_ws(lower(c))) toks.insert(w);
  return Vocabulary(std::vector<std::string>(toks.begin(), toks.end()));
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  CEIA_REQUIRE(it != index_.end(), "token '" + token + "' not in vocabulary");
  return it->second;
}

std::uint32_t Vocabulary::fingerprint() const {
  std::uint32_t h = 2166136261u;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 16777619u;
    }
    h ^= 0xFFu;
    h *= 16777619u;
  }
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  CEIA_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  CEIA_REQUIRE(in.good(), "cannot open " + path.string());
  std::vector<std::string> toks;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) toks.push_back(line);
  return Vocabulary(std::move(toks));
}

Caption make_caption(const std::string& class_name, const std::string& templ,
                     const Vocabulary& vocab, int label) {
  CEIA_REQUIRE(count_slots(templ) == 1,
               "template '" + templ + "' must contain exactly one " + kClassSlot);
  std::string text = templ;
  text.replace(text.find(kClassSlot), kClassSlot.size(), class_name);
  Caption cap;
  cap.label = label;
  auto words = split_ws(lower(text));
  CEIA_REQUIRE(!words.empty(), "make_caption: empty caption");
  for (const auto& w : words) cap.tokens.push_back(vocab.id(w));
  for (std::size_t i = 0; i < words.size(); ++i) cap.text += (i ? " " : "") + words[i];
  return cap;
}

DatasetSplit split_dataset(std::span<const int> sample_labels,
                           const std::set<int>& heldout_classes,
                           double test_fraction, std::uint64_t seed) {
  CEIA_REQUIRE(test_fraction > 0.0 && test_fraction < 1.0,
               "split_dataset: test_fraction must lie in (0, 1)");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < sample_labels.size(); ++i)
    by_class[sample_labels[i]].push_back(static_cast<int>(i));
  bool any_trainable = false;
  for (const auto& [c, _] : by_class)
    if (!heldout_classes.count(c)) any_trainable = true;
  CEIA_REQUIRE(any_trainable || by_class.empty(),
               "split_dataset: held-out set covers every class");

  DatasetSplit split;
  split.seed = seed;
  split.heldout_class_ids.assign(heldout_classes.begin(), heldout_classes.end());

  // Largest-remainder allocation of the test quota across classes.
  std::size_t remaining = 0;
  for (const auto& [c, ids] : by_class)
    if (!heldout_classes.count(c)) remaining += ids.size();
  const auto quota = static_cast<std::size_t>(std::llround(test_fraction * remaining));
  std::map<int, std::size_t> take;
  std::vector<std::pair<double, int>> frac;
  std::size_t assigned = 0;
  for (const auto& [c, ids] : by_class) {
    if (heldout_classes.count(c)) continue;
    const double exact = test_fraction * ids.size();
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    frac.emplace_back(-(exact - std::floor(exact)), c);
  }
  std::sort(frac.begin(), frac.end());
  for (std::size_t i = 0; assigned < quota && i < frac.size(); ++i) {
    take[frac[i].second] += 1;
    ++assigned;
  }

  std::mt19937_64 rng(seed);
  for (auto& [c, ids] : by_class) {
    if (heldout_classes.count(c)) {
      split.test_ids.insert(split.test_ids.end(), ids.begin(), ids.end());
      continue;
    }
    std::vector<int> order = ids;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_test = std::min(take[c], order.size());
    split.test_ids.insert(split.test_ids.end(), order.begin(), order.begin() + n_test);
    split.train_ids.insert(split.train_ids.end(), order.begin() + n_test, order.end());
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
  // splitmix64 over a combined key
  std::uint64_t z = global_seed * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Sample generate_sample(const DatasetConfig& config, const LabelSet& labels, int id) {
  const int k = labels.num_classes();
  Sample s;
  s.id = id;
  s.label = id % k;
  std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(id)));
  std::uniform_int_distribution<int> size_dist(config.min_size_px, config.max_size_px);
  s.scene.shape_class = labels.shape_of(s.label);
  s.scene.color_class = labels.color_of(s.label);
  s.scene.size_px = size_dist(rng);
  const int h = static_cast<int>(config.render.height);
  const int w = static_cast<int>(config.render.width);
  const int margin = (s.scene.size_px + 1) / 2 + 1;
  CEIA_REQUIRE(2 * margin < h && 2 * margin < w, "dataset: shapes too large for canvas");
  std::uniform_int_distribution<int> row_dist(margin, h - 1 - margin);
  std::uniform_int_distribution<int> col_dist(margin, w - 1 - margin);
  s.scene.row = row_dist(rng);
  s.scene.col = col_dist(rng);
  s.scene.rng_seed = rng();
  s.image = render_scene(s.scene, labels, config.render);
  s.events = simulate_events(s.image, config.motion, config.threshold, config.frame_dt_us);
  return s;
}

std::vector<Sample> generate_dataset(const DatasetConfig& config) {
  CEIA_REQUIRE(config.samples_per_class >= 1, "dataset: samples_per_class must be >= 1");
  CEIA_REQUIRE(config.min_size_px >= 1 && config.min_size_px <= config.max_size_px,
               "dataset: invalid size range");
  LabelSet labels(config.shapes, config.colors);
  const int n = labels.num_classes() * config.samples_per_class;
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(config, labels, i));
  return out;
}

void write_corpus(const std::filesystem::path& dir, std::span<const Sample> samples,
                  const LabelSet& labels, const Vocabulary& vocab,
                  const DatasetSplit* split) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "events", ec);
  CEIA_REQUIRE(!ec, "cannot create corpus directory " + dir.string() + ": " + ec.message());
  std::ofstream lab(dir / "labels.csv");
  CEIA_REQUIRE(lab.good(), "cannot write " + (dir / "labels.csv").string());
  lab << "id,shape,color\n";
  for (const auto& s : samples) {
    save_ppm(s.image, dir / "images" / (id_name(s.id) + ".ppm"));
    save_events_binary(s.events, dir / "events" / (id_name(s.id) + ".evst"));
    lab << s.id << ',' << labels.shape_of(s.label) << ',' << labels.color_of(s.label) << '\n';
  }
  vocab.save(dir / "vocab.txt");
  if (split) {
    std::ofstream sp(dir / "splits.csv");
    sp << "# seed " << split->seed << '\n';
    sp << "# heldout";
    for (int c : split->heldout_class_ids) sp << ' ' << c;
    sp << '\n' << "id,split\n";
    std::vector<std::pair<int, const char*>> rows;
    for (int id : split->train_ids) rows.emplace_back(id, "train");
    for (int id : split->test_ids) rows.emplace_back(id, "test");
    std::sort(rows.begin(), rows.end());
    for (const auto& [id, which] : rows) sp << id << ',' << which << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& dir, const LabelSet& labels) {
  Corpus corpus;
  corpus.vocab = Vocabulary::load(dir / "vocab.txt");
  std::ifstream lab(dir / "labels.csv");
  CEIA_REQUIRE(lab.good(), "cannot open " + (dir / "labels.csv").string());
  std::string line;
  std::getline(lab, line);
  CEIA_REQUIRE(line == "id,shape,color", "labels.csv: bad header");
  while (std::getline(lab, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, shape, color;
    std::getline(ls, id, ',');
    std::getline(ls, shape, ',');
    std::getline(ls, color, ',');
    Sample s;
    s.id = std::stoi(id);
    s.label = labels.label_of(shape, color);
    s.scene.shape_class = shape;
    s.scene.color_class = color;
    s.image = load_ppm(dir / "images" / (id_name(s.id) + ".ppm"));
    s.image.label = s.label;
    s.events = load_events(dir / "events" / (id_name(s.id) + ".evst"));
    corpus.samples.push_back(std::move(s));
  }
  if (std::filesystem::exists(dir / "splits.csv")) {
    std::ifstream sp(dir / "splits.csv");
    while (std::getline(sp, line)) {
      if (line.empty() || line == "id,split") continue;
      if (line[0] == '#') {
        std::istringstream ls(line.substr(1));
        std::string key;
        ls >> key;
        if (key == "seed") ls >> corpus.split.seed;
        if (key == "heldout")
          for (int c; ls >> c;) corpus.split.heldout_class_ids.push_back(c);
        continue;
      }
      auto comma = line.find(',');
      CEIA_REQUIRE(comma != std::string::npos, "splits.csv: malformed row");
      const int id = std::stoi(line.substr(0, comma));
      const std::string which = line.substr(comma + 1);
      if (which == "train")
        corpus.split.train_ids.push_back(id);
      else if (which == "test")
        corpus.split.test_ids.push_back(id);
      else
        throw ValidationError("splits.csv: unknown split '" + which + "'");
    }
  }
  return corpus;
}

}  // namespace ceia::eventdata
