#include "ceia/eventdata/events.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "ceia/error.hpp"

namespace ceia::eventdata {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> buf{};
  auto u = static_cast<std::make_unsigned_t<T>>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

template <class T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  CEIA_REQUIRE(in.gcount() == static_cast<std::streamsize>(buf.size()),
               "truncated event file " + path.string());
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

std::vector<double> log_luminance(const Image& img) {
  std::vector<double> out(img.height * img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      out[y * img.width + x] =
          std::log(kLogEps + luminance(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)));
  return out;
}

std::size_t wrap(long long v, std::size_t n) {
  long long m = static_cast<long long>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

}  // namespace

bool event_order(const Event& a, const Event& b) {
  return std::tie(a.t, a.y, a.x, a.polarity) < std::tie(b.t, b.y, b.x, b.polarity);
}

void EventStream::validate() const {
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    const std::string where = "event " + std::to_string(i);
    CEIA_REQUIRE(e.x < width && e.y < height,
                 where + ": coordinate (" + std::to_string(e.x) + "," +
                     std::to_string(e.y) + ") outside sensor " + std::to_string(width) +
                     "x" + std::to_string(height));
    CEIA_REQUIRE(e.polarity == 1 || e.polarity == -1,
                 where + ": polarity must be +1 or -1");
    CEIA_REQUIRE(e.t <= duration_us, where + ": timestamp beyond duration");
    CEIA_REQUIRE(e.t >= prev, where + ": timestamps not sorted");
    prev = e.t;
  }
}

double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

EventStream simulate_events(const Image& image, std::span<const MotionStep> motion,
                            double threshold, std::uint64_t frame_dt_us) {
  CEIA_REQUIRE(threshold > 0.0, "simulate_events: threshold must be positive");
  CEIA_REQUIRE(!motion.empty(), "simulate_events: empty motion path");
  CEIA_REQUIRE(frame_dt_us > 0, "simulate_events: frame interval must be positive");
  CEIA_REQUIRE(image.height > 0 && image.width > 0 && image.height <= 65536 &&
                   image.width <= 65536,
               "simulate_events: unsupported sensor size");

  const std::size_t h = image.height, w = image.width;
  const auto base = log_luminance(image);
  EventStream stream;
  stream.width = static_cast<std::uint32_t>(w);
  stream.height = static_cast<std::uint32_t>(h);
  stream.duration_us = frame_dt_us * motion.size();

  long long ox = 0, oy = 0;
  for (std::size_t k = 0; k < motion.size(); ++k) {
    const long long nx = ox + motion[k].dx, ny = oy + motion[k].dy;
    const std::uint64_t t0 = frame_dt_us * k;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // Frame shifted by (ox, oy) shows source pixel (x - ox, y - oy).
        const double before = base[wrap(static_cast<long long>(y) - oy, h) * w +
                                   wrap(static_cast<long long>(x) - ox, w)];
        const double after = base[wrap(static_cast<long long>(y) - ny, h) * w +
                                  wrap(static_cast<long long>(x) - nx, w)];
        const double delta = after - before;
        const auto count = static_cast<std::uint64_t>(std::floor(std::abs(delta) / threshold));
        const std::int8_t pol = delta > 0 ? 1 : -1;
        for (std::uint64_t j = 0; j < count; ++j) {
          Event e;
          e.x = static_cast<std::uint16_t>(x);
          e.y = static_cast<std::uint16_t>(y);
          e.t = t0 + (j + 1) * frame_dt_us / (count + 1);
          e.polarity = pol;
          stream.events.push_back(e);
        }
      }
    ox = nx;
    oy = ny;
  }
  std::sort(stream.events.begin(), stream.events.end(), event_order);
  return stream;
}

void save_events_csv(const EventStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  CEIA_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  out << "# " << stream.width << ' ' << stream.height << ' ' << stream.duration_us << '\n';
  out << "t_us,x,y,p\n";
  for (const auto& e : stream.events)
    out << e.t << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.polarity) << '\n';
  CEIA_REQUIRE(out.good(), "write failed: " + path.string());
}

EventStream load_events_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  CEIA_REQUIRE(in.good(), "cannot open " + path.string());
  EventStream s;
  bool have_meta = false, have_header = false;
  std::string line;
  std::size_t lineno = 0;
  std::uint32_t max_x = 0, max_y = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      CEIA_REQUIRE(static_cast<bool>(ls >> s.width >> s.height >> s.duration_us),
                   where + ": malformed sensor line");
      have_meta = true;
      continue;
    }
    if (!have_header) {
      CEIA_REQUIRE(line == "t_us,x,y,p", where + ": expected header t_us,x,y,p");
      have_header = true;
      continue;
    }
    std::istringstream ls(line);
    long long t = 0, x = 0, y = 0, p = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    CEIA_REQUIRE(static_cast<bool>(ls >> t >> c1 >> x >> c2 >> y >> c3 >> p) &&
                     c1 == ',' && c2 == ',' && c3 == ',',
                 where + ": malformed event row");
    ls >> std::ws;
    CEIA_REQUIRE(ls.eof(), where + ": trailing characters");
    CEIA_REQUIRE(t >= 0 && x >= 0 && y >= 0 && x < 65536 && y < 65536,
                 where + ": value out of range");
    CEIA_REQUIRE(p == 1 || p == -1, where + ": polarity must be 1 or -1");
    Event e;
    e.t = static_cast<std::uint64_t>(t);
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.polarity = static_cast<std::int8_t>(p);
    max_x = std::max<std::uint32_t>(max_x, e.x);
    max_y = std::max<std::uint32_t>(max_y, e.y);
    s.events.push_back(e);
  }
  CEIA_REQUIRE(have_header, path.string() + ": missing header");
  if (!have_meta && !s.events.empty()) {
    s.width = max_x + 1;
    s.height = max_y + 1;
    s.duration_us = s.events.back().t;
  }
  s.validate();
  return s;
}

void save_events_binary(const EventStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  CEIA_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, stream.width);
  put_le<std::uint32_t>(out, stream.height);
  put_le<std::uint64_t>(out, stream.duration_us);
  put_le<std::uint64_t>(out, stream.events.size());
  for (const auto& e : stream.events) {
    put_le<std::uint64_t>(out, e.t);
    put_le<std::uint16_t>(out, e.x);
    put_le<std::uint16_t>(out, e.y);
    put_le<std::int8_t>(out, e.polarity);
  }
  CEIA_REQUIRE(out.good(), "write failed: " + path.string());
}

EventStream load_events_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CEIA_REQUIRE(in.good(), "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  CEIA_REQUIRE(in.gcount() == 4 && std::equal(magic, magic + 4, kMagic),
               path.string() + ": bad magic, not an EVST file");
  const auto version = get_le<std::uint32_t>(in, path);
  CEIA_REQUIRE(version == kVersion,
               path.string() + ": unsupported version " + std::to_string(version));
  EventStream s;
  s.width = get_le<std::uint32_t>(in, path);
  s.height = get_le<std::uint32_t>(in, path);
  s.duration_us = get_le<std::uint64_t>(in, path);
  const auto count = get_le<std::uint64_t>(in, path);
  const auto here = in.tellg();
  in.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(in.tellg() - here);
  in.seekg(here);
  CEIA_REQUIRE(remaining == count * 13,
               path.string() + ": record section size does not match count");
  s.events.resize(count);
  for (auto& e : s.events) {
    e.t = get_le<std::uint64_t>(in, path);
    e.x = get_le<std::uint16_t>(in, path);
    e.y = get_le<std::uint16_t>(in, path);
    e.polarity = get_le<std::int8_t>(in, path);
  }
  s.validate();
  return s;
}

void save_events(const EventStream& stream, const std::filesystem::path& path) {
  if (path.extension() == ".csv")
    save_events_csv(stream, path);
  else
    save_events_binary(stream, path);
}

EventStream load_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CEIA_REQUIRE(in.good(), "cannot open " + path.string());
  char head[4] = {};
  in.read(head, 4);
  if (in.gcount() == 4 && std::equal(head, head + 4, kMagic)) return load_events_binary(path);
  return load_events_csv(path);
}

}  // namespace ceia::eventdata
