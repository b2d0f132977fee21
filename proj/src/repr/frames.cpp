#include "ceia/repr/frames.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ceia/error.hpp"

namespace ceia::repr {

namespace {

using eventdata::EventStream;

void check_dims(std::size_t h, std::size_t w) {
  CEIA_REQUIRE(h > 0 && w > 0, "event frame: H and W must be positive");
}

std::size_t scale_coord(std::size_t v, std::size_t target, std::uint32_t sensor) {
  return std::min(target - 1, v * target / std::max<std::uint32_t>(sensor, 1));
}

struct Counts {
  std::vector<int> pos, neg;
};

Counts polarity_counts(const EventStream& s, std::size_t h, std::size_t w) {
  Counts c{std::vector<int>(h * w, 0), std::vector<int>(h * w, 0)};
  for (const auto& e : s.events) {
    const std::size_t idx =
        scale_coord(e.y, h, s.height) * w + scale_coord(e.x, w, s.width);
    (e.polarity > 0 ? c.pos : c.neg)[idx] += 1;
  }
  return c;
}

std::vector<double> rescale01(const std::vector<double>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.5);
  if (v.empty() || *hi <= *lo) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / span;
  return out;
}

}  // namespace

std::string to_string(FrameKind kind) {
  switch (kind) {
    case FrameKind::RedBlue: return "red-blue";
    case FrameKind::Gray: return "gray";
    case FrameKind::TimeSurface: return "time-surface";
    case FrameKind::Voxel: return "voxel";
  }
  return "?";
}

FrameKind parse_frame_kind(const std::string& name) {
  for (auto k : {FrameKind::RedBlue, FrameKind::Gray, FrameKind::TimeSurface,
                 FrameKind::Voxel})
    if (name == to_string(k)) return k;
  throw ValidationError("unknown representation '" + name +
                        "' (expected red-blue, gray, time-surface or voxel)");
}

EventFrame to_red_blue(const EventStream& stream, std::size_t h, std::size_t w) {
  check_dims(h, w);
  auto c = polarity_counts(stream, h, w);
  EventFrame f{FrameKind::RedBlue, h, w, std::vector<double>(h * w * 3, 1.0)};
  for (std::size_t i = 0; i < h * w; ++i) {
    const int p = c.pos[i], n = c.neg[i];
    if (p == 0 && n == 0) continue;
    double* px = f.data.data() + i * 3;
    if (p > n) {
      px[0] = 1, px[1] = 0, px[2] = 0;
    } else if (n > p) {
      px[0] = 0, px[1] = 0, px[2] = 1;
    } else {
      px[0] = 1, px[1] = 0, px[2] = 1;
    }
  }
  return f;
}

EventFrame to_gray(const EventStream& stream, std::size_t h, std::size_t w) {
  check_dims(h, w);
  auto c = polarity_counts(stream, h, w);
  std::vector<int> total(h * w);
  std::vector<int> active;
  for (std::size_t i = 0; i < h * w; ++i) {
    total[i] = c.pos[i] + c.neg[i];
    if (total[i] > 0) active.push_back(total[i]);
  }
  EventFrame f{FrameKind::Gray, h, w, std::vector<double>(h * w * 3, 0.0)};
  if (active.empty()) return f;
  // Nearest-rank 99th percentile over pixels that saw at least one event.
  std::sort(active.begin(), active.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * active.size()));
  const double p99 = active[std::max<std::size_t>(rank, 1) - 1];
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::min(1.0, total[i] / p99);
    f.data[i * 3] = f.data[i * 3 + 1] = f.data[i * 3 + 2] = v;
  }
  return f;
}

EventFrame to_time_surface(const EventStream& stream, std::size_t h, std::size_t w,
                           double tau_us) {
  check_dims(h, w);
  CEIA_REQUIRE(tau_us > 0.0, "time surface: tau must be positive");
  std::vector<long long> last_pos(h * w, -1), last_neg(h * w, -1);
  for (const auto& e : stream.events) {
    const std::size_t idx =
        scale_coord(e.y, h, stream.height) * w + scale_coord(e.x, w, stream.width);
    auto& slot = e.polarity > 0 ? last_pos[idx] : last_neg[idx];
    slot = std::max(slot, static_cast<long long>(e.t));
  }
  const double t_end = static_cast<double>(stream.duration_us);
  EventFrame f{FrameKind::TimeSurface, h, w, std::vector<double>(h * w * 3, 0.0)};
  for (std::size_t i = 0; i < h * w; ++i) {
    if (last_pos[i] >= 0) f.data[i * 3] = std::exp(-(t_end - last_pos[i]) / tau_us);
    if (last_neg[i] >= 0) f.data[i * 3 + 2] = std::exp(-(t_end - last_neg[i]) / tau_us);
  }
  return f;
}

EventFrame to_time_surface(const EventStream& stream, std::size_t h, std::size_t w) {
  const double tau = std::max(1.0, stream.duration_us / 3.0);
  return to_time_surface(stream, h, w, tau);
}

std::vector<double> voxel_grid(const EventStream& stream, std::size_t h, std::size_t w,
                               std::size_t bins) {
  check_dims(h, w);
  CEIA_REQUIRE(bins >= 2, "voxel grid: need at least 2 temporal bins");
  std::vector<double> grid(bins * h * w, 0.0);
  const double span = static_cast<double>(stream.duration_us);
  for (const auto& e : stream.events) {
    const std::size_t idx =
        scale_coord(e.y, h, stream.height) * w + scale_coord(e.x, w, stream.width);
    // Bin centres sit at integer positions 0..B-1 over [0, duration].
    const double tn = span > 0 ? (bins - 1) * (static_cast<double>(e.t) / span) : 0.0;
    const auto lo = std::min(static_cast<std::size_t>(std::floor(tn)), bins - 1);
    const double frac = tn - static_cast<double>(lo);
    grid[lo * h * w + idx] += e.polarity * (1.0 - frac);
    if (frac > 0.0 && lo + 1 < bins) grid[(lo + 1) * h * w + idx] += e.polarity * frac;
  }
  return grid;
}

EventFrame to_voxel(const EventStream& stream, std::size_t h, std::size_t w,
                    std::size_t bins) {
  auto grid = voxel_grid(stream, h, w, bins);
  EventFrame f{FrameKind::Voxel, h, w, std::vector<double>(h * w * 3, 0.0)};
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t ch = b * 3 / bins;
    for (std::size_t i = 0; i < h * w; ++i) f.data[i * 3 + ch] += grid[b * h * w + i];
  }
  return f;
}

EventFrame make_frame(const EventStream& stream, std::size_t h, std::size_t w,
                      const FrameOptions& options) {
  switch (options.kind) {
    case FrameKind::RedBlue: return to_red_blue(stream, h, w);
    case FrameKind::Gray: return to_gray(stream, h, w);
    case FrameKind::TimeSurface:
      return options.tau_us > 0 ? to_time_surface(stream, h, w, options.tau_us)
                                : to_time_surface(stream, h, w);
    case FrameKind::Voxel: return to_voxel(stream, h, w, options.voxel_bins);
  }
  throw ValidationError("make_frame: unknown kind");
}

std::vector<double> normalize_for_encoder(const EventFrame& frame, std::size_t h,
                                          std::size_t w) {
  CEIA_REQUIRE(frame.height == h && frame.width == w && frame.data.size() == h * w * 3,
               "normalize_for_encoder: frame is " + std::to_string(frame.height) + "x" +
                   std::to_string(frame.width) + ", encoder expects " +
                   std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> v = frame.kind == FrameKind::Voxel ? rescale01(frame.data) : frame.data;
  return normalize_image(v);
}

std::vector<double> normalize_image(const std::vector<double>& rgb) {
  std::vector<double> out(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) out[i] = (rgb[i] - 0.5) / 0.5;
  return out;
}

void save_frame_ppm(const EventFrame& frame, const std::filesystem::path& path) {
  std::vector<double> v = frame.kind == FrameKind::Voxel ? rescale01(frame.data) : frame.data;
  std::ofstream out(path, std::ios::binary);
  CEIA_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  for (double x : v)
    out.put(static_cast<char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)));
}

}  // namespace ceia::repr
