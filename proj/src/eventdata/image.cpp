#include "ceia/eventdata/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "ceia/error.hpp"

namespace ceia::eventdata {

namespace {

struct NamedColor {
  const char* name;
  Rgb rgb;
};

// Luminances are kept well away from the 0.5 background so every colour
// produces events at the default contrast threshold.
constexpr NamedColor kColors[] = {
    {"red", {0.9, 0.1, 0.1}},     {"blue", {0.1, 0.2, 0.9}},
    {"yellow", {0.95, 0.9, 0.1}}, {"cyan", {0.1, 0.85, 0.9}},
    {"white", {1.0, 1.0, 1.0}},   {"black", {0.05, 0.05, 0.05}},
};

// Membership test in shape-local coordinates, unit = half the shape size.
bool inside(const std::string& shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r = std::hypot(u, v);
  if (shape == "circle") return r <= 1.0;
  if (shape == "square") return au <= 0.85 && av <= 0.85;
  if (shape == "triangle") {
    // apex up; v grows downwards
    if (v < -0.9 || v > 0.9) return false;
    return au <= (v + 0.9) / 1.8;
  }
  if (shape == "cross") return (au <= 0.33 && av <= 1.0) || (av <= 0.33 && au <= 1.0);
  if (shape == "ring") return r <= 1.0 && r >= 0.55;
  if (shape == "bar") return au <= 1.0 && av <= 0.3;
  if (shape == "ell")
    return (u >= -0.9 && u <= -0.3 && av <= 0.9) || (v >= 0.3 && v <= 0.9 && au <= 0.9);
  if (shape == "dot-grid") {
    for (double cu : {-0.66, 0.0, 0.66})
      for (double cv : {-0.66, 0.0, 0.66})
        if (std::hypot(u - cu, v - cv) <= 0.24) return true;
    return false;
  }
  return false;
}

double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

}  // namespace

const std::vector<std::string>& known_shapes() {
  static const std::vector<std::string> shapes{
      "circle", "square", "triangle", "cross", "ring", "bar", "ell", "dot-grid"};
  return shapes;
}

const std::vector<std::string>& known_colors() {
  static const std::vector<std::string> colors = [] {
    std::vector<std::string> out;
    for (const auto& c : kColors) out.emplace_back(c.name);
    return out;
  }();
  return colors;
}

Rgb color_value(const std::string& color) {
  for (const auto& c : kColors)
    if (color == c.name) return c.rgb;
  throw ValidationError("unknown color class '" + color + "'");
}

LabelSet::LabelSet(std::vector<std::string> shapes, std::vector<std::string> colors)
    : shapes_(std::move(shapes)), colors_(std::move(colors)) {
  CEIA_REQUIRE(!shapes_.empty() && !colors_.empty(), "label set: empty shape or color list");
  for (const auto& s : shapes_)
    CEIA_REQUIRE(std::find(known_shapes().begin(), known_shapes().end(), s) !=
                     known_shapes().end(),
                 "label set: unknown shape class '" + s + "'");
  for (const auto& c : colors_) color_value(c);
}

int LabelSet::label_of(const std::string& shape, const std::string& color) const {
  auto si = std::find(shapes_.begin(), shapes_.end(), shape);
  auto ci = std::find(colors_.begin(), colors_.end(), color);
  CEIA_REQUIRE(si != shapes_.end(), "shape class '" + shape + "' not in label set");
  CEIA_REQUIRE(ci != colors_.end(), "color class '" + color + "' not in label set");
  return static_cast<int>((si - shapes_.begin()) * colors_.size() + (ci - colors_.begin()));
}

std::string LabelSet::shape_of(int label) const {
  CEIA_REQUIRE(label >= 0 && label < num_classes(), "label out of range");
  return shapes_[label / colors_.size()];
}

std::string LabelSet::color_of(int label) const {
  CEIA_REQUIRE(label >= 0 && label < num_classes(), "label out of range");
  return colors_[label % colors_.size()];
}

std::string LabelSet::class_name(int label) const {
  return color_of(label) + " " + shape_of(label);
}

std::vector<std::string> LabelSet::class_names() const {
  std::vector<std::string> out;
  for (int k = 0; k < num_classes(); ++k) out.push_back(class_name(k));
  return out;
}

int LabelSet::label_of_name(const std::string& name) const {
  for (int k = 0; k < num_classes(); ++k)
    if (class_name(k) == name) return k;
  throw ValidationError("class '" + name + "' not in label set");
}

Image render_scene(const SceneSpec& spec, const LabelSet& labels,
                   const RenderConfig& config) {
  const int label = labels.label_of(spec.shape_class, spec.color_class);
  const int h = static_cast<int>(config.height), w = static_cast<int>(config.width);
  CEIA_REQUIRE(h > 0 && w > 0, "render_scene: empty canvas");
  CEIA_REQUIRE(spec.size_px > 0 && spec.size_px <= std::min(h, w),
               "render_scene: size_px " + std::to_string(spec.size_px) +
                   " outside (0, " + std::to_string(std::min(h, w)) + "]");
  CEIA_REQUIRE(spec.row >= 0 && spec.row < h && spec.col >= 0 && spec.col < w,
               "render_scene: position outside canvas");
  CEIA_REQUIRE(config.supersample >= 1, "render_scene: supersample must be >= 1");

  std::mt19937_64 rng(spec.rng_seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double bg = config.background + config.background_jitter * unit(rng);
  const double angle = config.max_rotation_deg * unit(rng) * std::numbers::pi / 180.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double half = 0.5 * spec.size_px;
  const Rgb fg = color_value(spec.color_class);

  Image img;
  img.height = config.height;
  img.width = config.width;
  img.label = label;
  img.pixels.resize(config.height * config.width * 3);
  const int ss = config.supersample;
  const double inv_ss = 1.0 / ss;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double py = y + (sy + 0.5) * inv_ss - (spec.row + 0.5);
          const double px = x + (sx + 0.5) * inv_ss - (spec.col + 0.5);
          const double u = (ca * px + sa * py) / half;
          const double v = (-sa * px + ca * py) / half;
          hits += inside(spec.shape_class, u, v) ? 1 : 0;
        }
      const double cov = static_cast<double>(hits) / (ss * ss);
      img.at(y, x, 0) = quantize((1 - cov) * bg + cov * fg.r);
      img.at(y, x, 1) = quantize((1 - cov) * bg + cov * fg.g);
      img.at(y, x, 2) = quantize((1 - cov) * bg + cov * fg.b);
    }
  return img;
}

void save_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  CEIA_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(
        std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  CEIA_REQUIRE(out.good(), "write failed: " + path.string());
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CEIA_REQUIRE(in.good(), "cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  CEIA_REQUIRE(in.good() && magic == "P6" && maxval == 255 && w > 0 && h > 0,
               "malformed PPM header in " + path.string());
  in.get();
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  CEIA_REQUIRE(in.gcount() == static_cast<std::streamsize>(bytes.size()),
               "truncated PPM " + path.string());
  Image img;
  img.height = h;
  img.width = w;
  img.pixels.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace ceia::eventdata
