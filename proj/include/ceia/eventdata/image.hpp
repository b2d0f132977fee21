#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ceia::eventdata {

// H x W x 3 interleaved RGB in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  int label = -1;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct Rgb {
  double r, g, b;
};

const std::vector<std::string>& known_shapes();
const std::vector<std::string>& known_colors();
Rgb color_value(const std::string& color);

// Classes are (shape, color) pairs; label = shape_index * colors + color_index.
class LabelSet {
 public:
  LabelSet(std::vector<std::string> shapes, std::vector<std::string> colors);

  int num_classes() const { return static_cast<int>(shapes_.size() * colors_.size()); }
  int label_of(const std::string& shape, const std::string& color) const;
  std::string shape_of(int label) const;
  std::string color_of(int label) const;
  // "<color> <shape>", the class name used in captions.
  std::string class_name(int label) const;
  std::vector<std::string> class_names() const;
  int label_of_name(const std::string& class_name) const;

  const std::vector<std::string>& shapes() const { return shapes_; }
  const std::vector<std::string>& colors() const { return colors_; }

 private:
  std::vector<std::string> shapes_;
  std::vector<std::string> colors_;
};

struct SceneSpec {
  std::string shape_class;
  std::string color_class;
  int size_px = 12;
  int row = 16;  // shape centre
  int col = 16;
  std::uint64_t rng_seed = 0;
};

struct RenderConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  double background = 0.5;
  double background_jitter = 0.05;
  double max_rotation_deg = 15.0;
  int supersample = 4;
};

// Anti-aliased shape on a neutral background. Background level and rotation
// are drawn from rng_seed; pixels are quantised to 8-bit levels so that PPM
// storage is lossless.
Image render_scene(const SceneSpec& spec, const LabelSet& labels,
                   const RenderConfig& config = {});

void save_ppm(const Image& image, const std::filesystem::path& path);
Image load_ppm(const std::filesystem::path& path);

}  // namespace ceia::eventdata
