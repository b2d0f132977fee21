#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ceia/eventdata/events.hpp"

namespace ceia::repr {

enum class FrameKind { RedBlue, Gray, TimeSurface, Voxel };

std::string to_string(FrameKind kind);
FrameKind parse_frame_kind(const std::string& name);

// H x W x 3 interleaved.
struct EventFrame {
  FrameKind kind = FrameKind::RedBlue;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * 3 + c];
  }
};

// Sensor coordinates are mapped to the (H, W) grid by nearest-neighbour
// scaling: x' = floor(x * W / sensor_width).

EventFrame to_red_blue(const eventdata::EventStream& stream, std::size_t h, std::size_t w);
EventFrame to_gray(const eventdata::EventStream& stream, std::size_t h, std::size_t w);
EventFrame to_time_surface(const eventdata::EventStream& stream, std::size_t h,
                           std::size_t w, double tau_us);
// tau defaults to duration / 3.
EventFrame to_time_surface(const eventdata::EventStream& stream, std::size_t h,
                           std::size_t w);

// Raw B x H x W signed voxel grid before the channel reduction.
std::vector<double> voxel_grid(const eventdata::EventStream& stream, std::size_t h,
                               std::size_t w, std::size_t bins);
EventFrame to_voxel(const eventdata::EventStream& stream, std::size_t h, std::size_t w,
                    std::size_t bins);

struct FrameOptions {
  FrameKind kind = FrameKind::RedBlue;
  std::size_t voxel_bins = 9;
  double tau_us = 0.0;  // <= 0 selects duration / 3
};

EventFrame make_frame(const eventdata::EventStream& stream, std::size_t h, std::size_t w,
                      const FrameOptions& options);

// Maps a frame into encoder input range [-1, 1] with mean 0.5 / std 0.5 per
// channel; voxel frames are min-max rescaled to [0, 1] first.
std::vector<double> normalize_for_encoder(const EventFrame& frame, std::size_t h,
                                          std::size_t w);

// Same standardisation for an RGB image in [0, 1].
std::vector<double> normalize_image(const std::vector<double>& rgb);

// Writes the frame as an 8-bit PPM (voxel frames min-max rescaled).
void save_frame_ppm(const EventFrame& frame, const std::filesystem::path& path);

}  // namespace ceia::repr
