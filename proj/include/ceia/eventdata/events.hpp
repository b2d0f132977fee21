#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ceia/eventdata/image.hpp"

namespace ceia::eventdata {

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t = 0;  // microseconds
  std::int8_t polarity = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

// Sort key: timestamp, then row, column, polarity.
bool event_order(const Event& a, const Event& b);

struct EventStream {
  std::vector<Event> events;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t duration_us = 0;

  // Throws ValidationError if any stream invariant is violated.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

// Integer pixel displacement of the scene between two consecutive frames.
struct MotionStep {
  int dx = 0;
  int dy = 0;
};

inline constexpr double kLogEps = 1e-3;

double luminance(double r, double g, double b);

// Moves `image` along `motion` (toroidal wrap; frame k is shifted by the sum
// of the first k steps) and, for every pixel and consecutive frame pair,
// emits floor(|dlog| / threshold) events of polarity sign(dlog), with
// timestamps spaced uniformly inside the inter-frame interval.
EventStream simulate_events(const Image& image, std::span<const MotionStep> motion,
                            double threshold, std::uint64_t frame_dt_us);

// Event CSV: optional "# width height duration_us" line, then header
// "t_us,x,y,p", one event per row.
void save_events_csv(const EventStream& stream, const std::filesystem::path& path);
EventStream load_events_csv(const std::filesystem::path& path);

// Event binary: "EVST", u32 version=1, u32 width, u32 height, u64 duration,
// u64 count, then count x (u64 t, u16 x, u16 y, i8 p), little-endian.
void save_events_binary(const EventStream& stream, const std::filesystem::path& path);
EventStream load_events_binary(const std::filesystem::path& path);

// Dispatches on the file's leading bytes.
void save_events(const EventStream& stream, const std::filesystem::path& path);
EventStream load_events(const std::filesystem::path& path);

}  // namespace ceia::eventdata
