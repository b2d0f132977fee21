#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ceia/gradnet/tensor.hpp"

namespace ceia::encoders {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedArray {
  gradnet::Shape shape;
  std::vector<double> data;
  DType dtype = DType::F64;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

// Named arrays, written in name order:
//   "CEIA", u32 version=1, u32 count, then per array
//   u16 name length, name bytes, u8 dtype, u8 rank, u64 dims..., raw LE data.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::map<std::string, NamedArray> arrays;

  void put(const std::string& name, const gradnet::Tensor& t);
  void put(const std::string& name, gradnet::Shape shape, std::vector<double> data);
  bool has(const std::string& name) const { return arrays.count(name) > 0; }
  const NamedArray& get(const std::string& name) const;
  // Copies into `t` after checking the shape.
  void assign(const std::string& name, gradnet::Tensor& t) const;
  double scalar(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ceia::encoders
