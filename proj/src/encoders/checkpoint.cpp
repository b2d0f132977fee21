#include "ceia/encoders/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "ceia/error.hpp"

namespace ceia::encoders {

namespace {

constexpr char kMagic[4] = {'C', 'E', 'I', 'A'};

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <class U>
  U get() {
    std::array<unsigned char, sizeof(U)> buf{};
    read(buf.data(), buf.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    CEIA_REQUIRE(in_.gcount() == static_cast<std::streamsize>(n),
                 "truncated checkpoint " + path_.string());
  }

 private:
  std::istream& in_;
  const std::filesystem::path& path_;
};

}  // namespace

void Checkpoint::put(const std::string& name, const gradnet::Tensor& t) {
  put(name, t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

void Checkpoint::put(const std::string& name, gradnet::Shape shape, std::vector<double> data) {
  CEIA_REQUIRE(gradnet::numel(shape) == data.size(), "checkpoint: shape/data mismatch for " + name);
  CEIA_REQUIRE(!name.empty() && name.size() < 65536, "checkpoint: bad array name");
  arrays[name] = NamedArray{std::move(shape), std::move(data), DType::F64};
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  auto it = arrays.find(name);
  CEIA_REQUIRE(it != arrays.end(), "checkpoint: missing array '" + name + "'");
  return it->second;
}

void Checkpoint::assign(const std::string& name, gradnet::Tensor& t) const {
  const auto& a = get(name);
  CEIA_REQUIRE(a.shape == t.shape(), "checkpoint: array '" + name + "' has shape " +
                                         gradnet::shape_str(a.shape) + ", expected " +
                                         gradnet::shape_str(t.shape()));
  std::copy(a.data.begin(), a.data.end(), t.mutable_values().begin());
}

double Checkpoint::scalar(const std::string& name) const {
  const auto& a = get(name);
  CEIA_REQUIRE(a.data.size() == 1, "checkpoint: '" + name + "' is not a scalar");
  return a.data[0];
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  CEIA_REQUIRE(out.good(), "cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, arr] : ckpt.arrays) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(arr.dtype));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(arr.shape.size()));
    for (auto d : arr.shape) put_le<std::uint64_t>(out, d);
    for (double v : arr.data) {
      if (arr.dtype == DType::F32)
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  CEIA_REQUIRE(out.good(), "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CEIA_REQUIRE(in.good(), "cannot open checkpoint " + path.string());
  Reader r(in, path);
  char magic[4];
  r.read(magic, 4);
  CEIA_REQUIRE(std::memcmp(magic, kMagic, 4) == 0, path.string() + ": bad magic, not a CEIA checkpoint");
  const auto version = r.get<std::uint32_t>();
  CEIA_REQUIRE(version == Checkpoint::kVersion,
               path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name(len, '\0');
    r.read(name.data(), len);
    NamedArray arr;
    const auto dtype = r.get<std::uint8_t>();
    CEIA_REQUIRE(dtype <= 1, path.string() + ": unknown dtype for '" + name + "'");
    arr.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) arr.shape.push_back(r.get<std::uint64_t>());
    const auto n = gradnet::numel(arr.shape);
    CEIA_REQUIRE(n < (std::size_t{1} << 32), path.string() + ": implausible array size");
    arr.data.resize(n);
    for (auto& v : arr.data) {
      if (arr.dtype == DType::F32)
        v = std::bit_cast<float>(r.get<std::uint32_t>());
      else
        v = std::bit_cast<double>(r.get<std::uint64_t>());
    }
    CEIA_REQUIRE(ckpt.arrays.emplace(std::move(name), std::move(arr)).second,
                 path.string() + ": duplicate array name");
  }
  CEIA_REQUIRE(in.peek() == std::char_traits<char>::eof(),
               path.string() + ": trailing bytes after last array");
  return ckpt;
}

}  // namespace ceia::encoders
