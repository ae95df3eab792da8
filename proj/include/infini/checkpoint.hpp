// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. All integers are little-endian.
//
//   magic        8 bytes   "INFICKPT"
//   version      u32       1
//   config_len   u64, then config_len bytes of UTF-8 text
//   tensor_count u32
//   per tensor:  name_len u32, name bytes, ndim u32, dims u64 x ndim,
//                dtype u32 (0 = float32), offset u64 (bytes from payload start)
//   payload      raw float32 values, little-endian, in table order

#ifndef INFINI_CHECKPOINT_HPP_
#define INFINI_CHECKPOINT_HPP_

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "infini/tensor.hpp"

namespace infini {

inline constexpr std::array<char, 8> kCheckpointMagic = {'I', 'N', 'F', 'I', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  const NamedTensor& at(const std::string& name) const {
    if (auto* t = find(name)) return *t;
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
  }
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  template <class U>
  void uint(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os_.write(reinterpret_cast<const char*>(b), sizeof(U));
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void f32(float f) { uint(std::bit_cast<std::uint32_t>(f)); }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& is) : is_(is) {}
  template <class U>
  U uint() {
    unsigned char b[sizeof(U)];
    read(b, sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }
  void read(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw CheckpointError("checkpoint truncated");
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    if (n) read(s.data(), n);
    return s;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    detail::LeWriter w(os);
    w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.uint<std::uint32_t>(kCheckpointVersion);
    w.uint<std::uint64_t>(ck.config_text.size());
    w.bytes(ck.config_text.data(), ck.config_text.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& t : ck.tensors) {
      if (numel(t.shape) != t.values.size()) throw CheckpointError("tensor '" + t.name + "' shape/value mismatch");
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
      w.bytes(t.name.data(), t.name.size());
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) w.uint<std::uint64_t>(d);
      w.uint<std::uint32_t>(kDtypeFloat32);
      w.uint<std::uint64_t>(offset);
      offset += t.values.size() * sizeof(float);
    }
    for (const auto& t : ck.tensors) {
      for (float f : t.values) w.f32(f);
    }
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  detail::LeReader r(is);
  std::array<char, 8> magic{};
  r.read(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_text = r.string(r.uint<std::uint64_t>());
  const auto count = r.uint<std::uint32_t>();
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.string(r.uint<std::uint32_t>());
    const auto ndim = r.uint<std::uint32_t>();
    for (std::uint32_t k = 0; k < ndim; ++k) t.shape.push_back(r.uint<std::uint64_t>());
    if (r.uint<std::uint32_t>() != kDtypeFloat32) throw CheckpointError("tensor '" + t.name + "' has unknown dtype");
    offsets.push_back(r.uint<std::uint64_t>());
    ck.tensors.push_back(std::move(t));
  }
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& t = ck.tensors[i];
    if (offsets[i] != expected) throw CheckpointError("tensor '" + t.name + "' has a non-contiguous offset");
    const auto n = numel(t.shape);
    t.values.resize(n);
    for (auto& f : t.values) f = r.f32();
    expected += n * sizeof(float);
  }
  return ck;
}

}  // namespace infini

#endif  // INFINI_CHECKPOINT_HPP_
