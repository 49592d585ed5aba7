#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sadl/tensor.hpp"

namespace sadl {

// Named parameter array stored as little-endian float32.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Binary layout: "SADL" magic, u32 version, u32 tensor count; per tensor a
// u16 name length, the name bytes, u8 rank, u32 dims, then the float32
// payload; finally the metadata text block runs to end of file.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::vector<NamedTensor> tensors;
  std::string metadata;  // UTF-8 key=value lines

  const NamedTensor* find(const std::string& name) const;
  void add(const std::string& name, const Tensor& t);
  Tensor to_tensor(const NamedTensor& nt) const;
  // Expected file size for this content, from the header formula.
  std::size_t byte_size() const;
};

void checkpoint_save(const Checkpoint& ckpt, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace sadl
