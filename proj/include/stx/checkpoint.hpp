#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "stx/tensor.hpp"

namespace stx {

// Binary tensor archive. Layout:
//   magic "STXTNSR1" (8 bytes), version u32,
//   then per-tensor records until EOF:
//     name_len u32, name bytes, rank u32, extents u64[rank],
//     payload float64[numel], all little-endian.
struct TensorArchive {
  std::map<std::string, Tensor> tensors;

  void put(const std::string& name, const Tensor& t);
  const Tensor& get(const std::string& name) const;  // throws IoError if absent
  bool contains(const std::string& name) const;
};

// Atomic write (temp file + rename).
void save_archive(const TensorArchive& a, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace stx
