#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stx/tensor.hpp"

namespace stx {

// 8-bit interleaved image (row-major, c channels per pixel).
struct ImageU8 {
  Index h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(Index y, Index x, Index ch) const {
    return data[static_cast<std::size_t>((y * w + x) * c + ch)];
  }
  std::uint8_t& at(Index y, Index x, Index ch) {
    return data[static_cast<std::size_t>((y * w + x) * c + ch)];
  }
};

// H x W integer class ids in [0, num_classes).
struct LabelMap {
  Index h = 0, w = 0;
  int num_classes = 0;
  std::vector<int> ids;

  int at(Index y, Index x) const { return ids[static_cast<std::size_t>(y * w + x)]; }
  int& at(Index y, Index x) { return ids[static_cast<std::size_t>(y * w + x)]; }
};

// Lossless binary PPM (P6, RGB) and PGM (P5, single channel).
void write_ppm(const ImageU8& img, const std::filesystem::path& path);
ImageU8 read_ppm(const std::filesystem::path& path);
void write_pgm_labels(const LabelMap& labels, const std::filesystem::path& path);
LabelMap read_pgm_labels(const std::filesystem::path& path, int num_classes);

// [0, 255] u8 <-> [-1, 1] float, 3 x H x W.
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

}  // namespace stx
