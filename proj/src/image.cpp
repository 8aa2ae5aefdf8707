#include "stx/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace stx {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (!std::isspace(ch)) {
      tok.push_back(static_cast<char>(ch));
      while ((ch = is.get()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(ch));
      break;
    }
  }
  return tok;
}

}  // namespace

void write_ppm(const ImageU8& img, const std::filesystem::path& path) {
  if (img.c != 3) throw IoError("write_ppm expects a 3-channel image");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path.string());
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

ImageU8 read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  if (next_token(is) != "P6") throw IoError("not a binary PPM: " + path.string());
  ImageU8 img;
  img.w = std::stol(next_token(is));
  img.h = std::stol(next_token(is));
  if (next_token(is) != "255") throw IoError("unsupported PPM maxval in " + path.string());
  img.c = 3;
  img.data.resize(static_cast<std::size_t>(img.h * img.w * 3));
  is.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!is) throw IoError("truncated PPM: " + path.string());
  return img;
}

void write_pgm_labels(const LabelMap& labels, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path.string());
  os << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  for (int id : labels.ids) {
    if (id < 0 || id > 255) throw IoError("label id out of byte range");
    os.put(static_cast<char>(id));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

LabelMap read_pgm_labels(const std::filesystem::path& path, int num_classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  if (next_token(is) != "P5") throw IoError("not a binary PGM: " + path.string());
  LabelMap lm;
  lm.w = std::stol(next_token(is));
  lm.h = std::stol(next_token(is));
  if (next_token(is) != "255") throw IoError("unsupported PGM maxval in " + path.string());
  lm.num_classes = num_classes;
  lm.ids.resize(static_cast<std::size_t>(lm.h * lm.w));
  for (auto& id : lm.ids) {
    int ch = is.get();
    if (ch == EOF) throw IoError("truncated PGM: " + path.string());
    if (ch >= num_classes) throw IoError("label id exceeds class count in " + path.string());
    id = ch;
  }
  return lm;
}

Tensor image_to_tensor(const ImageU8& img) {
  if (img.c != 3) throw ShapeError("image_to_tensor expects 3 channels");
  Array v(3 * img.h * img.w);
  for (Index y = 0; y < img.h; ++y) {
    for (Index x = 0; x < img.w; ++x) {
      for (Index ch = 0; ch < 3; ++ch) {
        v[(ch * img.h + y) * img.w + x] =
            static_cast<double>(img.at(y, x, ch)) / 127.5 - 1.0;
      }
    }
  }
  return Tensor::from_array({3, img.h, img.w}, std::move(v));
}

ImageU8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image expects 3 x H x W");
  Index h = t.dim(1), w = t.dim(2);
  ImageU8 img{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * h * w))};
  const Array& v = t.value();
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index ch = 0; ch < 3; ++ch) {
        double f = (std::clamp(v[(ch * h + y) * w + x], -1.0, 1.0) + 1.0) * 127.5;
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::llround(f));
      }
    }
  }
  return img;
}

}  // namespace stx
