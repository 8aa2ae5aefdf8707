#include "stx/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace stx {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'X', 'T', 'N', 'S', 'R', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

void TensorArchive::put(const std::string& name, const Tensor& t) {
  tensors.insert_or_assign(name, t.detach());
}

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("archive record missing: " + name);
  return it->second;
}

bool TensorArchive::contains(const std::string& name) const {
  return tensors.count(name) != 0;
}

void save_archive(const TensorArchive& a, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kVersion);
    for (const auto& [name, t] : a.tensors) {
      write_pod(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Shape& s = t.shape();
      write_pod(os, static_cast<std::uint32_t>(s.size()));
      for (Index e : s) write_pod(os, static_cast<std::uint64_t>(e));
      os.write(reinterpret_cast<const char*>(t.value().data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad magic in " + path.string());
  }
  std::uint32_t version = 0;
  if (!read_pod(is, version) || version != kVersion) {
    throw IoError("unsupported archive version in " + path.string());
  }
  TensorArchive a;
  for (;;) {
    std::uint32_t name_len = 0;
    if (!read_pod(is, name_len)) break;  // clean EOF
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t rank = 0;
    if (!read_pod(is, rank)) throw IoError("truncated record in " + path.string());
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint64_t e = 0;
      if (!read_pod(is, e)) throw IoError("truncated record in " + path.string());
      shape[i] = static_cast<Index>(e);
    }
    Index n = numel(shape);
    Array data(n);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(n)));
    if (!is) throw IoError("truncated payload in " + path.string());
    a.tensors.insert_or_assign(std::move(name),
                               Tensor::from_array(std::move(shape), std::move(data)));
  }
  return a;
}

}  // namespace stx
