#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "splat/error.hpp"
#include "splat/tensor.hpp"

namespace splat {

// "FT32" tensor container: magic bytes, little-endian u32 ndim, ndim u32
// extents, raw little-endian f32 payload in row-major order.
//
// Writers assume a little-endian host (checked once at runtime).

namespace detail {
inline void require_little_endian() {
  const std::uint32_t probe = 1;
  char c;
  std::memcpy(&c, &probe, 1);
  if (c != 1) throw ConfigError("FT32 io requires a little-endian host");
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw FormatError("FT32: truncated header");
  return v;
}
}  // namespace detail

inline void ft32_write(std::ostream& os, const DTensor& t) {
  detail::require_little_endian();
  os.write("FT32", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i)
    detail::write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

inline void ft32_save(const std::string& path, const DTensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("FT32: cannot open for writing: " + path);
  ft32_write(f, t);
  if (!f) throw FormatError("FT32: write failed: " + path);
}

inline DTensor ft32_read(std::istream& is) {
  detail::require_little_endian();
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FT32", 4) != 0)
    throw FormatError("FT32: bad magic");
  const std::uint32_t ndim = detail::read_u32(is);
  if (ndim == 0 || ndim > 8) throw FormatError("FT32: unreasonable ndim");
  std::vector<int> shape(ndim);
  std::size_t n = 1;
  for (auto& e : shape) {
    const std::uint32_t v = detail::read_u32(is);
    if (v == 0) throw FormatError("FT32: zero extent");
    e = static_cast<int>(v);
    n *= v;
  }
  std::vector<float> data(n);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw FormatError("FT32: truncated payload");
  return DTensor::from(std::move(shape), std::move(data));
}

inline DTensor ft32_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("FT32: cannot open: " + path);
  return ft32_read(f);
}

}  // namespace splat
