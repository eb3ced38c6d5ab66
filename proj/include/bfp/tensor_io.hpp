#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "bfp/tensor.hpp"

namespace bfp {

// Portable tensor file:
//   magic "BFPT", 1-byte dtype (0=f32, 1=f64), 1-byte rank,
//   rank x 4-byte little-endian unsigned extents, raw LE values row-major.

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("BFPT", 4);
  const std::uint8_t dtype = detail::dtype_code<T>();
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(rank));
  for (std::size_t i = 0; i < t.rank(); ++i)
    detail::put_u32_le(os, static_cast<std::uint32_t>(t.extent(i)));
  // x86/arm little-endian hosts write values verbatim.
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) detail::fail("cannot open for writing: " + path);
  write_tensor(os, t);
  if (!os) detail::fail("write failed: " + path);
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BFPT", 4) != 0)
    detail::fail("tensor file: bad magic, expected BFPT");
  const int dtype = is.get();
  const int rank = is.get();
  if (dtype != detail::dtype_code<T>()) {
    detail::fail("tensor file: dtype code " + std::to_string(dtype) +
                 " does not match requested element type");
  }
  std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
  for (auto& e : shape) e = detail::get_u32_le(is);
  Tensor<T> t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!is) detail::fail("tensor file: truncated data section");
  return t;
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) detail::fail("cannot open: " + path);
  return read_tensor<T>(is);
}

}  // namespace bfp
