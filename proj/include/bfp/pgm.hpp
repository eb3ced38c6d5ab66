#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "bfp/tensor.hpp"

namespace bfp {

// Binary PGM (P5). Label maps use 8-bit samples while num_classes+ignore fit
// in a byte, otherwise 16-bit big-endian per the PGM convention.

inline void write_pgm(const std::string& path, const LabelMap& labels) {
  int maxval = 0;
  for (int v : labels.values) maxval = std::max(maxval, v);
  maxval = std::max(maxval, labels.num_classes > 0 ? labels.num_classes : 1);
  const bool wide = maxval > 255;
  if (!wide) maxval = 255;
  std::ofstream os(path, std::ios::binary);
  if (!os) detail::fail("cannot open for writing: " + path);
  os << "P5\n" << labels.width << " " << labels.height << "\n" << maxval
     << "\n";
  for (int v : labels.values) {
    if (wide) {
      os.put(static_cast<char>((v >> 8) & 0xff));
      os.put(static_cast<char>(v & 0xff));
    } else {
      os.put(static_cast<char>(v & 0xff));
    }
  }
  if (!os) detail::fail("write failed: " + path);
}

namespace detail {

inline int pgm_token(std::istream& is) {
  // Skips whitespace and '#' comment lines, then parses one integer.
  int c = is.get();
  while (is) {
    if (c == '#') {
      while (is && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  int value = 0;
  bool any = false;
  while (is && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) fail("malformed PGM: expected integer token");
  return value;
}

}  // namespace detail

inline LabelMap read_pgm(const std::string& path, int num_classes = 0,
                         int ignore_value = 255) {
  std::ifstream is(path, std::ios::binary);
  if (!is) detail::fail("cannot open: " + path);
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '5') detail::fail("malformed PGM: magic != P5");
  const int w = detail::pgm_token(is);
  const int h = detail::pgm_token(is);
  const int maxval = detail::pgm_token(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    detail::fail("malformed PGM: bad header values");
  LabelMap labels(static_cast<std::size_t>(h), static_cast<std::size_t>(w),
                  num_classes, ignore_value);
  const bool wide = maxval > 255;
  for (auto& v : labels.values) {
    if (wide) {
      const int hi = is.get(), lo = is.get();
      v = (hi << 8) | lo;
    } else {
      v = is.get();
    }
    if (!is) detail::fail("malformed PGM: truncated pixel data");
  }
  return labels;
}

// 8-bit confidence map export: sample = round(255 * value).
template <typename T>
void write_confidence_pgm(const std::string& path, const Tensor<T>& map) {
  const std::size_t h = map.extent(0), w = map.extent(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) detail::fail("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    const int v = static_cast<int>(std::lround(255.0 * map[i]));
    os.put(static_cast<char>(std::clamp(v, 0, 255)));
  }
}

}  // namespace bfp
