#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bfp {

namespace detail {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

}  // namespace detail

// Dense row-major array. The last extent varies fastest.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t(1),
                              std::multiplies<>()),
              fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != size_from_shape()) {
      detail::fail("tensor data length " + std::to_string(data_.size()) +
                   " does not match shape " + detail::shape_str(shape_));
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 3D accessors for the ubiquitous C×H×W layout.
  T& at3(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at3(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  T& at2(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }
  const T& at2(std::size_t y, std::size_t x) const {
    return data_[y * shape_[1] + x];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* where) const {
    if (!same_shape(other)) {
      detail::fail(std::string(where) + ": shape mismatch " +
                   detail::shape_str(shape_) + " vs " +
                   detail::shape_str(other.shape_));
    }
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t size_from_shape() const {
    return std::accumulate(shape_.begin(), shape_.end(), std::size_t(1),
                           std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Integer class map with an optional ignore value (dataset convention: 255).
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  int num_classes = 0;
  int ignore_value = 255;
  std::vector<int> values;  // row-major, height*width entries

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, int classes, int ignore = 255)
      : height(h), width(w), num_classes(classes), ignore_value(ignore),
        values(h * w, 0) {}

  int& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  int at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

  bool operator==(const LabelMap& o) const {
    return height == o.height && width == o.width && values == o.values;
  }
};

}  // namespace bfp
