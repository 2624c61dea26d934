#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace nanotile {

struct Shape3 {
  int k = 0;
  int h = 0;
  int w = 0;

  std::size_t elems() const { return static_cast<std::size_t>(k) * h * w; }
  std::size_t bytes() const { return elems() * 2; }  // Q4.12 elements

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Channel-major, then row-major.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.elems(), fill) {}
  Tensor3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.elems()) throw std::invalid_argument("tensor buffer length mismatch");
  }

  const Shape3& shape() const { return shape_; }
  int channels() const { return shape_.k; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }

  T& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.h + y) * shape_.w + x;
  }

  Shape3 shape_;
  std::vector<T> data_;
};

}  // namespace nanotile
