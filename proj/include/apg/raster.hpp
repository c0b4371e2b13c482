#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apg/error.hpp"

namespace apg {

struct Shape {
  int height = 0;
  int width = 0;

  std::size_t size() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < height && col < width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense row-major H×W raster.
template <class T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  explicit Raster(Shape shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Raster(int height, int width, T fill = T{}) : Raster(Shape{height, width}, fill) {}
  Raster(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "raster data length " + std::to_string(data_.size()) + " does not match " + to_string(shape_));
    }
  }

  Shape shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int row, int col) { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const { return data_[index(row, col)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(shape_.width) + static_cast<std::size_t>(col);
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// 0/1 per pixel. uint8 instead of bool so the storage is addressable.
using BinaryMask = Raster<std::uint8_t>;
/// 0 = background, k > 0 = instance k. Labels need not be consecutive.
using LabelMap = Raster<std::int32_t>;
using FloatMap = Raster<float>;

inline void require_same_shape(Shape a, Shape b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
  }
}

inline std::int64_t area(const BinaryMask& mask) {
  std::int64_t n = 0;
  for (auto v : mask.values()) n += v != 0;
  return n;
}

/// Pixel rectangle [row0, row0+height) × [col0, col0+width).
struct Box {
  int row0 = 0;
  int col0 = 0;
  int height = 0;
  int width = 0;

  bool empty() const { return height <= 0 || width <= 0; }
  int row1() const { return row0 + height; }
  int col1() const { return col0 + width; }
  bool contains(int row, int col) const { return row >= row0 && row < row1() && col >= col0 && col < col1(); }
  friend bool operator==(const Box&, const Box&) = default;
};

inline Box intersect(const Box& a, const Box& b) {
  const int r0 = std::max(a.row0, b.row0);
  const int c0 = std::max(a.col0, b.col0);
  const int r1 = std::min(a.row1(), b.row1());
  const int c1 = std::min(a.col1(), b.col1());
  if (r1 <= r0 || c1 <= c0) return {};
  return {r0, c0, r1 - r0, c1 - c0};
}

/// Tight bounding box of pixels satisfying `pred`; empty Box if none do.
template <class T, class Pred>
Box bounding_box(const Raster<T>& r, Pred pred) {
  int r0 = r.height(), c0 = r.width(), r1 = -1, c1 = -1;
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x) {
      if (pred(r(y, x))) {
        r0 = std::min(r0, y);
        r1 = std::max(r1, y);
        c0 = std::min(c0, x);
        c1 = std::max(c1, x);
      }
    }
  }
  if (r1 < 0) return {};
  return {r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

template <class T>
Raster<T> crop(const Raster<T>& r, const Box& box) {
  Raster<T> out(box.height, box.width);
  for (int y = 0; y < box.height; ++y) {
    for (int x = 0; x < box.width; ++x) out(y, x) = r(box.row0 + y, box.col0 + x);
  }
  return out;
}

}  // namespace apg
