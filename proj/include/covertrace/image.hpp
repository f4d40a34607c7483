#pragma once

#include "covertrace/common.hpp"

#include <vector>

namespace covertrace {

// Linear RGB image, row-major, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0) {}

  size_t offset(int x, int y) const { return (static_cast<size_t>(y) * width + x) * 3; }
  Rgb at(int x, int y) const {
    const size_t o = offset(x, y);
    return Rgb(data[o], data[o + 1], data[o + 2]);
  }
  void set(int x, int y, const Rgb& c) {
    const size_t o = offset(x, y);
    data[o] = c[0];
    data[o + 1] = c[1];
    data[o + 2] = c[2];
  }
  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height;
  }
};

}  // namespace covertrace
