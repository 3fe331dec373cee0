#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

#include "hoisplat/core.hpp"

namespace hoi {

// Dense row-major image with C channels interleaved per pixel.
template <int C>
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;  // height * width * C

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(size_t(w) * h * C, fill) {}

  double* at(int x, int y) { return data.data() + (size_t(y) * width + x) * C; }
  const double* at(int x, int y) const { return data.data() + (size_t(y) * width + x) * C; }

  bool same_dims(int w, int h) const { return width == w && height == h; }
  size_t pixel_count() const { return size_t(width) * height; }
};

using ImageRgb = Image<3>;
using ImageGray = Image<1>;

inline Vec3 pixel3(const ImageRgb& im, int x, int y) {
  const double* p = im.at(x, y);
  return Vec3(p[0], p[1], p[2]);
}

inline void set_pixel3(ImageRgb& im, int x, int y, const Vec3& v) {
  double* p = im.at(x, y);
  p[0] = v.x();
  p[1] = v.y();
  p[2] = v.z();
}

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hoi
