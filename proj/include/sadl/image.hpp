#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>

#include "sadl/errors.hpp"

namespace sadl {

using Grid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic>;
using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// RGB image, values in [0, 1], indexed (row, col).
struct ImageRGB {
  int h = 0, w = 0;
  std::array<Grid, 3> ch;

  ImageRGB() = default;
  ImageRGB(int height, int width) : h(height), w(width) {
    for (auto& c : ch) c = Grid::Zero(height, width);
  }

  double& at(int c, int r, int col) { return ch[(std::size_t)c](r, col); }
  double at(int c, int r, int col) const { return ch[(std::size_t)c](r, col); }

  void clamp01() {
    for (auto& c : ch) c = c.cwiseMax(0.0).cwiseMin(1.0);
  }
  bool same_size(const ImageRGB& o) const { return h == o.h && w == o.w; }
};

// Binary mask: 0 = background, 1 = foreground.
struct Mask {
  int h = 0, w = 0;
  MaskGrid v;

  Mask() = default;
  Mask(int height, int width) : h(height), w(width) {
    v = MaskGrid::Zero(height, width);
  }

  std::uint8_t& at(int r, int c) { return v(r, c); }
  std::uint8_t at(int r, int c) const { return v(r, c); }
  long count() const { return (v > std::uint8_t(0)).count(); }
  bool same_size(const Mask& o) const { return h == o.h && w == o.w; }
};

// Real-valued blend weights in [0, 1].
struct AlphaMap {
  int h = 0, w = 0;
  Grid v;

  AlphaMap() = default;
  AlphaMap(int height, int width) : h(height), w(width) {
    v = Grid::Zero(height, width);
  }
  explicit AlphaMap(const Mask& m) : h(m.h), w(m.w) {
    v = m.v.cast<double>();
  }
};

inline void require_same_size(const ImageRGB& a, const ImageRGB& b,
                              const char* what) {
  if (!a.same_size(b)) throw ShapeError(std::string(what) + ": size mismatch");
}

}  // namespace sadl
