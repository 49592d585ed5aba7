#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sadl/image.hpp"
#include "sadl/image_ops.hpp"
#include "sadl/rng.hpp"
#include "sadl/tape.hpp"

namespace sadl {

// Axis-aligned box in original-image pixels: top-left column u, top-left
// row v, width w, height h.
struct BBox {
  int u = 0, v = 0, w = 0, h = 0;
  bool contains(int row, int col) const {
    return row >= v && row < v + h && col >= u && col < u + w;
  }
  long area() const { return static_cast<long>(w) * h; }
  bool operator==(const BBox&) const = default;
};

struct Point {
  int r = 0, c = 0;
  bool operator==(const Point&) const = default;
};

// Class-indexed sampled pixel coordinates in original-image space.
// pts[0] holds background points (k = 1), pts[1] foreground (k = 2).
struct PointSet {
  std::array<std::vector<Point>, 2> pts;

  const std::vector<Point>& of_class(int k) const {
    return pts[static_cast<std::size_t>(k - 1)];
  }
  std::vector<Point>& of_class(int k) {
    return pts[static_cast<std::size_t>(k - 1)];
  }
};

// Crop window the view occupies in the original image. Flips do not move
// the window, so this is the record's crop box.
BBox reverse_geom(const GeomAugRecord& rec);

// Axis-aligned intersection; empty -> nullopt.
std::optional<BBox> overlap(const BBox& a, const BBox& b);

// Draws N points per class uniformly with replacement from the pixels of
// the given class inside bb. Throws ClassAbsentError(k) when a class has
// no pixel in bb. Background is drawn first, then foreground.
PointSet sample_points(const Mask& mask, const BBox& bb, int n_points,
                       Rng& rng);

// Maps original-image points into view coordinates under rec:
// p' = floor((p - crop_origin) * out_size / crop_size), then flip
// reindexing. Throws PointOutsideCropError for points outside the window.
std::vector<Point> map_points(const std::vector<Point>& pts,
                              const GeomAugRecord& rec);

// Integer floor division of both axes by ds, clamped to feature bounds.
std::vector<Point> downscale_points(const std::vector<Point>& view_pts, int ds,
                                    int feat_h, int feat_w);

// Convenience conversion for the tape's gather op.
std::vector<std::pair<Index, Index>> to_coords(const std::vector<Point>& pts);

// Majority-vote downscaling of a view-space mask by ds (ties go to
// background), used by masked_pool.
Mask downscale_mask_majority(const Mask& view_mask, int ds);

// Mean feature vector over the feature-map cells whose majority-downscaled
// mask equals class_k - 1. Differentiable through X.
TensorT<double> masked_pool(Tape& tape, const TensorT<double>& feat_chw,
                            const Mask& view_mask, int class_k, int ds);

}  // namespace sadl
