#pragma once

#include <string>
#include <vector>

#include "sadl/image.hpp"
#include "sadl/image_ops.hpp"
#include "sadl/rng.hpp"

namespace sadl {

struct ViewGenConfig {
  ColorAugConfig color;
  GeomAugConfig geom;
  // Background-swap compositing. Erosion strictly deeper than the blend
  // blur radius keeps alpha exactly 0 on every foreground pixel.
  int erode_radius = 3;
  double blend_blur_sigma = 1.0;
  int blend_blur_radius = 2;
};

// The three generated views of one sample plus the transformed masks and
// the geometric records needed to invert views 1 and 2.
struct ViewTriplet {
  ImageRGB view1, view2, view3;
  Mask mask1, mask2;
  GeomAugRecord rec1, rec2;
};

using BatchViews = std::vector<ViewTriplet>;

struct TwoViews {
  ImageRGB view1, view2;
  Mask mask1, mask2;
  GeomAugRecord rec1, rec2;
};

// view_i = T_g,i(T_c,i(img)); mask_i = T_g,i(mask). Draw order per call:
// color params 1, geometry 1, color params 2, geometry 2.
TwoViews generate_two_views(const ImageRGB& img, const Mask& mask, Rng& rng,
                            const ViewGenConfig& cfg);

// 1 where both masks are background, else 0.
Mask common_background_mask(const Mask& mask1, const Mask& partner_mask1);

// Background swap: color-transfer the partner toward view1, intersect the
// background regions, erode, blur into an alpha map, and blend. Foreground
// pixels of mask1 come out bit-identical to view1.
ImageRGB swap_background(const ImageRGB& view1, const Mask& mask1,
                         const ImageRGB& partner_view1,
                         const Mask& partner_mask1, const ViewGenConfig& cfg);

// Mirror pairing: partner of sample i in a batch of size B is B - 1 - i.
inline int partner_index(int i, int batch_size) { return batch_size - 1 - i; }

// Per-sample two-view generation (stream forked per sample index), then
// view 3 against the mirror partner's view 1. Identical output for any
// worker count.
BatchViews generate_views_batch(const std::vector<ImageRGB>& images,
                                const std::vector<Mask>& masks, Rng& rng,
                                const ViewGenConfig& cfg, int threads = 0);

// Debug dump of a triplet as PPM/PGM files under dir with the given stem.
void dump_view_triplet(const ViewTriplet& t, const std::string& dir,
                       const std::string& stem);

}  // namespace sadl
