#pragma once

#include "sadl/image.hpp"
#include "sadl/rng.hpp"

namespace sadl {

// Sampled color-jitter parameters. Factors are multiplicative around 1,
// hue is an additive shift of [0,1)-normalized hue.
struct ColorAugParams {
  bool apply_jitter = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
  bool apply_blur = false;
  double blur_sigma = 1.0;

  static ColorAugParams identity() { return ColorAugParams{}; }
};

struct ColorAugConfig {
  double jitter_prob = 0.8;
  double brightness_strength = 0.4;
  double contrast_strength = 0.4;
  double saturation_strength = 0.4;
  double hue_strength = 0.1;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
};

// Invertible geometric augmentation: crop window in original-image pixels,
// output size, then horizontal/vertical flips.
struct GeomAugRecord {
  int u = 0, v = 0;      // top-left column, top-left row
  int w = 0, h = 0;      // crop width, height
  int out_h = 0, out_w = 0;
  bool hflip = false, vflip = false;

  static GeomAugRecord identity(int img_h, int img_w) {
    return GeomAugRecord{0, 0, img_w, img_h, img_h, img_w, false, false};
  }
  bool valid_for(int img_h, int img_w) const {
    return u >= 0 && v >= 0 && w >= 1 && h >= 1 && u + w <= img_w &&
           v + h <= img_h && out_h >= 1 && out_w >= 1;
  }
};

struct GeomAugConfig {
  double scale_min = 0.8;
  double scale_max = 1.0;
  double ratio_min = 1.0;  // crop aspect w/h
  double ratio_max = 1.0;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
};

double rec601_gray(double r, double g, double b);

// Augmentation blur radius: ceil(3 sigma) capped at 4.
int blur_radius_for_sigma(double sigma);

ColorAugParams sample_color_aug(Rng& rng, const ColorAugConfig& cfg);

// brightness -> contrast -> saturation -> hue, then optional Gaussian blur.
// Values are clamped to [0,1] after every step.
ImageRGB apply_color_aug(const ImageRGB& img, const ColorAugParams& p);

GeomAugRecord sample_geom_aug(Rng& rng, const GeomAugConfig& cfg, int img_h,
                              int img_w);

// Crop, bilinear resize to (out_h, out_w), then flips.
ImageRGB apply_geom_image(const ImageRGB& img, const GeomAugRecord& rec);

// Crop, nearest-neighbour resize, then flips; stays binary.
Mask apply_geom_mask(const Mask& mask, const GeomAugRecord& rec);

// Separable normalized Gaussian with clamp-to-edge handling.
Grid gaussian_blur(const Grid& img, double sigma, int radius);
ImageRGB gaussian_blur(const ImageRGB& img, double sigma, int radius);
AlphaMap gaussian_blur(const AlphaMap& a, double sigma, int radius);

// Square-structuring-element erosion; the neighbourhood is clipped at the
// borders. radius 0 is the identity.
Mask erode(const Mask& mask, int radius);

// Per-channel mean/variance matching of src toward tgt (population
// statistics over spatial positions). The raw variant skips the final
// clamp so statistics can be verified exactly.
ImageRGB color_transfer_raw(const ImageRGB& src, const ImageRGB& tgt,
                            double eps = 1e-6);
ImageRGB color_transfer(const ImageRGB& src, const ImageRGB& tgt,
                        double eps = 1e-6);

// out = (1 - alpha) * fg + alpha * bg, per pixel per channel.
ImageRGB alpha_blend(const ImageRGB& fg, const ImageRGB& bg,
                     const AlphaMap& alpha);

}  // namespace sadl
