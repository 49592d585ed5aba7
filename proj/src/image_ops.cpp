#include "sadl/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sadl {

double rec601_gray(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

int blur_radius_for_sigma(double sigma) {
  return std::min(4, static_cast<int>(std::ceil(3.0 * sigma)));
}

ColorAugParams sample_color_aug(Rng& rng, const ColorAugConfig& cfg) {
  ColorAugParams p;
  p.apply_jitter = rng.bernoulli(cfg.jitter_prob);
  p.brightness = rng.uniform(1.0 - cfg.brightness_strength,
                             1.0 + cfg.brightness_strength);
  p.contrast =
      rng.uniform(1.0 - cfg.contrast_strength, 1.0 + cfg.contrast_strength);
  p.saturation = rng.uniform(1.0 - cfg.saturation_strength,
                             1.0 + cfg.saturation_strength);
  p.hue = rng.uniform(-cfg.hue_strength, cfg.hue_strength);
  p.apply_blur = rng.bernoulli(cfg.blur_prob);
  p.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  return p;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  double d = mx - mn;
  s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0 + (b - r) / d;
  else
    h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  if (s <= 0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  double hh = h * 6.0;
  int i = std::min(5, static_cast<int>(hh));
  double f = hh - i;
  double p = v * (1.0 - s);
  double q = v * (1.0 - s * f);
  double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

ImageRGB apply_color_aug(const ImageRGB& img, const ColorAugParams& p) {
  ImageRGB out = img;
  if (p.apply_jitter) {
    // brightness
    for (auto& c : out.ch) c *= p.brightness;
    out.clamp01();
    // contrast: interpolate toward the scalar mean luminance
    double mean_luma = 0.0;
    for (int r = 0; r < out.h; ++r)
      for (int c = 0; c < out.w; ++c)
        mean_luma += rec601_gray(out.at(0, r, c), out.at(1, r, c), out.at(2, r, c));
    mean_luma /= static_cast<double>(out.h) * out.w;
    for (auto& c : out.ch) c = mean_luma + p.contrast * (c - mean_luma);
    out.clamp01();
    // saturation: interpolate toward per-pixel grayscale
    for (int r = 0; r < out.h; ++r)
      for (int c = 0; c < out.w; ++c) {
        double gray = rec601_gray(out.at(0, r, c), out.at(1, r, c), out.at(2, r, c));
        for (int k = 0; k < 3; ++k)
          out.at(k, r, c) = gray + p.saturation * (out.at(k, r, c) - gray);
      }
    out.clamp01();
    // hue rotation in HSV
    if (p.hue != 0.0) {
      for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) {
          double h, s, v;
          rgb_to_hsv(out.at(0, r, c), out.at(1, r, c), out.at(2, r, c), h, s, v);
          h += p.hue;
          hsv_to_rgb(h, s, v, out.at(0, r, c), out.at(1, r, c), out.at(2, r, c));
        }
      out.clamp01();
    }
  }
  if (p.apply_blur) {
    out = gaussian_blur(out, p.blur_sigma, blur_radius_for_sigma(p.blur_sigma));
    out.clamp01();
  }
  return out;
}

GeomAugRecord sample_geom_aug(Rng& rng, const GeomAugConfig& cfg, int img_h,
                              int img_w) {
  double frac = rng.uniform(cfg.scale_min, cfg.scale_max);
  double ratio = rng.uniform(cfg.ratio_min, cfg.ratio_max);
  double area = frac * static_cast<double>(img_h) * img_w;
  // ceil keeps the realized area at or above the sampled fraction
  int cw = static_cast<int>(std::ceil(std::sqrt(area * ratio)));
  int chh = static_cast<int>(std::ceil(std::sqrt(area / ratio)));
  cw = std::clamp(cw, 1, img_w);
  chh = std::clamp(chh, 1, img_h);
  GeomAugRecord rec;
  rec.w = cw;
  rec.h = chh;
  rec.u = rng.uniform_int(img_w - cw + 1);
  rec.v = rng.uniform_int(img_h - chh + 1);
  rec.out_h = img_h;
  rec.out_w = img_w;
  rec.hflip = rng.bernoulli(cfg.hflip_prob);
  rec.vflip = rng.bernoulli(cfg.vflip_prob);
  return rec;
}

namespace {

void check_record(const GeomAugRecord& rec, int img_h, int img_w,
                  const char* what) {
  if (!rec.valid_for(img_h, img_w))
    throw ShapeError(std::string(what) + ": crop window exceeds image bounds");
}

}  // namespace

ImageRGB apply_geom_image(const ImageRGB& img, const GeomAugRecord& rec) {
  check_record(rec, img.h, img.w, "apply_geom_image");
  ImageRGB out(rec.out_h, rec.out_w);
  const double sy = static_cast<double>(rec.h) / rec.out_h;
  const double sx = static_cast<double>(rec.w) / rec.out_w;
  for (int r = 0; r < rec.out_h; ++r) {
    double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, rec.h - 1.0);
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, rec.h - 1);
    double wy = fy - y0;
    for (int c = 0; c < rec.out_w; ++c) {
      double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, rec.w - 1.0);
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, rec.w - 1);
      double wx = fx - x0;
      int rr = rec.vflip ? rec.out_h - 1 - r : r;
      int cc = rec.hflip ? rec.out_w - 1 - c : c;
      for (int k = 0; k < 3; ++k) {
        double top = (1.0 - wx) * img.at(k, rec.v + y0, rec.u + x0) +
                     wx * img.at(k, rec.v + y0, rec.u + x1);
        double bot = (1.0 - wx) * img.at(k, rec.v + y1, rec.u + x0) +
                     wx * img.at(k, rec.v + y1, rec.u + x1);
        out.at(k, rr, cc) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  out.clamp01();
  return out;
}

Mask apply_geom_mask(const Mask& mask, const GeomAugRecord& rec) {
  check_record(rec, mask.h, mask.w, "apply_geom_mask");
  Mask out(rec.out_h, rec.out_w);
  // Corner-aligned nearest neighbour: cell d samples source ceil(d*in/out),
  // the exact preimage of the point map p' = floor(p * out/in). Sampled
  // points therefore always agree with the resized mask's class.
  auto src_index = [](int dst, int in, int out_n) {
    long v = (static_cast<long>(dst) * in + out_n - 1) / out_n;  // ceil
    return std::min(static_cast<int>(v), in - 1);
  };
  for (int r = 0; r < rec.out_h; ++r) {
    int y = src_index(r, rec.h, rec.out_h);
    for (int c = 0; c < rec.out_w; ++c) {
      int x = src_index(c, rec.w, rec.out_w);
      int rr = rec.vflip ? rec.out_h - 1 - r : r;
      int cc = rec.hflip ? rec.out_w - 1 - c : c;
      out.at(rr, cc) = mask.at(rec.v + y, rec.u + x);
    }
  }
  return out;
}

Grid gaussian_blur(const Grid& img, double sigma, int radius) {
  if (!(sigma > 0.0) || radius < 1)
    throw Error("gaussian_blur: require sigma > 0 and radius >= 1");
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;

  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  Grid tmp(h, w), out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] *
               img(r, std::clamp(c + i, 0, w - 1));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] *
               tmp(std::clamp(r + i, 0, h - 1), c);
      out(r, c) = acc;
    }
  return out;
}

ImageRGB gaussian_blur(const ImageRGB& img, double sigma, int radius) {
  ImageRGB out = img;
  for (auto& c : out.ch) c = gaussian_blur(c, sigma, radius);
  return out;
}

AlphaMap gaussian_blur(const AlphaMap& a, double sigma, int radius) {
  AlphaMap out = a;
  out.v = gaussian_blur(a.v, sigma, radius);
  return out;
}

Mask erode(const Mask& mask, int radius) {
  if (radius < 0) throw Error("erode: radius must be >= 0");
  if (radius == 0) return mask;
  // square structuring element is separable into two 1-D min passes
  Mask tmp(mask.h, mask.w), out(mask.h, mask.w);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c) {
      std::uint8_t m = 1;
      for (int i = std::max(0, c - radius);
           i <= std::min(mask.w - 1, c + radius); ++i)
        m = std::min(m, mask.at(r, i));
      tmp.at(r, c) = m;
    }
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c) {
      std::uint8_t m = 1;
      for (int i = std::max(0, r - radius);
           i <= std::min(mask.h - 1, r + radius); ++i)
        m = std::min(m, tmp.at(i, c));
      out.at(r, c) = m;
    }
  return out;
}

ImageRGB color_transfer_raw(const ImageRGB& src, const ImageRGB& tgt,
                            double eps) {
  require_same_size(src, tgt, "color_transfer");
  ImageRGB out = src;
  const double n = static_cast<double>(src.h) * src.w;
  for (int k = 0; k < 3; ++k) {
    double mu_s = src.ch[(std::size_t)k].mean();
    double mu_t = tgt.ch[(std::size_t)k].mean();
    double sd_s = std::sqrt((src.ch[(std::size_t)k] - mu_s).square().sum() / n);
    double sd_t = std::sqrt((tgt.ch[(std::size_t)k] - mu_t).square().sum() / n);
    out.ch[(std::size_t)k] =
        sd_t * (src.ch[(std::size_t)k] - mu_s) / (sd_s + eps) + mu_t;
  }
  return out;
}

ImageRGB color_transfer(const ImageRGB& src, const ImageRGB& tgt, double eps) {
  ImageRGB out = color_transfer_raw(src, tgt, eps);
  out.clamp01();
  return out;
}

ImageRGB alpha_blend(const ImageRGB& fg, const ImageRGB& bg,
                     const AlphaMap& alpha) {
  require_same_size(fg, bg, "alpha_blend");
  if (alpha.h != fg.h || alpha.w != fg.w)
    throw ShapeError("alpha_blend: alpha size mismatch");
  ImageRGB out(fg.h, fg.w);
  for (int k = 0; k < 3; ++k)
    out.ch[(std::size_t)k] = (1.0 - alpha.v) * fg.ch[(std::size_t)k] +
                             alpha.v * bg.ch[(std::size_t)k];
  return out;
}

}  // namespace sadl
