#include "sadl/view_pipeline.hpp"

#include <filesystem>

#include "sadl/netpbm.hpp"
#include "sadl/parallel.hpp"

namespace sadl {

TwoViews generate_two_views(const ImageRGB& img, const Mask& mask, Rng& rng,
                            const ViewGenConfig& cfg) {
  if (img.h != mask.h || img.w != mask.w)
    throw ShapeError("generate_two_views: image/mask size mismatch");
  if (mask.count() == 0)
    throw Error("generate_two_views: mask has no foreground pixel");
  TwoViews out;
  ColorAugParams c1 = sample_color_aug(rng, cfg.color);
  out.rec1 = sample_geom_aug(rng, cfg.geom, img.h, img.w);
  ColorAugParams c2 = sample_color_aug(rng, cfg.color);
  out.rec2 = sample_geom_aug(rng, cfg.geom, img.h, img.w);
  out.view1 = apply_geom_image(apply_color_aug(img, c1), out.rec1);
  out.view2 = apply_geom_image(apply_color_aug(img, c2), out.rec2);
  out.mask1 = apply_geom_mask(mask, out.rec1);
  out.mask2 = apply_geom_mask(mask, out.rec2);
  return out;
}

Mask common_background_mask(const Mask& mask1, const Mask& partner_mask1) {
  if (!mask1.same_size(partner_mask1))
    throw ShapeError("common_background_mask: size mismatch");
  Mask out(mask1.h, mask1.w);
  for (int r = 0; r < mask1.h; ++r)
    for (int c = 0; c < mask1.w; ++c)
      out.at(r, c) = (mask1.at(r, c) == 0 && partner_mask1.at(r, c) == 0) ? 1 : 0;
  return out;
}

ImageRGB swap_background(const ImageRGB& view1, const Mask& mask1,
                         const ImageRGB& partner_view1,
                         const Mask& partner_mask1, const ViewGenConfig& cfg) {
  require_same_size(view1, partner_view1, "swap_background");
  if (!mask1.same_size(partner_mask1) || mask1.h != view1.h ||
      mask1.w != view1.w)
    throw ShapeError("swap_background: mask size mismatch");
  ImageRGB transferred = color_transfer(partner_view1, view1);
  Mask bg = erode(common_background_mask(mask1, partner_mask1),
                  cfg.erode_radius);
  AlphaMap alpha =
      gaussian_blur(AlphaMap(bg), cfg.blend_blur_sigma, cfg.blend_blur_radius);
  return alpha_blend(view1, transferred, alpha);
}

BatchViews generate_views_batch(const std::vector<ImageRGB>& images,
                                const std::vector<Mask>& masks, Rng& rng,
                                const ViewGenConfig& cfg, int threads) {
  if (images.empty() || images.size() != masks.size())
    throw ShapeError("generate_views_batch: need equal-length nonempty lists");
  const int B = static_cast<int>(images.size());
  std::vector<TwoViews> two(static_cast<std::size_t>(B));
  parallel_for(
      B,
      [&](int i) {
        Rng stream = rng.fork(static_cast<std::uint64_t>(i));
        two[static_cast<std::size_t>(i)] = generate_two_views(
            images[static_cast<std::size_t>(i)],
            masks[static_cast<std::size_t>(i)], stream, cfg);
      },
      threads);

  BatchViews out(static_cast<std::size_t>(B));
  parallel_for(
      B,
      [&](int i) {
        const TwoViews& self = two[static_cast<std::size_t>(i)];
        const TwoViews& partner =
            two[static_cast<std::size_t>(partner_index(i, B))];
        ViewTriplet t;
        t.view1 = self.view1;
        t.view2 = self.view2;
        t.mask1 = self.mask1;
        t.mask2 = self.mask2;
        t.rec1 = self.rec1;
        t.rec2 = self.rec2;
        t.view3 = swap_background(self.view1, self.mask1, partner.view1,
                                  partner.mask1, cfg);
        out[static_cast<std::size_t>(i)] = std::move(t);
      },
      threads);
  return out;
}

void dump_view_triplet(const ViewTriplet& t, const std::string& dir,
                       const std::string& stem) {
  std::filesystem::create_directories(dir);
  auto p = [&](const std::string& name) { return dir + "/" + stem + name; };
  write_ppm(t.view1, p("_view1.ppm"));
  write_ppm(t.view2, p("_view2.ppm"));
  write_ppm(t.view3, p("_view3.ppm"));
  write_pgm(t.mask1, p("_mask1.pgm"));
  write_pgm(t.mask2, p("_mask2.pgm"));
}

}  // namespace sadl
