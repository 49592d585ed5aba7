#include "doctest.h"
#include "sadl/sampling.hpp"
#include "sadl/view_pipeline.hpp"

using namespace sadl;

namespace {

ImageRGB random_image(Rng& rng, int h, int w) {
  ImageRGB img(h, w);
  for (int k = 0; k < 3; ++k)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) img.at(k, r, c) = rng.uniform();
  return img;
}

Mask centered_square(int n, int half) {
  Mask m(n, n);
  for (int r = n / 2 - half; r < n / 2 + half; ++r)
    for (int c = n / 2 - half; c < n / 2 + half; ++c) m.at(r, c) = 1;
  return m;
}

double max_abs_diff(const ImageRGB& a, const ImageRGB& b) {
  double m = 0;
  for (int k = 0; k < 3; ++k)
    m = std::max(m, (a.ch[(std::size_t)k] - b.ch[(std::size_t)k]).abs().maxCoeff());
  return m;
}

ViewGenConfig identity_views() {
  ViewGenConfig cfg;
  cfg.color.jitter_prob = 0.0;
  cfg.color.blur_prob = 0.0;
  cfg.geom.scale_min = cfg.geom.scale_max = 1.0;
  cfg.geom.hflip_prob = cfg.geom.vflip_prob = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("generate_two_views identity config and determinism") {
  Rng rng(3);
  ImageRGB img = random_image(rng, 16, 16);
  Mask mask = centered_square(16, 4);
  ViewGenConfig cfg = identity_views();

  Rng a(7);
  TwoViews tv = generate_two_views(img, mask, a, cfg);
  CHECK(max_abs_diff(tv.view1, img) <= 1e-12);
  CHECK(max_abs_diff(tv.view2, img) <= 1e-12);
  CHECK((tv.mask1.v == mask.v).all());

  ViewGenConfig full;
  Rng s1(99), s2(99);
  TwoViews t1 = generate_two_views(img, mask, s1, full);
  TwoViews t2 = generate_two_views(img, mask, s2, full);
  CHECK(max_abs_diff(t1.view1, t2.view1) == 0.0);
  CHECK(max_abs_diff(t1.view2, t2.view2) == 0.0);
  CHECK((t1.mask1.v == t2.mask1.v).all());

  // mask1 foreground count equals count inside rec1's window (1:1 crop)
  GeomAugRecord rec = t1.rec1;
  long inside = 0;
  for (int r = rec.v; r < rec.v + rec.h; ++r)
    for (int c = rec.u; c < rec.u + rec.w; ++c) inside += mask.at(r, c);
  GeomAugRecord noresize = rec;
  noresize.out_h = rec.h;
  noresize.out_w = rec.w;
  CHECK(apply_geom_mask(mask, noresize).count() == inside);

  Mask empty(16, 16);
  Rng e(1);
  CHECK_THROWS_AS((void)generate_two_views(img, empty, e, cfg), Error);
}

TEST_CASE("common_background_mask") {
  Mask a(4, 4), b(4, 4);
  Mask both = common_background_mask(a, b);
  CHECK(both.count() == 16);

  b.v.setConstant(1);
  CHECK(common_background_mask(a, b).count() == 0);

  Rng rng(11);
  Mask m1(8, 8), m2(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      m1.at(r, c) = rng.bernoulli(0.4);
      m2.at(r, c) = rng.bernoulli(0.4);
    }
  Mask bg = common_background_mask(m1, m2);
  long want = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      if (m1.at(r, c) == 0 && m2.at(r, c) == 0) ++want;
  CHECK(bg.count() == want);
}

TEST_CASE("swap_background degenerate and structured cases") {
  Rng rng(13);
  ViewGenConfig cfg;
  ImageRGB view1 = random_image(rng, 32, 32);
  Mask mask1 = centered_square(32, 6);

  // self-swap: output equals view1 up to the color-transfer eps guard
  ImageRGB self = swap_background(view1, mask1, view1, mask1, cfg);
  CHECK(max_abs_diff(self, view1) <= 4e-6);

  // partner all-foreground: empty common background, output bit-exact
  Mask all_fg(32, 32);
  all_fg.v.setConstant(1);
  ImageRGB partner = random_image(rng, 32, 32);
  ImageRGB out = swap_background(view1, mask1, partner, all_fg, cfg);
  CHECK(max_abs_diff(out, view1) == 0.0);

  // deep background (far from both foregrounds) equals the transferred
  // partner exactly where the blurred eroded mask saturates to 1
  Mask partner_mask = centered_square(32, 6);
  ImageRGB swapped = swap_background(view1, mask1, partner, partner_mask, cfg);
  ImageRGB transferred = color_transfer(partner, view1);
  Mask bg = erode(common_background_mask(mask1, partner_mask), cfg.erode_radius);
  AlphaMap alpha = gaussian_blur(AlphaMap(bg), cfg.blend_blur_sigma,
                                 cfg.blend_blur_radius);
  int checked = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c)
      if (alpha.v(r, c) >= 1.0 - 1e-12) {
        for (int k = 0; k < 3; ++k)
          CHECK(std::abs(swapped.at(k, r, c) - transferred.at(k, r, c)) <= 1e-9);
        ++checked;
      }
  CHECK(checked > 100);
}

TEST_CASE("foreground identity holds bitwise") {
  Rng rng(17);
  ViewGenConfig cfg;
  for (int rep = 0; rep < 50; ++rep) {
    ImageRGB v1 = random_image(rng, 24, 24);
    ImageRGB v1p = random_image(rng, 24, 24);
    Mask m1(24, 24), m1p(24, 24);
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 24; ++c) {
        m1.at(r, c) = rng.bernoulli(0.3);
        m1p.at(r, c) = rng.bernoulli(0.3);
      }
    ImageRGB v3 = swap_background(v1, m1, v1p, m1p, cfg);
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 24; ++c)
        if (m1.at(r, c) == 1)
          for (int k = 0; k < 3; ++k) CHECK(v3.at(k, r, c) == v1.at(k, r, c));
  }
}

TEST_CASE("generate_views_batch pairing and degenerate batches") {
  Rng rng(19);
  ViewGenConfig cfg = identity_views();
  std::vector<ImageRGB> images;
  std::vector<Mask> masks;
  for (int i = 0; i < 4; ++i) {
    // constant-colored images make partner identification unambiguous
    ImageRGB img(16, 16);
    img.ch[0].setConstant(0.1 + 0.2 * i);
    img.ch[1].setConstant(0.1 + 0.2 * i);
    img.ch[2].setConstant(0.1 + 0.2 * i);
    images.push_back(img);
    masks.push_back(centered_square(16, 3));
  }

  Rng batch_rng(23);
  BatchViews views = generate_views_batch(images, masks, batch_rng, cfg);
  CHECK(views.size() == 4);
  // partner pairs are (0,3) and (1,2): with identity augmentations and a
  // shared centered mask, the deep background of view3 takes the partner's
  // color-transferred background
  for (int i = 0; i < 4; ++i) {
    const ViewTriplet& t = views[(std::size_t)i];
    double corner = t.view3.at(0, 0, 0);
    const ImageRGB& partner = images[(std::size_t)(3 - i)];
    ImageRGB transferred = color_transfer(partner, t.view1);
    CHECK(corner == doctest::Approx(transferred.at(0, 0, 0)).epsilon(1e-9));
  }

  // B = 1: self partner, view3 == view1 up to the color-transfer eps guard
  std::vector<ImageRGB> one{random_image(rng, 16, 16)};
  std::vector<Mask> onemask{centered_square(16, 3)};
  Rng r1(29);
  BatchViews single = generate_views_batch(one, onemask, r1, cfg);
  CHECK(max_abs_diff(single[0].view3, single[0].view1) <= 4e-6);

  // B = 3: middle sample self-swaps
  std::vector<ImageRGB> three{images[0], images[1], images[2]};
  std::vector<Mask> threemask{masks[0], masks[1], masks[2]};
  Rng r3(31);
  BatchViews odd = generate_views_batch(three, threemask, r3, cfg);
  CHECK(max_abs_diff(odd[1].view3, odd[1].view1) <= 4e-6);

  CHECK(partner_index(0, 4) == 3);
  CHECK(partner_index(1, 3) == 1);
  CHECK(partner_index(partner_index(2, 5), 5) == 2);
}

TEST_CASE("crop windows always intersect under the default config") {
  GeomAugConfig cfg;
  Rng rng(37);
  for (int rep = 0; rep < 1000; ++rep) {
    GeomAugRecord a = sample_geom_aug(rng, cfg, 64, 64);
    GeomAugRecord b = sample_geom_aug(rng, cfg, 64, 64);
    CHECK(overlap(reverse_geom(a), reverse_geom(b)).has_value());
  }
}

TEST_CASE("batch generation is identical across worker counts") {
  Rng rng(41);
  std::vector<ImageRGB> images;
  std::vector<Mask> masks;
  for (int i = 0; i < 5; ++i) {
    images.push_back(random_image(rng, 32, 32));
    masks.push_back(centered_square(32, 5));
  }
  ViewGenConfig cfg;
  Rng ra(55), rb(55);
  BatchViews serial = generate_views_batch(images, masks, ra, cfg, 1);
  BatchViews threaded = generate_views_batch(images, masks, rb, cfg, 3);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(max_abs_diff(serial[i].view1, threaded[i].view1) == 0.0);
    CHECK(max_abs_diff(serial[i].view3, threaded[i].view3) == 0.0);
    CHECK((serial[i].mask2.v == threaded[i].mask2.v).all());
  }
}
