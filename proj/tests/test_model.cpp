#include <cmath>

#include "doctest.h"
#include "oracle_scalar_loss.hpp"
#include "sadl/model.hpp"
#include "sadl/synth.hpp"
#include "sadl/trainer.hpp"

using namespace sadl;

namespace {

// A two-view triplet with sampled points over a synthetic scene.
struct Fixture {
  ImageRGB image;
  Mask mask;
  ViewTriplet triplet;
  PointSet points;
};

Fixture make_fixture(std::uint64_t seed, int size, int n_points,
                     bool identity_geom = false) {
  SynthConfig scfg;
  scfg.size = size;
  Rng rng(seed);
  Fixture f;
  Rng srng = rng.fork(1);
  std::tie(f.image, f.mask) = synth_scene(srng, scfg);
  ViewGenConfig vcfg;
  if (identity_geom) {
    vcfg.geom.scale_min = vcfg.geom.scale_max = 1.0;
    vcfg.geom.hflip_prob = vcfg.geom.vflip_prob = 0.0;
  }
  Rng vrng = rng.fork(2);
  TwoViews tv = generate_two_views(f.image, f.mask, vrng, vcfg);
  f.triplet.view1 = tv.view1;
  f.triplet.view2 = tv.view2;
  f.triplet.mask1 = tv.mask1;
  f.triplet.mask2 = tv.mask2;
  f.triplet.rec1 = tv.rec1;
  f.triplet.rec2 = tv.rec2;
  f.triplet.view3 =
      swap_background(tv.view1, tv.mask1, tv.view1, tv.mask1, vcfg);
  Rng prng = rng.fork(3);
  f.points = sample_triplet_points(f.triplet, f.mask, n_points, prng);
  return f;
}

}  // namespace

TEST_CASE("encoder_forward shapes and linearity") {
  Rng rng(3);
  ModelParams p = ModelParams::init(rng, ModelDims::desk());
  Tape t;
  Tensor imgs = Tensor::randn(rng, {2, 3, 64, 64}, 1.0);
  Tensor x = encoder_forward(t, imgs, p.encoder);
  CHECK(x.shape == Shape{2, 32, 16, 16});

  // zero weights and zero BN shift give exactly zero output
  ModelParams z = p;
  for (Tensor* w : z.parameters()) w->data.setZero();
  Tensor zero = encoder_forward(t, imgs, z.encoder);
  CHECK(zero.data.abs().maxCoeff() == 0.0);

  CHECK_THROWS_AS((void)encoder_forward(t, Tensor::randn(rng, {1, 3, 24, 24}, 1.0),
                                        p.encoder),
                  ShapeError);
}

TEST_CASE("encoder gradient matches finite differences on a sampled kernel") {
  Rng rng(5);
  ModelParams model = ModelParams::init(rng, ModelDims::desk());
  Tensor imgs = Tensor::randn(rng, {2, 3, 16, 16}, 1.0);

  std::vector<Tensor*> params = model.parameters();
  Tape tape;
  bind_leaves(tape, params);
  Tensor x = encoder_forward(tape, imgs, model.encoder);
  Tensor loss = mean(tape, x);
  tape.backward(loss);
  Tensor* kernel = &model.encoder.stage2.kernel;
  auto analytic = tape.grad(kernel->node);

  for (Index j : {Index(0), Index(17), kernel->size() - 1}) {
    double keep = kernel->data[j];
    double h = 1e-5;
    auto eval = [&] {
      Tape t2;
      Tensor y = encoder_forward(t2, imgs, model.encoder);
      return y.data.mean();
    };
    kernel->data[j] = keep + h;
    double fp = eval();
    kernel->data[j] = keep - h;
    double fm = eval();
    kernel->data[j] = keep;
    double fd = (fp - fm) / (2 * h);
    CHECK(std::abs(fd - analytic[j]) <=
          1e-4 * std::max({std::abs(fd), std::abs(analytic[j]), 1e-6}));
  }
}

TEST_CASE("project_predict shapes, identity configuration, gradients") {
  Rng rng(7);
  ModelDims dims = ModelDims::desk();
  ModelParams model = ModelParams::init(rng, dims);
  Tape t;
  Tensor x = Tensor::randn(rng, {8, 32}, 1.0);
  auto [z, p] = project_predict(t, x, model.projector, model.predictor);
  CHECK(z.shape == Shape{8, 32});
  CHECK(p.shape == Shape{8, 32});

  CHECK_THROWS_AS((void)project_predict(t, Tensor::randn(rng, {1, 32}, 1.0),
                                        model.projector, model.predictor),
                  ShapeError);

  // identity-initialized layers with BN disabled pass positive inputs through
  MlpParams ident;
  ident.w1 = Tensor::identity(4);
  ident.b1 = Tensor::zeros({4});
  ident.gamma = Tensor::ones({4});
  ident.beta = Tensor::zeros({4});
  ident.w2 = Tensor::identity(4);
  ident.b2 = Tensor::zeros({4});
  ident.with_bn = false;
  Tensor pos = Tensor::from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto [zi, pi] = project_predict(t, pos, ident, ident);
  CHECK((zi.data == pos.data).all());
  CHECK((pi.data == pos.data).all());
}

TEST_CASE("semantic_dissimilar_loss closed-form cases") {
  Tape t;
  Rng rng(9);
  Tensor bg = Tensor::randn(rng, {4, 8}, 1.0);
  Tensor fg = bg;
  fg.data = -fg.data;
  CHECK(semantic_dissimilar_loss(t, bg, fg).data[0] ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(semantic_dissimilar_loss(t, bg, bg).data[0] ==
        doctest::Approx(2.0).epsilon(1e-6));

  Tensor e1 = Tensor::zeros({2, 2}), e2 = Tensor::zeros({2, 2});
  e1.data << 1, 0, 0, 1;
  e2.data << 0, 1, 1, 0;
  CHECK(semantic_dissimilar_loss(t, e1, e2).data[0] ==
        doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(
      (void)semantic_dissimilar_loss(t, bg, Tensor::randn(rng, {3, 8}, 1.0)),
      ShapeError);
}

TEST_CASE("symmetrized_similarity closed-form cases and stop-gradient") {
  Tape t;
  Tensor a = Tensor::from({3}, {1, 2, 3});
  Tensor b = Tensor::from({3}, {0.5, 1.0, 1.5});  // collinear with a
  CHECK(symmetrized_similarity(t, a, b, b, a).data[0] ==
        doctest::Approx(0.0).epsilon(1e-6));

  Tensor e1 = Tensor::from({2}, {1, 0});
  Tensor e2 = Tensor::from({2}, {0, 1});
  CHECK(symmetrized_similarity(t, e1, e2, e1, e2).data[0] ==
        doctest::Approx(1.0).epsilon(1e-6));

  // parameters reaching the loss only through z-arguments get exact zeros
  Rng rng(11);
  Tape t2;
  Tensor pa = t2.leaf(Tensor::randn(rng, {4}, 1.0));
  Tensor pb = t2.leaf(Tensor::randn(rng, {4}, 1.0));
  Tensor za_src = t2.leaf(Tensor::randn(rng, {4}, 1.0));
  Tensor zb_src = t2.leaf(Tensor::randn(rng, {4}, 1.0));
  Tensor za = relu(t2, za_src);
  Tensor zb = relu(t2, zb_src);
  Tensor loss = symmetrized_similarity(t2, pa, zb, pb, za);
  t2.backward(loss);
  CHECK(t2.grad(za_src.node).abs().maxCoeff() == 0.0);
  CHECK(t2.grad(zb_src.node).abs().maxCoeff() == 0.0);
  CHECK(t2.grad(pa.node).abs().maxCoeff() > 0.0);
  auto seen = t2.ancestors(loss.node);
  CHECK(!seen[(std::size_t)za_src.node]);
  CHECK(seen[(std::size_t)pa.node]);
}

TEST_CASE("per_sample_loss bounds and view2==view1 degenerate case") {
  Fixture f = make_fixture(13, 32, 8);
  Rng rng(15);
  ModelParams model = ModelParams::init(rng, ModelDims::desk());
  Tape t;
  PreparedSample s{&f.triplet, f.points};
  LossResult r = batch_loss_prepared(t, {s}, model);
  CHECK(r.value.l_sd >= -1e-6);
  CHECK(r.value.l_sd <= 2.0 + 1e-6);
  CHECK(r.value.l_s1 >= -1e-6);
  CHECK(r.value.l_s1 <= 2.0 + 1e-6);
  CHECK(r.value.l_s2 >= -1e-6);
  CHECK(r.value.l_s2 <= 2.0 + 1e-6);
  CHECK(r.value.total ==
        doctest::Approx(r.value.l_sd + r.value.l_s1 + r.value.l_s2)
            .epsilon(1e-12));
  CHECK(std::isfinite(r.value.total));

  // identical views with identical records: both cosine branches collapse
  // to D(p_i, z_i), so l_s1 = 1 - mean_i D(p_i, z_i); the independent
  // scalar oracle computes exactly that
  Fixture g = make_fixture(17, 32, 8, /*identity_geom=*/true);
  ViewTriplet twin = g.triplet;
  twin.view2 = twin.view1;
  twin.mask2 = twin.mask1;
  twin.rec2 = twin.rec1;
  Tape t2;
  PreparedSample s2{&twin, g.points};
  LossResult r2 = batch_loss_prepared(t2, {s2}, model);
  oracle::Breakdown want = oracle::batch_loss({s2}, model);
  CHECK(r2.value.l_s1 == doctest::Approx(want.l_s1).epsilon(1e-10));
}

TEST_CASE("per-sample loss matches the scalar oracle to 1e-10") {
  Rng rng(19);
  ModelParams model = ModelParams::init(rng, ModelDims{8, 12, 8, 6});
  for (std::uint64_t seed : {21, 22, 23}) {
    Fixture f = make_fixture(seed, 32, 6);
    PreparedSample s{&f.triplet, f.points};
    Tape t;
    LossResult got = batch_loss_prepared(t, {s}, model);
    oracle::Breakdown want = oracle::batch_loss({s}, model);
    CHECK(got.value.l_sd == doctest::Approx(want.l_sd).epsilon(1e-10));
    CHECK(got.value.l_s1 == doctest::Approx(want.l_s1).epsilon(1e-10));
    CHECK(got.value.l_s2 == doctest::Approx(want.l_s2).epsilon(1e-10));
    CHECK(got.value.total == doctest::Approx(want.total).epsilon(1e-10));
  }
}

TEST_CASE("batch_loss mean structure") {
  Rng rng(29);
  ModelParams model = ModelParams::init(rng, ModelDims::desk());

  // B = 1 equals per_sample_loss
  Fixture f = make_fixture(31, 32, 8);
  PreparedSample s{&f.triplet, f.points};
  Tape ta, tb;
  LossResult batch1 = batch_loss_prepared(ta, {s}, model);
  LossResult single = batch_loss_prepared(tb, {s}, model);
  CHECK(batch1.value.total == doctest::Approx(single.value.total).epsilon(1e-12));

  // duplicated sample equals either per-sample loss (duplicate rows leave
  // the stacked batch statistics unchanged)
  Tape tc;
  LossResult dup = batch_loss_prepared(tc, {s, s}, model);
  CHECK(dup.value.total == doctest::Approx(single.value.total).epsilon(1e-9));
  CHECK(dup.per_sample.size() == 2);
  CHECK(dup.per_sample[0].l_s1 ==
        doctest::Approx(dup.per_sample[1].l_s1).epsilon(1e-12));

  // B = 3: value is the arithmetic mean of the per-sample breakdowns
  Fixture f2 = make_fixture(37, 32, 8);
  Fixture f3 = make_fixture(41, 32, 8);
  PreparedSample s2{&f2.triplet, f2.points};
  PreparedSample s3{&f3.triplet, f3.points};
  Tape td;
  LossResult three = batch_loss_prepared(td, {s, s2, s3}, model);
  double mean_total = (three.per_sample[0].total + three.per_sample[1].total +
                       three.per_sample[2].total) /
                      3.0;
  CHECK(three.value.total == doctest::Approx(mean_total).epsilon(1e-12));
}

TEST_CASE("l_s1 is invariant under exchanging views 1 and 2") {
  Rng rng(43);
  ModelParams model = ModelParams::init(rng, ModelDims::desk());
  Fixture f = make_fixture(47, 32, 8);
  ViewTriplet swapped = f.triplet;
  std::swap(swapped.view1, swapped.view2);
  std::swap(swapped.mask1, swapped.mask2);
  std::swap(swapped.rec1, swapped.rec2);

  Tape ta, tb;
  PreparedSample sa{&f.triplet, f.points};
  PreparedSample sb{&swapped, f.points};
  LossResult a = batch_loss_prepared(ta, {sa}, model);
  LossResult b = batch_loss_prepared(tb, {sb}, model);
  CHECK(a.value.l_s1 == doctest::Approx(b.value.l_s1).epsilon(1e-9));
}

TEST_CASE("stop-gradient structure of the full loss") {
  Rng rng(53);
  ModelParams model = ModelParams::init(rng, ModelDims::desk());
  Fixture f = make_fixture(59, 32, 6);
  PreparedSample s{&f.triplet, f.points};

  std::vector<Tensor*> params = model.parameters();
  Tape tape;
  bind_leaves(tape, params);
  LossResult loss = batch_loss_prepared(tape, {s}, model);
  tape.backward(loss.total_node);
  // the full gradient is nonzero at random init
  double norm = 0;
  for (Tensor* p : params) norm += tape.grad(p->node).abs().sum();
  CHECK(norm > 0.0);
  for (Tensor* p : params) p->node = -1;
}

TEST_CASE("full-pipeline gradient check on a 2-sample 16x16 batch") {
  SynthConfig scfg;
  scfg.size = 16;
  TrainConfig tcfg;
  tcfg.n_points = 4;
  Rng rng(61);
  std::vector<ImageRGB> images;
  std::vector<Mask> masks;
  for (int i = 0; i < 2; ++i) {
    Rng s = rng.fork((std::uint64_t)i);
    auto [img, mask] = synth_scene(s, scfg);
    images.push_back(img);
    masks.push_back(mask);
  }
  Rng irng = rng.fork(10);
  ModelParams model = ModelParams::init(irng, ModelDims::desk());
  std::vector<const ImageRGB*> iptr{&images[0], &images[1]};
  std::vector<const Mask*> mptr{&masks[0], &masks[1]};
  Rng brng = rng.fork(20);
  PreparedBatch batch = prepare_pretrain_batch(iptr, mptr, brng, tcfg);
  std::vector<PreparedSample> samples(2);
  for (int i = 0; i < 2; ++i) {
    samples[(std::size_t)i].triplet = &batch.triplets[(std::size_t)i];
    samples[(std::size_t)i].points = batch.points[(std::size_t)i];
  }
  GradCheckReport rep =
      check_model_gradients(model, samples, 1e-5, 1e-3, 120, 71);
  CHECK(rep.checked > 0);
  CHECK(rep.pass_fraction(1e-4) >= 0.95);
}

TEST_CASE("L_sd minimization drives paired cosines below -0.9") {
  // encoder frozen out: the x vectors are free parameters
  Rng rng(67);
  const int n = 4, c = 8;
  Tensor bg = Tensor::randn(rng, {n, c}, 1.0);
  Tensor fg = Tensor::randn(rng, {n, c}, 1.0);
  Tensor::Array v_bg = Tensor::Array::Zero(bg.size());
  Tensor::Array v_fg = Tensor::Array::Zero(fg.size());
  for (int step = 0; step < 100; ++step) {
    Tape t;
    Tensor bl = t.leaf(bg), fl = t.leaf(fg);
    Tensor loss = semantic_dissimilar_loss(t, bl, fl);
    t.backward(loss);
    auto gb = t.grad(bl.node);
    auto gf = t.grad(fl.node);
    v_bg = 0.9 * v_bg + gb;
    v_fg = 0.9 * v_fg + gf;
    bg.data -= 0.5 * v_bg;
    fg.data -= 0.5 * v_fg;
  }
  Tape t;
  double mean_cos = 0;
  for (int i = 0; i < n; ++i) {
    Tensor a = Tensor::zeros({c}), b = Tensor::zeros({c});
    for (int j = 0; j < c; ++j) {
      a.data[j] = bg.data[i * c + j];
      b.data[j] = fg.data[i * c + j];
    }
    mean_cos += cosine_similarity(t, a, b).data[0];
  }
  mean_cos /= n;
  CHECK(mean_cos < -0.9);
}

TEST_CASE("retry fallback drops the absent class but never crosses classes") {
  // a mask whose foreground lives only in one corner: crops often miss it
  Mask mask(64, 64);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) mask.at(r, c) = 1;
  Rng rng(71);
  ImageRGB img(64, 64);
  for (int k = 0; k < 3; ++k)
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) img.at(k, r, c) = rng.uniform();

  TrainConfig cfg;
  cfg.n_points = 8;
  cfg.retry_limit = 2;
  // shrink crops and forbid full frames so the corner is regularly missed
  cfg.views.geom.scale_min = 0.5;
  cfg.views.geom.scale_max = 0.6;

  int fallbacks = 0;
  for (int rep = 0; rep < 30; ++rep) {
    Rng batch_rng(1000 + (std::uint64_t)rep);
    std::vector<const ImageRGB*> iptr{&img};
    std::vector<const Mask*> mptr{&mask};
    PreparedBatch batch = prepare_pretrain_batch(iptr, mptr, batch_rng, cfg);
    const PointSet& ps = batch.points[0];
    for (int k = 1; k <= 2; ++k)
      for (const Point& p : ps.of_class(k))
        CHECK(mask.at(p.r, p.c) == k - 1);  // class purity, always
    if (ps.of_class(2).empty()) {
      ++fallbacks;
      CHECK(ps.of_class(1).size() == 8);
      // the dropped class silences l_sd and l_s2 for this sample
      Rng mrng(5);
      ModelParams model = ModelParams::init(mrng, ModelDims::desk());
      Tape t;
      PreparedSample s{&batch.triplets[0], ps};
      LossResult r = batch_loss_prepared(t, {s}, model);
      CHECK(r.value.l_sd == 0.0);
      CHECK(r.value.l_s2 == 0.0);
      CHECK(r.value.l_s1 > 0.0);
    }
  }
  CHECK(fallbacks > 0);
}
