#include "sadl/model.hpp"

#include <cmath>

namespace sadl {

namespace {
constexpr double kBnEps = 1e-5;

Tensor he_normal(Rng& rng, Shape shape, int fan_in) {
  return Tensor::randn(rng, std::move(shape),
                       std::sqrt(2.0 / static_cast<double>(fan_in)));
}
}  // namespace

ConvBn init_conv_bn(Rng& rng, int cin, int cout) {
  ConvBn c;
  c.kernel = he_normal(rng, {cout, cin, 3, 3}, cin * 9);
  c.gamma = Tensor::ones({cout});
  c.beta = Tensor::zeros({cout});
  return c;
}

MlpParams init_mlp(Rng& rng, int in, int hidden, int out) {
  MlpParams m;
  m.w1 = he_normal(rng, {in, hidden}, in);
  m.b1 = Tensor::zeros({hidden});
  m.gamma = Tensor::ones({hidden});
  m.beta = Tensor::zeros({hidden});
  m.w2 = he_normal(rng, {hidden, out}, hidden);
  m.b2 = Tensor::zeros({out});
  return m;
}

ModelParams ModelParams::init(Rng& rng, const ModelDims& dims) {
  ModelParams p;
  p.dims = dims;
  p.encoder.stem = init_conv_bn(rng, 3, 16);
  p.encoder.stage1 = init_conv_bn(rng, 16, 16);
  p.encoder.stage2 = init_conv_bn(rng, 16, 32);
  p.encoder.stage3 = init_conv_bn(rng, 32, 64);
  int c = dims.feat_channels;
  p.encoder.lat1 = he_normal(rng, {c, 16, 1, 1}, 16);
  p.encoder.lat2 = he_normal(rng, {c, 32, 1, 1}, 32);
  p.encoder.lat3 = he_normal(rng, {c, 64, 1, 1}, 64);
  p.encoder.out_channels = c;
  p.projector = init_mlp(rng, c, dims.proj_hidden, dims.embed_dim);
  p.predictor = init_mlp(rng, dims.embed_dim, dims.pred_hidden, dims.embed_dim);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto conv_bn = [&](const std::string& prefix, ConvBn& c) {
    out.emplace_back(prefix + ".kernel", &c.kernel);
    out.emplace_back(prefix + ".gamma", &c.gamma);
    out.emplace_back(prefix + ".beta", &c.beta);
  };
  auto mlp = [&](const std::string& prefix, MlpParams& m) {
    out.emplace_back(prefix + ".w1", &m.w1);
    out.emplace_back(prefix + ".b1", &m.b1);
    out.emplace_back(prefix + ".gamma", &m.gamma);
    out.emplace_back(prefix + ".beta", &m.beta);
    out.emplace_back(prefix + ".w2", &m.w2);
    out.emplace_back(prefix + ".b2", &m.b2);
  };
  conv_bn("encoder.stem", encoder.stem);
  conv_bn("encoder.stage1", encoder.stage1);
  conv_bn("encoder.stage2", encoder.stage2);
  conv_bn("encoder.stage3", encoder.stage3);
  out.emplace_back("encoder.lat1", &encoder.lat1);
  out.emplace_back("encoder.lat2", &encoder.lat2);
  out.emplace_back("encoder.lat3", &encoder.lat3);
  mlp("proj", projector);
  mlp("pred", predictor);
  return out;
}

std::vector<Tensor*> ModelParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void bind_leaves(Tape& tape, const std::vector<Tensor*>& params) {
  for (Tensor* t : params) t->node = tape.add_node(t->shape, {}, nullptr);
}

Tensor images_to_tensor(const std::vector<const ImageRGB*>& images,
                        const std::array<double, 3>& mean,
                        const std::array<double, 3>& std_dev) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int B = static_cast<int>(images.size());
  const int H = images[0]->h, W = images[0]->w;
  Tensor out = Tensor::zeros({B, 3, H, W});
  for (int b = 0; b < B; ++b) {
    const ImageRGB& img = *images[static_cast<std::size_t>(b)];
    if (img.h != H || img.w != W)
      throw ShapeError("images_to_tensor: mixed image sizes in batch");
    for (int c = 0; c < 3; ++c) {
      double inv = 1.0 / std_dev[static_cast<std::size_t>(c)];
      for (int r = 0; r < H; ++r)
        for (int col = 0; col < W; ++col)
          out.data[((static_cast<Index>(b) * 3 + c) * H + r) * W + col] =
              (img.at(c, r, col) - mean[static_cast<std::size_t>(c)]) * inv;
    }
  }
  return out;
}

namespace {

// conv(3x3, stride 2, pad 1) -> per-channel BN over batch and space -> ReLU
Tensor conv_bn_relu(Tape& t, const Tensor& x, const ConvBn& p) {
  Tensor y = conv2d(t, x, p.kernel, 2, 1);
  Index B = y.shape[0], C = y.shape[1], H = y.shape[2], W = y.shape[3];
  Tensor rows = bchw_to_rows(t, y);
  Tensor norm = batch_norm(t, rows, p.gamma, p.beta, kBnEps);
  return relu(t, rows_to_bchw(t, norm, B, C, H, W));
}

}  // namespace

Tensor encoder_forward(Tape& tape, const Tensor& imgs, const EncoderParams& e) {
  if (imgs.rank() != 4 || imgs.shape[1] != 3)
    throw ShapeError("encoder_forward: input must be [B,3,H,W]");
  if (imgs.shape[2] % 16 != 0 || imgs.shape[3] % 16 != 0)
    throw ShapeError("encoder_forward: H and W must be divisible by 16");
  Tensor s0 = conv_bn_relu(tape, imgs, e.stem);   // 1/2, 16
  Tensor s1 = conv_bn_relu(tape, s0, e.stage1);   // 1/4, 16
  Tensor s2 = conv_bn_relu(tape, s1, e.stage2);   // 1/8, 32
  Tensor s3 = conv_bn_relu(tape, s2, e.stage3);   // 1/16, 64
  Tensor m3 = conv2d(tape, s3, e.lat3, 1, 0);
  Tensor m2 = add(tape, conv2d(tape, s2, e.lat2, 1, 0),
                  upsample_nearest2x(tape, m3));
  Tensor m1 = add(tape, conv2d(tape, s1, e.lat1, 1, 0),
                  upsample_nearest2x(tape, m2));
  return m1;
}

namespace {

Tensor mlp_forward(Tape& t, const Tensor& x, const MlpParams& m) {
  Tensor h = add(t, matmul(t, x, m.w1), m.b1);
  if (m.with_bn) h = batch_norm(t, h, m.gamma, m.beta, kBnEps);
  h = relu(t, h);
  return add(t, matmul(t, h, m.w2), m.b2);
}

}  // namespace

std::pair<Tensor, Tensor> project_predict(Tape& tape, const Tensor& x,
                                          const MlpParams& g,
                                          const MlpParams& h) {
  if (x.rank() != 2 || x.shape[0] < 2)
    throw ShapeError("project_predict: need [M x C] with M >= 2");
  Tensor z = mlp_forward(tape, x, g);
  Tensor p = mlp_forward(tape, z, h);
  return {z, p};
}

Tensor semantic_dissimilar_loss(Tape& tape, const Tensor& x_bg,
                                const Tensor& x_fg) {
  if (x_bg.rank() != 2 || x_bg.shape != x_fg.shape)
    throw ShapeError("semantic_dissimilar_loss: need equal [N x C] blocks");
  const Index n = x_bg.shape[0];
  std::vector<Tensor> terms;
  terms.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Tensor a = slice_first(tape, x_bg, i);
    Tensor b = slice_first(tape, x_fg, i);
    terms.push_back(add_const(tape, cosine_similarity(tape, a, b), 1.0));
  }
  return mean(tape, stack_scalars(tape, terms));
}

Tensor symmetrized_similarity(Tape& tape, const Tensor& p_a, const Tensor& z_b,
                              const Tensor& p_b, const Tensor& z_a) {
  Tensor d1 = cosine_similarity(tape, p_a, stop_gradient(tape, z_b));
  Tensor d2 = cosine_similarity(tape, p_b, stop_gradient(tape, z_a));
  Tensor avg = scale(tape, add(tape, d1, d2), -0.5);
  return add_const(tape, avg, 1.0);
}

PointSet sample_triplet_points(const ViewTriplet& t, const Mask& original_mask,
                               int n_points, Rng& rng) {
  auto bb = overlap(reverse_geom(t.rec1), reverse_geom(t.rec2));
  if (!bb) throw Error("sample_triplet_points: view records do not overlap");
  return sample_points(original_mask, *bb, n_points, rng);
}

namespace {

struct SampleGeometry {
  // feature-map coordinates per view; empty for a missing class
  std::vector<std::pair<Index, Index>> v1_bg, v1_fg, v2_bg, v2_fg, v3_fg;
};

SampleGeometry map_to_features(const PreparedSample& s, int ds, int feat_h,
                               int feat_w) {
  SampleGeometry g;
  auto convert = [&](const std::vector<Point>& pts, const GeomAugRecord& rec) {
    return to_coords(
        downscale_points(map_points(pts, rec), ds, feat_h, feat_w));
  };
  const auto& bg = s.points.of_class(1);
  const auto& fg = s.points.of_class(2);
  if (!bg.empty()) {
    g.v1_bg = convert(bg, s.triplet->rec1);
    g.v2_bg = convert(bg, s.triplet->rec2);
  }
  if (!fg.empty()) {
    g.v1_fg = convert(fg, s.triplet->rec1);
    g.v2_fg = convert(fg, s.triplet->rec2);
    g.v3_fg = g.v1_fg;  // view 3 shares view-1 coordinates, foreground only
  }
  return g;
}

}  // namespace

LossResult batch_loss_prepared(Tape& tape,
                               const std::vector<PreparedSample>& samples,
                               const ModelParams& params) {
  if (samples.empty()) throw Error("batch_loss: zero valid samples");
  const int B = static_cast<int>(samples.size());

  std::vector<const ImageRGB*> v1s, v2s, v3s;
  for (const auto& s : samples) {
    v1s.push_back(&s.triplet->view1);
    v2s.push_back(&s.triplet->view2);
    v3s.push_back(&s.triplet->view3);
  }
  Tensor x1 = encoder_forward(
      tape, images_to_tensor(v1s, params.norm_mean, params.norm_std),
      params.encoder);
  Tensor x2 = encoder_forward(
      tape, images_to_tensor(v2s, params.norm_mean, params.norm_std),
      params.encoder);
  Tensor x3 = encoder_forward(
      tape, images_to_tensor(v3s, params.norm_mean, params.norm_std),
      params.encoder);
  const int ds = EncoderParams::kDownscale;
  const int feat_h = static_cast<int>(x1.shape[2]);
  const int feat_w = static_cast<int>(x1.shape[3]);

  // Gather per-sample point embeddings; stack per view for the MLPs so the
  // norm statistics run over all points of all samples in the batch.
  struct PerSample {
    SampleGeometry geom;
    Tensor x1_bg, x1_fg, x2_bg, x2_fg, x3_fg;  // [N x C] blocks (if present)
    Index off1 = -1, off2 = -1, off3 = -1;     // row offsets in the stacks
  };
  std::vector<PerSample> per(static_cast<std::size_t>(B));
  std::vector<Tensor> stack1, stack2, stack3;
  Index off1 = 0, off2 = 0, off3 = 0;
  for (int b = 0; b < B; ++b) {
    PerSample& ps = per[static_cast<std::size_t>(b)];
    ps.geom = map_to_features(samples[static_cast<std::size_t>(b)], ds, feat_h,
                              feat_w);
    Tensor f1 = slice_first(tape, x1, b);
    Tensor f2 = slice_first(tape, x2, b);
    Tensor f3 = slice_first(tape, x3, b);
    ps.off1 = off1;
    ps.off2 = off2;
    ps.off3 = off3;
    if (!ps.geom.v1_bg.empty()) {
      ps.x1_bg = gather(tape, f1, ps.geom.v1_bg);
      ps.x2_bg = gather(tape, f2, ps.geom.v2_bg);
      stack1.push_back(ps.x1_bg);
      stack2.push_back(ps.x2_bg);
      off1 += ps.x1_bg.shape[0];
      off2 += ps.x2_bg.shape[0];
    }
    if (!ps.geom.v1_fg.empty()) {
      ps.x1_fg = gather(tape, f1, ps.geom.v1_fg);
      ps.x2_fg = gather(tape, f2, ps.geom.v2_fg);
      ps.x3_fg = gather(tape, f3, ps.geom.v3_fg);
      stack1.push_back(ps.x1_fg);
      stack2.push_back(ps.x2_fg);
      stack3.push_back(ps.x3_fg);
      off1 += ps.x1_fg.shape[0];
      off2 += ps.x2_fg.shape[0];
      off3 += ps.x3_fg.shape[0];
    }
  }
  if (stack1.empty()) throw Error("batch_loss: no sampled points in batch");

  Tensor cat1 = concat_rows(tape, stack1);
  Tensor cat2 = concat_rows(tape, stack2);
  auto [z1, p1] = project_predict(tape, cat1, params.projector, params.predictor);
  auto [z2, p2] = project_predict(tape, cat2, params.projector, params.predictor);
  Tensor z3, p3;
  bool have_v3 = !stack3.empty();
  if (have_v3) {
    Tensor cat3 = concat_rows(tape, stack3);
    std::tie(z3, p3) =
        project_predict(tape, cat3, params.projector, params.predictor);
  }

  LossResult result;
  std::vector<Tensor> sd_nodes, s1_nodes, s2_nodes;
  for (int b = 0; b < B; ++b) {
    PerSample& ps = per[static_cast<std::size_t>(b)];
    const bool has_bg = !ps.geom.v1_bg.empty();
    const bool has_fg = !ps.geom.v1_fg.empty();
    LossBreakdown lb;

    Tensor sd_node, s1_node, s2_node;
    if (has_bg && has_fg) {
      Tensor sd1 = semantic_dissimilar_loss(tape, ps.x1_bg, ps.x1_fg);
      Tensor sd2 = semantic_dissimilar_loss(tape, ps.x2_bg, ps.x2_fg);
      sd_node = scale(tape, add(tape, sd1, sd2), 0.5);
      lb.l_sd = sd_node.data[0];
      sd_nodes.push_back(sd_node);
    }

    // row offsets: bg rows first (when present), then fg rows
    const Index n_bg = has_bg ? static_cast<Index>(ps.geom.v1_bg.size()) : 0;
    const Index n_fg = has_fg ? static_cast<Index>(ps.geom.v1_fg.size()) : 0;
    std::vector<Tensor> s1_terms;
    for (Index i = 0; i < n_bg + n_fg; ++i) {
      Tensor pa = slice_first(tape, p1, ps.off1 + i);
      Tensor zb = slice_first(tape, z2, ps.off2 + i);
      Tensor pb = slice_first(tape, p2, ps.off2 + i);
      Tensor za = slice_first(tape, z1, ps.off1 + i);
      s1_terms.push_back(symmetrized_similarity(tape, pa, zb, pb, za));
    }
    if (!s1_terms.empty()) {
      s1_node = mean(tape, stack_scalars(tape, s1_terms));
      lb.l_s1 = s1_node.data[0];
      s1_nodes.push_back(s1_node);
    }

    if (has_fg && have_v3) {
      std::vector<Tensor> s2_terms;
      for (Index i = 0; i < n_fg; ++i) {
        Tensor pa = slice_first(tape, p1, ps.off1 + n_bg + i);
        Tensor zb = slice_first(tape, z3, ps.off3 + i);
        Tensor pb = slice_first(tape, p3, ps.off3 + i);
        Tensor za = slice_first(tape, z1, ps.off1 + n_bg + i);
        s2_terms.push_back(symmetrized_similarity(tape, pa, zb, pb, za));
      }
      s2_node = mean(tape, stack_scalars(tape, s2_terms));
      lb.l_s2 = s2_node.data[0];
      s2_nodes.push_back(s2_node);
    }

    lb.total = lb.l_sd + lb.l_s1 + lb.l_s2;
    result.per_sample.push_back(lb);
  }

  // Batch means, renormalized per term over the samples that computed it.
  auto term_mean = [&](std::vector<Tensor>& nodes, Tensor& out) {
    if (nodes.empty()) return false;
    out = mean(tape, stack_scalars(tape, nodes));
    return true;
  };
  Tensor sd_mean, s1_mean, s2_mean;
  bool have_sd = term_mean(sd_nodes, sd_mean);
  bool have_s1 = term_mean(s1_nodes, s1_mean);
  bool have_s2 = term_mean(s2_nodes, s2_mean);
  if (!have_s1 && !have_sd && !have_s2)
    throw Error("batch_loss: no loss term could be computed");

  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (auto* n : {have_sd ? &sd_mean : nullptr, have_s1 ? &s1_mean : nullptr,
                  have_s2 ? &s2_mean : nullptr}) {
    if (!n) continue;
    total = first ? *n : add(tape, total, *n);
    first = false;
  }
  result.value.l_sd = have_sd ? sd_mean.data[0] : 0.0;
  result.value.l_s1 = have_s1 ? s1_mean.data[0] : 0.0;
  result.value.l_s2 = have_s2 ? s2_mean.data[0] : 0.0;
  result.value.total =
      result.value.l_sd + result.value.l_s1 + result.value.l_s2;
  result.total_node = total;
  return result;
}

LossResult per_sample_loss(Tape& tape, const ViewTriplet& triplet,
                           const Mask& original_mask, const ModelParams& params,
                           int n_points, Rng& rng) {
  PreparedSample s;
  s.triplet = &triplet;
  s.points = sample_triplet_points(triplet, original_mask, n_points, rng);
  return batch_loss_prepared(tape, {s}, params);
}

LossResult batch_loss(Tape& tape, const BatchViews& batch,
                      const std::vector<Mask>& original_masks,
                      const ModelParams& params, int n_points, Rng& rng) {
  if (batch.empty() || batch.size() != original_masks.size())
    throw ShapeError("batch_loss: batch/mask length mismatch");
  std::vector<PreparedSample> samples(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    samples[i].triplet = &batch[i];
    Rng stream = rng.fork(i);
    samples[i].points = sample_triplet_points(
        batch[i], original_masks[i], n_points, stream);
  }
  return batch_loss_prepared(tape, samples, params);
}

GradCheckReport check_model_gradients(
    ModelParams& model, const std::vector<PreparedSample>& samples, double step,
    double kink_margin, int max_coords, std::uint64_t seed) {
  std::vector<Tensor*> params = model.parameters();
  std::vector<double> theta;
  for (Tensor* t : params)
    theta.insert(theta.end(), t->data.data(), t->data.data() + t->size());
  auto assign = [&](const std::vector<double>& th) {
    std::size_t off = 0;
    for (Tensor* t : params) {
      for (Index i = 0; i < t->size(); ++i)
        t->data[i] = th[off + static_cast<std::size_t>(i)];
      off += static_cast<std::size_t>(t->size());
    }
  };

  // Base run: analytic gradient plus the stop-gradient boundary values.
  std::vector<Tensor::Array> sg_values;
  Tape base;
  base.sg_record = &sg_values;
  bind_leaves(base, params);
  LossResult loss = batch_loss_prepared(base, samples, model);
  base.backward(loss.total_node);
  std::vector<double> analytic;
  for (Tensor* t : params) {
    auto g = base.grad(t->node);
    analytic.insert(analytic.end(), g.data(), g.data() + g.size());
  }

  auto eval = [&](const std::vector<double>& th, std::vector<double>* klog) {
    assign(th);
    Tape tape;
    tape.kink_log = klog;
    tape.sg_pin = &sg_values;
    LossResult l = batch_loss_prepared(tape, samples, model);
    return l.total_node.data[0];
  };
  GradCheckReport report = finite_diff_check(eval, theta, analytic, step,
                                             kink_margin, max_coords, seed);
  assign(theta);
  for (Tensor* t : params) t->node = -1;
  return report;
}

}  // namespace sadl
