#include "sadl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sadl/netpbm.hpp"
#include "sadl/parallel.hpp"

namespace sadl {

ModelDims TrainConfig::dims() const {
  if (preset == "desk") return ModelDims::desk();
  if (preset == "paper") return ModelDims::paper();
  throw ConfigError("unknown model preset '" + preset + "'");
}

double poly_lr(long step, long total_steps, double lr0, double power) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw Error("poly_lr: require 0 <= step <= total_steps");
  return lr0 * std::pow(1.0 - static_cast<double>(step) / total_steps, power);
}

double linear_lr(long step, long total_steps, double lr0) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw Error("linear_lr: require 0 <= step <= total_steps");
  return lr0 * (1.0 - static_cast<double>(step) / total_steps);
}

void sgd_step(Tensor& param, const Tensor::Array& grad, double lr,
              double momentum, double weight_decay, Tensor::Array& velocity) {
  if (grad.size() != param.size() || velocity.size() != param.size())
    throw ShapeError("sgd_step: parameter/gradient/velocity size mismatch");
  velocity = momentum * velocity + (grad + weight_decay * param.data);
  param.data -= lr * velocity;
}

void SgdState::init(const std::vector<Tensor*>& params) {
  velocity.clear();
  for (const Tensor* t : params)
    velocity.push_back(Tensor::Array::Zero(t->size()));
}

void sgd_step_all(const std::vector<Tensor*>& params,
                  const std::vector<Tensor::Array>& grads, double lr,
                  double momentum, double weight_decay, SgdState& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw ShapeError("sgd_step_all: list length mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    sgd_step(*params[i], grads[i], lr, momentum, weight_decay,
             state.velocity[i]);
}

CDMetrics metrics_from_counts(long tp, long fp, long fn) {
  CDMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = 2 * tp + fp + fn > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  m.iou = tp + fp + fn > 0 ? static_cast<double>(tp) / (tp + fp + fn) : 0.0;
  return m;
}

CDMetrics cd_metrics(const Mask& pred, const Mask& gt) {
  if (!pred.same_size(gt)) throw ShapeError("cd_metrics: size mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (int r = 0; r < pred.h; ++r)
    for (int c = 0; c < pred.w; ++c) {
      bool p = pred.at(r, c) != 0, g = gt.at(r, c) != 0;
      if (p && g) ++tp;
      else if (p && !g) ++fp;
      else if (!p && g) ++fn;
    }
  return metrics_from_counts(tp, fp, fn);
}

Grid self_similarity_map(const Tensor& feat_chw, int r, int c) {
  if (feat_chw.rank() != 3)
    throw ShapeError("self_similarity_map: feature map must be [C,H,W]");
  const Index C = feat_chw.shape[0], H = feat_chw.shape[1], W = feat_chw.shape[2];
  if (r < 0 || r >= H || c < 0 || c >= W)
    throw Error("self_similarity_map: query point out of bounds");
  Grid logits(H, W);
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j < W; ++j) {
      double dot = 0;
      for (Index ch = 0; ch < C; ++ch)
        dot += feat_chw.data[(ch * H + i) * W + j] *
               feat_chw.data[(ch * H + r) * W + c];
      logits(i, j) = dot;
    }
  Grid shifted = logits - logits.maxCoeff();
  Grid ex = shifted.exp();
  return ex / ex.sum();
}

SceneDataset load_scene_split(const DatasetManifest& m,
                              const std::string& split) {
  SceneDataset out;
  for (const auto& rec : m.split(split)) {
    if (rec.is_pair())
      throw Error("expected a scene dataset, found CD pair records");
    out.images.push_back(read_ppm(m.resolve(rec.image)));
    out.masks.push_back(read_pgm(m.resolve(rec.mask)));
  }
  return out;
}

CdDataset load_cd_split(const DatasetManifest& m, const std::string& split) {
  CdDataset out;
  for (const auto& rec : m.split(split)) {
    if (!rec.is_pair())
      throw Error("expected a CD dataset, found scene records");
    CDPair p;
    p.image_t1 = read_ppm(m.resolve(rec.image));
    p.image_t2 = read_ppm(m.resolve(rec.image2));
    p.change_mask = read_pgm(m.resolve(rec.mask));
    out.pairs.push_back(std::move(p));
  }
  return out;
}

void channel_stats(const std::vector<const ImageRGB*>& images,
                   std::array<double, 3>& mean,
                   std::array<double, 3>& std_dev) {
  if (images.empty()) throw Error("channel_stats: no images");
  for (int c = 0; c < 3; ++c) {
    double sum = 0, count = 0;
    for (const ImageRGB* img : images) {
      sum += img->ch[(std::size_t)c].sum();
      count += static_cast<double>(img->h) * img->w;
    }
    double mu = sum / count;
    double var = 0;
    for (const ImageRGB* img : images)
      var += (img->ch[(std::size_t)c] - mu).square().sum();
    var /= count;
    mean[(std::size_t)c] = mu;
    std_dev[(std::size_t)c] = std::max(std::sqrt(var), 1e-6);
  }
}

namespace {

std::vector<int> shuffled_indices(int n, Rng rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[(std::size_t)i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[(std::size_t)i], idx[(std::size_t)rng.uniform_int(i + 1)]);
  return idx;
}

// Samples N points for every class that has a pixel inside bb; absent
// classes stay empty.
PointSet sample_available_classes(const Mask& mask, const BBox& bb,
                                  int n_points, Rng& rng) {
  PointSet out;
  std::array<std::vector<Point>, 2> candidates;
  for (int r = bb.v; r < bb.v + bb.h; ++r)
    for (int c = bb.u; c < bb.u + bb.w; ++c)
      candidates[mask.at(r, c) ? 1 : 0].push_back(Point{r, c});
  for (int k = 1; k <= 2; ++k) {
    const auto& pool = candidates[(std::size_t)(k - 1)];
    if (pool.empty()) continue;
    for (int i = 0; i < n_points; ++i)
      out.of_class(k).push_back(
          pool[(std::size_t)rng.uniform_int(static_cast<int>(pool.size()))]);
  }
  return out;
}

}  // namespace

PreparedBatch prepare_pretrain_batch(const std::vector<const ImageRGB*>& images,
                                     const std::vector<const Mask*>& masks,
                                     Rng& batch_rng, const TrainConfig& cfg) {
  if (images.empty() || images.size() != masks.size())
    throw ShapeError("prepare_pretrain_batch: bad batch");
  const int B = static_cast<int>(images.size());
  PreparedBatch out;
  out.triplets.resize((std::size_t)B);
  out.points.resize((std::size_t)B);
  std::vector<TwoViews> two((std::size_t)B);

  parallel_for(
      B,
      [&](int i) {
        const ImageRGB& img = *images[(std::size_t)i];
        const Mask& mask = *masks[(std::size_t)i];
        bool done = false;
        for (int attempt = 0; attempt <= cfg.retry_limit && !done; ++attempt) {
          Rng stream = attempt == 0
                           ? batch_rng.fork((std::uint64_t)i)
                           : batch_rng.fork((std::uint64_t)i,
                                            (std::uint64_t)attempt);
          TwoViews tv = generate_two_views(img, mask, stream, cfg.views);
          auto bb = overlap(reverse_geom(tv.rec1), reverse_geom(tv.rec2));
          if (!bb) continue;
          try {
            out.points[(std::size_t)i] =
                sample_points(mask, *bb, cfg.n_points, stream);
            two[(std::size_t)i] = std::move(tv);
            done = true;
          } catch (const ClassAbsentError&) {
            if (attempt == cfg.retry_limit) {
              // exhausted: keep these views, drop the absent class
              out.points[(std::size_t)i] =
                  sample_available_classes(mask, *bb, cfg.n_points, stream);
              two[(std::size_t)i] = std::move(tv);
              done = true;
            }
          }
        }
        if (!done) {
          // only reachable under configs whose crops may fail to overlap:
          // fall back to color-only views over the full frame
          Rng stream = batch_rng.fork((std::uint64_t)i, 0xFFFF);
          ViewGenConfig identity_cfg = cfg.views;
          identity_cfg.geom.scale_min = identity_cfg.geom.scale_max = 1.0;
          identity_cfg.geom.ratio_min = identity_cfg.geom.ratio_max = 1.0;
          identity_cfg.geom.hflip_prob = identity_cfg.geom.vflip_prob = 0.0;
          TwoViews tv = generate_two_views(img, mask, stream, identity_cfg);
          BBox bb{0, 0, img.w, img.h};
          out.points[(std::size_t)i] =
              sample_available_classes(mask, bb, cfg.n_points, stream);
          two[(std::size_t)i] = std::move(tv);
        }
      },
      cfg.threads);

  parallel_for(
      B,
      [&](int i) {
        const TwoViews& self = two[(std::size_t)i];
        const TwoViews& partner = two[(std::size_t)partner_index(i, B)];
        ViewTriplet t;
        t.view1 = self.view1;
        t.view2 = self.view2;
        t.mask1 = self.mask1;
        t.mask2 = self.mask2;
        t.rec1 = self.rec1;
        t.rec2 = self.rec2;
        t.view3 = swap_background(self.view1, self.mask1, partner.view1,
                                  partner.mask1, cfg.views);
        out.triplets[(std::size_t)i] = std::move(t);
      },
      cfg.threads);
  return out;
}

namespace {

std::string csv_row(long step, double lr, const LossBreakdown& lb) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g\n", step,
                lr, lb.l_sd, lb.l_s1, lb.l_s2, lb.total);
  return buf;
}

std::string metrics_row(int epoch, const char* split, const CDMetrics& m) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.6f\n", epoch, split,
                m.precision, m.recall, m.f1, m.iou);
  return buf;
}

}  // namespace

PretrainResult pretrain(
    const TrainConfig& cfg, const DatasetManifest& manifest,
    const std::function<void(int epoch, ModelParams&)>& on_epoch) {
  SceneDataset data = load_scene_split(manifest, "train");
  const int n = static_cast<int>(data.images.size());
  if (n == 0) throw Error("pretrain: empty train split");

  Rng rng(cfg.seed);
  PretrainResult result;
  Rng init_rng = rng.fork(0);
  result.model = ModelParams::init(init_rng, cfg.dims());
  {
    std::vector<const ImageRGB*> ptrs;
    for (const auto& img : data.images) ptrs.push_back(&img);
    channel_stats(ptrs, result.model.norm_mean, result.model.norm_std);
  }
  result.csv = "step,lr,l_sd,l_s1,l_s2,total\n";

  std::vector<Tensor*> params = result.model.parameters();
  SgdState state;
  state.init(params);

  const long steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = shuffled_indices(n, rng.fork(1, (std::uint64_t)epoch));
    double epoch_total = 0;
    long epoch_steps = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      int bsz = std::min(cfg.batch, n - start);
      std::vector<const ImageRGB*> imgs;
      std::vector<const Mask*> msks;
      for (int i = 0; i < bsz; ++i) {
        int idx = order[(std::size_t)(start + i)];
        imgs.push_back(&data.images[(std::size_t)idx]);
        msks.push_back(&data.masks[(std::size_t)idx]);
      }
      Rng batch_rng = rng.fork(2, (std::uint64_t)step);
      PreparedBatch batch = prepare_pretrain_batch(imgs, msks, batch_rng, cfg);

      Tape tape;
      bind_leaves(tape, params);
      std::vector<PreparedSample> samples((std::size_t)bsz);
      for (int i = 0; i < bsz; ++i) {
        samples[(std::size_t)i].triplet = &batch.triplets[(std::size_t)i];
        samples[(std::size_t)i].points = batch.points[(std::size_t)i];
      }
      LossResult loss = batch_loss_prepared(tape, samples, result.model);
      tape.backward(loss.total_node);

      double lr = poly_lr(step, total_steps, cfg.lr0, cfg.poly_power);
      std::vector<Tensor::Array> grads;
      grads.reserve(params.size());
      for (Tensor* p : params) grads.push_back(tape.grad(p->node));
      sgd_step_all(params, grads, lr, cfg.momentum, cfg.weight_decay, state);

      result.csv += csv_row(step, lr, loss.value);
      epoch_total += loss.value.total;
      ++epoch_steps;
      ++step;
    }
    result.epoch_mean_total.push_back(epoch_total / (double)epoch_steps);
    if (on_epoch) on_epoch(epoch, result.model);
  }
  return result;
}

namespace {

struct AugmentedPair {
  ImageRGB t1, t2;
  Mask change;
};

// Fine-tune augmentation: a shared flip for both epochs and the mask,
// plus independent Gaussian blur per epoch image.
AugmentedPair augment_cd_pair(const CDPair& pair, Rng& rng) {
  AugmentedPair out{pair.image_t1, pair.image_t2, pair.change_mask};
  bool hflip = rng.bernoulli(0.5), vflip = rng.bernoulli(0.5);
  GeomAugRecord rec = GeomAugRecord::identity(pair.image_t1.h, pair.image_t1.w);
  rec.hflip = hflip;
  rec.vflip = vflip;
  out.t1 = apply_geom_image(out.t1, rec);
  out.t2 = apply_geom_image(out.t2, rec);
  out.change = apply_geom_mask(out.change, rec);
  for (ImageRGB* img : {&out.t1, &out.t2}) {
    bool blur = rng.bernoulli(0.5);
    double sigma = rng.uniform(0.1, 2.0);
    if (blur) *img = gaussian_blur(*img, sigma, blur_radius_for_sigma(sigma));
  }
  return out;
}

std::vector<std::uint8_t> flatten_masks(const std::vector<const Mask*>& masks) {
  std::vector<std::uint8_t> out;
  for (const Mask* m : masks)
    for (int r = 0; r < m->h; ++r)
      for (int c = 0; c < m->w; ++c) out.push_back(m->at(r, c));
  return out;
}

Mask logits_to_mask(const Tensor& logits, int b) {
  const Index H = logits.shape[2], W = logits.shape[3];
  Mask out(static_cast<int>(H), static_cast<int>(W));
  for (Index r = 0; r < H; ++r)
    for (Index c = 0; c < W; ++c) {
      double l0 = logits.data[((b * 2 + 0) * H + r) * W + c];
      double l1 = logits.data[((b * 2 + 1) * H + r) * W + c];
      out.at(static_cast<int>(r), static_cast<int>(c)) = l1 > l0 ? 1 : 0;
    }
  return out;
}

}  // namespace

CDMetrics evaluate_cd(const CdModelParams& model, const CdDataset& data,
                      int batch) {
  long tp = 0, fp = 0, fn = 0;
  const int n = static_cast<int>(data.pairs.size());
  for (int start = 0; start < n; start += batch) {
    int bsz = std::min(batch, n - start);
    std::vector<const ImageRGB*> t1s, t2s;
    for (int i = 0; i < bsz; ++i) {
      t1s.push_back(&data.pairs[(std::size_t)(start + i)].image_t1);
      t2s.push_back(&data.pairs[(std::size_t)(start + i)].image_t2);
    }
    Tape tape;
    Tensor logits = cd_forward(
        tape, images_to_tensor(t1s, model.norm_mean, model.norm_std),
        images_to_tensor(t2s, model.norm_mean, model.norm_std), model);
    for (int i = 0; i < bsz; ++i) {
      Mask pred = logits_to_mask(logits, i);
      const Mask& gt = data.pairs[(std::size_t)(start + i)].change_mask;
      CDMetrics m = cd_metrics(pred, gt);
      tp += m.tp;
      fp += m.fp;
      fn += m.fn;
    }
  }
  return metrics_from_counts(tp, fp, fn);
}

FinetuneResult finetune_cd(const TrainConfig& cfg,
                           const DatasetManifest& manifest,
                           const Checkpoint* init, double train_fraction) {
  if (!(train_fraction > 0.0) || train_fraction > 1.0)
    throw ConfigError("train fraction must be in (0, 1]");
  CdDataset train = load_cd_split(manifest, "train");
  CdDataset val = load_cd_split(manifest, "val");
  CdDataset test = load_cd_split(manifest, "test");
  if (train.pairs.empty()) throw Error("finetune_cd: empty train split");
  // seed-shuffled manifest order makes prefix regimes nested
  long keep = std::max(
      1L, std::lround(train_fraction * static_cast<double>(train.pairs.size())));
  train.pairs.resize(std::min<std::size_t>((std::size_t)keep,
                                           train.pairs.size()));

  Rng rng(cfg.seed);
  Rng build_rng = rng.fork(0);
  FinetuneResult result;
  result.best_model = build_cd_model(build_rng, cfg.dims(), init);
  {
    std::vector<const ImageRGB*> ptrs;
    for (const auto& p : train.pairs) {
      ptrs.push_back(&p.image_t1);
      ptrs.push_back(&p.image_t2);
    }
    channel_stats(ptrs, result.best_model.norm_mean,
                  result.best_model.norm_std);
  }
  result.csv = "epoch,split,precision,recall,f1,iou\n";

  CdModelParams model = result.best_model;
  std::vector<Tensor*> params = model.parameters();
  SgdState state;
  state.init(params);

  const int n = static_cast<int>(train.pairs.size());
  const long steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const long total_steps = std::max(1L, steps_per_epoch * cfg.epochs);
  double best_f1 = -1.0;
  long step = 0;

  auto validate = [&](int epoch, CdModelParams& m) {
    CDMetrics vm = evaluate_cd(m, val, cfg.batch);
    result.csv += metrics_row(epoch, "val", vm);
    if (vm.f1 > best_f1) {
      best_f1 = vm.f1;
      result.best_model = m;
      result.best_epoch = epoch;
      result.best_val = vm;
    }
  };

  if (cfg.epochs == 0) validate(0, model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = shuffled_indices(n, rng.fork(1, (std::uint64_t)epoch));
    for (int start = 0; start < n; start += cfg.batch) {
      int bsz = std::min(cfg.batch, n - start);
      std::vector<AugmentedPair> aug((std::size_t)bsz);
      for (int i = 0; i < bsz; ++i) {
        Rng stream = rng.fork(2, (std::uint64_t)step).fork((std::uint64_t)i);
        aug[(std::size_t)i] = augment_cd_pair(
            train.pairs[(std::size_t)order[(std::size_t)(start + i)]], stream);
      }
      std::vector<const ImageRGB*> t1s, t2s;
      std::vector<const Mask*> targets;
      for (const auto& a : aug) {
        t1s.push_back(&a.t1);
        t2s.push_back(&a.t2);
        targets.push_back(&a.change);
      }
      Tape tape;
      bind_leaves(tape, params);
      Tensor logits = cd_forward(
          tape, images_to_tensor(t1s, model.norm_mean, model.norm_std),
          images_to_tensor(t2s, model.norm_mean, model.norm_std), model);
      Tensor loss = cross_entropy_2class(tape, logits, flatten_masks(targets));
      tape.backward(loss);
      double lr = linear_lr(step, total_steps, cfg.lr0);
      std::vector<Tensor::Array> grads;
      grads.reserve(params.size());
      for (Tensor* p : params) grads.push_back(tape.grad(p->node));
      sgd_step_all(params, grads, lr, cfg.momentum, cfg.weight_decay, state);
      ++step;
    }
    validate(epoch, model);
  }

  result.test = evaluate_cd(result.best_model, test, cfg.batch);
  result.csv += metrics_row(result.best_epoch, "test", result.test);
  return result;
}

}  // namespace sadl
