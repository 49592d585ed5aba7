#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sadl/cd_model.hpp"
#include "sadl/manifest.hpp"
#include "sadl/model.hpp"
#include "sadl/synth.hpp"

namespace sadl {

struct TrainConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double poly_power = 0.9;
  int epochs = 5;    // paper preset: 200
  int batch = 8;     // paper preset: 64
  int n_points = 16; // N
  int retry_limit = 10;
  std::uint64_t seed = 0;
  std::string preset = "desk";  // desk | paper
  int threads = 0;              // 0 = SADL_THREADS or hardware
  ViewGenConfig views;

  ModelDims dims() const;
};

// lr0 * (1 - step/total)^power; exact lr0 at step 0 and 0 at the end.
double poly_lr(long step, long total_steps, double lr0, double power);
// Linear decay to zero, used by the downstream fine-tune.
double linear_lr(long step, long total_steps, double lr0);

// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v
void sgd_step(Tensor& param, const Tensor::Array& grad, double lr,
              double momentum, double weight_decay, Tensor::Array& velocity);

struct SgdState {
  std::vector<Tensor::Array> velocity;
  void init(const std::vector<Tensor*>& params);
};

void sgd_step_all(const std::vector<Tensor*>& params,
                  const std::vector<Tensor::Array>& grads, double lr,
                  double momentum, double weight_decay, SgdState& state);

// Pixel counts and derived ratios for the change class; every ratio is 0
// when its denominator is 0.
struct CDMetrics {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0, iou = 0;
};

CDMetrics metrics_from_counts(long tp, long fp, long fn);
CDMetrics cd_metrics(const Mask& pred, const Mask& gt);

// Softmax over all feature-map positions of dot products against the
// embedding at (r, c); sums to 1.
Grid self_similarity_map(const Tensor& feat_chw, int r, int c);

// In-memory datasets loaded from a manifest split.
struct SceneDataset {
  std::vector<ImageRGB> images;
  std::vector<Mask> masks;
};
SceneDataset load_scene_split(const DatasetManifest& m, const std::string& split);

struct CdDataset {
  std::vector<CDPair> pairs;
};
CdDataset load_cd_split(const DatasetManifest& m, const std::string& split);

// Per-channel mean and population std over all pixels.
void channel_stats(const std::vector<const ImageRGB*>& images,
                   std::array<double, 3>& mean, std::array<double, 3>& std_dev);

// One pretraining batch after the retry policy: views regenerated up to
// retry_limit times per sample when a class is absent from the overlap;
// after that the sample keeps only its available class (its L_sd and L_s2
// terms are dropped downstream). View 3 is built from the final view 1s.
struct PreparedBatch {
  std::vector<ViewTriplet> triplets;
  std::vector<PointSet> points;
};
PreparedBatch prepare_pretrain_batch(const std::vector<const ImageRGB*>& images,
                                     const std::vector<const Mask*>& masks,
                                     Rng& batch_rng, const TrainConfig& cfg);

struct PretrainResult {
  ModelParams model;
  std::string csv;  // header: step,lr,l_sd,l_s1,l_s2,total
  std::vector<double> epoch_mean_total;
};

// SGD + poly schedule over the manifest's train split. on_epoch (optional)
// runs after each epoch with the current model, e.g. to write checkpoints.
PretrainResult pretrain(
    const TrainConfig& cfg, const DatasetManifest& manifest,
    const std::function<void(int epoch, ModelParams&)>& on_epoch = {});

struct FinetuneResult {
  CdModelParams best_model;
  int best_epoch = -1;
  CDMetrics best_val;
  CDMetrics test;
  std::string csv;  // header: epoch,split,precision,recall,f1,iou
};

// Fine-tunes the CD model (cross-entropy, SGD momentum, linear lr decay)
// and returns the best-validation-F1 checkpointed model. train_fraction
// takes the seed-shuffled prefix of the train split, so smaller regimes
// nest inside larger ones.
FinetuneResult finetune_cd(const TrainConfig& cfg,
                           const DatasetManifest& manifest,
                           const Checkpoint* init, double train_fraction = 1.0);

// Dataset-level evaluation: micro-aggregated counts over all pairs.
CDMetrics evaluate_cd(const CdModelParams& model, const CdDataset& data,
                      int batch);

}  // namespace sadl
