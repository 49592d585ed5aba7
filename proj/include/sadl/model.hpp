#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "sadl/gradcheck.hpp"
#include "sadl/sampling.hpp"
#include "sadl/tape.hpp"
#include "sadl/view_pipeline.hpp"

namespace sadl {

// Channel-dimension preset. The backbone topology (stem + three stride-2
// stages with pyramid channels 16/32/64) is fixed; presets switch the FPN
// output width and the projector/predictor dims.
struct ModelDims {
  int feat_channels = 32;  // C
  int proj_hidden = 64;
  int embed_dim = 32;      // C'
  int pred_hidden = 16;

  static ModelDims desk() { return ModelDims{32, 64, 32, 16}; }
  static ModelDims paper() { return ModelDims{256, 2048, 1024, 256}; }
  bool operator==(const ModelDims&) const = default;
};

// 3x3 stride-2 convolution followed by per-channel batch norm and ReLU.
struct ConvBn {
  Tensor kernel;  // [Cout, Cin, 3, 3]
  Tensor gamma, beta;
};

// Tiny backbone + FPN with downsampling factor 4. Pyramid levels at
// 1/4 (16 ch), 1/8 (32 ch), 1/16 (64 ch); 1x1 laterals project each level
// to C; top-down 2x upsample-and-add fuses them into the 1/4 output.
struct EncoderParams {
  static constexpr int kDownscale = 4;
  ConvBn stem;    // 3 -> 16, to 1/2
  ConvBn stage1;  // 16 -> 16, to 1/4
  ConvBn stage2;  // 16 -> 32, to 1/8
  ConvBn stage3;  // 32 -> 64, to 1/16
  Tensor lat1, lat2, lat3;  // 1x1 kernels: 16/32/64 -> C
  int out_channels = 32;
};

// Two linear layers with BN+ReLU between. with_bn=false drops the norm
// (used by identity-configuration tests only).
struct MlpParams {
  Tensor w1, b1;      // [in, hidden], [hidden]
  Tensor gamma, beta; // [hidden]
  Tensor w2, b2;      // [hidden, out]
  bool with_bn = true;
};

struct ModelParams {
  ModelDims dims;
  EncoderParams encoder;
  MlpParams projector;  // C -> proj_hidden -> C'
  MlpParams predictor;  // C' -> pred_hidden -> C'
  // Per-channel input standardization, computed once from the training
  // manifest and carried with the checkpoint.
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.25, 0.25, 0.25};

  static ModelParams init(Rng& rng, const ModelDims& dims);
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<Tensor*> parameters();
};

ConvBn init_conv_bn(Rng& rng, int cin, int cout);
MlpParams init_mlp(Rng& rng, int in, int hidden, int out);

// Registers every parameter tensor as a tape leaf (in place).
void bind_leaves(Tape& tape, const std::vector<Tensor*>& params);

// Stacks images into a [B,3,H,W] constant standardized per channel.
Tensor images_to_tensor(const std::vector<const ImageRGB*>& images,
                        const std::array<double, 3>& mean,
                        const std::array<double, 3>& std);

// Dense features [B,C,H/4,W/4]. H and W must be divisible by 16.
Tensor encoder_forward(Tape& tape, const Tensor& imgs, const EncoderParams& e);

// z = g(x), p = h(z) over stacked point rows [M, C]; M >= 2 for the norm.
std::pair<Tensor, Tensor> project_predict(Tape& tape, const Tensor& x,
                                          const MlpParams& g,
                                          const MlpParams& h);

// mean_n D(x_bg[n], x_fg[n]) + 1, paired by row index; value in [0, 2].
Tensor semantic_dissimilar_loss(Tape& tape, const Tensor& x_bg,
                                const Tensor& x_fg);

// 1 - (D(p_a, stopgrad(z_b)) + D(p_b, stopgrad(z_a))) / 2; value in [0, 2].
Tensor symmetrized_similarity(Tape& tape, const Tensor& p_a, const Tensor& z_b,
                              const Tensor& p_b, const Tensor& z_a);

struct LossBreakdown {
  double l_sd = 0, l_s1 = 0, l_s2 = 0, total = 0;
};

struct LossResult {
  LossBreakdown value;                    // batch means
  std::vector<LossBreakdown> per_sample;  // one entry per valid sample
  Tensor total_node;                      // scalar node for backward
};

// One sample ready for the loss: its views and sampled points. A class
// vector may be empty after the trainer's retry fallback; terms needing it
// are then dropped for this sample and the remaining means renormalized.
struct PreparedSample {
  const ViewTriplet* triplet = nullptr;
  PointSet points;  // original-image coordinates
};

// Samples N points per class from the original mask inside the overlap of
// the two view records. Throws ClassAbsentError (and Error when the
// records do not overlap, which cannot happen under the default config).
PointSet sample_triplet_points(const ViewTriplet& t, const Mask& original_mask,
                               int n_points, Rng& rng);

// Full SaDL objective over prepared samples. Encodes all three views,
// gathers point embeddings (view 3 at view-1 coordinates, foreground
// only), projects/predicts per view with statistics over the stacked
// point axis, and assembles L_sd, L_s1, L_s2.
LossResult batch_loss_prepared(Tape& tape,
                               const std::vector<PreparedSample>& samples,
                               const ModelParams& params);

LossResult per_sample_loss(Tape& tape, const ViewTriplet& triplet,
                           const Mask& original_mask, const ModelParams& params,
                           int n_points, Rng& rng);

LossResult batch_loss(Tape& tape, const BatchViews& batch,
                      const std::vector<Mask>& original_masks,
                      const ModelParams& params, int n_points, Rng& rng);

// Finite-difference check of the total loss over all model parameters.
// stop_gradient boundaries are replayed at their base-run values (they are
// constants by definition), and relu/abs kink crossings are skipped.
GradCheckReport check_model_gradients(ModelParams& model,
                                      const std::vector<PreparedSample>& samples,
                                      double step, double kink_margin,
                                      int max_coords, std::uint64_t seed);

}  // namespace sadl
