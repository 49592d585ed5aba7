#pragma once

#include "sadl/checkpoint.hpp"
#include "sadl/model.hpp"

namespace sadl {

// Shallow change head over the feature-difference image: two 3x3 convs
// (C -> C/2 -> 2) with ReLU between, then 4x nearest upsampling.
struct CdHead {
  Tensor conv1, bias1;
  Tensor conv2, bias2;
};

struct CdModelParams {
  ModelDims dims;
  EncoderParams encoder;
  CdHead head;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.25, 0.25, 0.25};

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<Tensor*> parameters();
};

// Siamese CD model. The encoder (backbone + FPN) comes from the pretrain
// checkpoint when given, otherwise it is freshly initialized; the head is
// always random (zero-mean normal, sigma 0.02). Throws on a dimension
// mismatch between the checkpoint and the requested preset.
CdModelParams build_cd_model(Rng& rng, const ModelDims& dims,
                             const Checkpoint* init);

// Logits [B,2,H,W] from a bitemporal pair of [B,3,H,W] inputs: shared
// encoder, FDI = |x1 - x2| per pixel, then the change head.
Tensor cd_forward(Tape& tape, const Tensor& imgs_t1, const Tensor& imgs_t2,
                  const CdModelParams& params);

// Checkpoint bridges for both model kinds.
Checkpoint checkpoint_from_model(ModelParams& model, std::string metadata);
ModelParams model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint checkpoint_from_cd_model(CdModelParams& model, std::string metadata);
CdModelParams cd_model_from_checkpoint(const Checkpoint& ckpt);

// Parses "key=value" metadata lines (ignores everything else).
std::string metadata_value(const std::string& metadata, const std::string& key);

}  // namespace sadl
