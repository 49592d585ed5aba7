#include "sadl/cd_model.hpp"

#include <sstream>

namespace sadl {

std::vector<std::pair<std::string, Tensor*>> CdModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto conv_bn = [&](const std::string& prefix, ConvBn& c) {
    out.emplace_back(prefix + ".kernel", &c.kernel);
    out.emplace_back(prefix + ".gamma", &c.gamma);
    out.emplace_back(prefix + ".beta", &c.beta);
  };
  conv_bn("encoder.stem", encoder.stem);
  conv_bn("encoder.stage1", encoder.stage1);
  conv_bn("encoder.stage2", encoder.stage2);
  conv_bn("encoder.stage3", encoder.stage3);
  out.emplace_back("encoder.lat1", &encoder.lat1);
  out.emplace_back("encoder.lat2", &encoder.lat2);
  out.emplace_back("encoder.lat3", &encoder.lat3);
  out.emplace_back("cdhead.conv1", &head.conv1);
  out.emplace_back("cdhead.bias1", &head.bias1);
  out.emplace_back("cdhead.conv2", &head.conv2);
  out.emplace_back("cdhead.bias2", &head.bias2);
  return out;
}

std::vector<Tensor*> CdModelParams::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::string metadata_value(const std::string& metadata,
                           const std::string& key) {
  std::stringstream ss(metadata);
  std::string line;
  while (std::getline(ss, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos && line.substr(0, eq) == key)
      return line.substr(eq + 1);
  }
  return "";
}

namespace {

ModelDims dims_from_metadata(const Checkpoint& ckpt) {
  ModelDims d;
  auto get = [&](const char* key, int fallback) {
    std::string v = metadata_value(ckpt.metadata, key);
    return v.empty() ? fallback : std::stoi(v);
  };
  d.feat_channels = get("feat_channels", d.feat_channels);
  d.proj_hidden = get("proj_hidden", d.proj_hidden);
  d.embed_dim = get("embed_dim", d.embed_dim);
  d.pred_hidden = get("pred_hidden", d.pred_hidden);
  return d;
}

void load_named(const Checkpoint& ckpt,
                std::vector<std::pair<std::string, Tensor*>> named,
                const std::string& prefix) {
  for (auto& [name, t] : named) {
    if (name.rfind(prefix, 0) != 0) continue;
    const NamedTensor* nt = ckpt.find(name);
    if (!nt) throw Error("checkpoint is missing tensor '" + name + "'");
    if (nt->shape != t->shape)
      throw Error("checkpoint tensor '" + name + "' has shape " +
                  shape_str(nt->shape) + ", model expects " +
                  shape_str(t->shape) + " (preset mismatch?)");
    *t = ckpt.to_tensor(*nt);
  }
}

void load_norm_stats(const Checkpoint& ckpt, std::array<double, 3>& mean,
                     std::array<double, 3>& std_dev) {
  const NamedTensor* m = ckpt.find("norm.mean");
  const NamedTensor* s = ckpt.find("norm.std");
  if (m && s)
    for (int i = 0; i < 3; ++i) {
      mean[(std::size_t)i] = m->data[(std::size_t)i];
      std_dev[(std::size_t)i] = s->data[(std::size_t)i];
    }
}

}  // namespace

CdModelParams build_cd_model(Rng& rng, const ModelDims& dims,
                             const Checkpoint* init) {
  CdModelParams cd;
  cd.dims = dims;
  Rng enc_rng = rng.fork(1);
  ModelParams fresh = ModelParams::init(enc_rng, dims);
  cd.encoder = fresh.encoder;
  if (init) {
    ModelDims ckpt_dims = dims_from_metadata(*init);
    if (!(ckpt_dims == dims))
      throw Error("checkpoint preset does not match the requested model dims");
    load_named(*init, cd.named(), "encoder.");
  }
  int c = dims.feat_channels, mid = std::max(1, c / 2);
  Rng head_rng = rng.fork(2);
  cd.head.conv1 = Tensor::randn(head_rng, {mid, c, 3, 3}, 0.02);
  cd.head.bias1 = Tensor::zeros({mid});
  cd.head.conv2 = Tensor::randn(head_rng, {2, mid, 3, 3}, 0.02);
  cd.head.bias2 = Tensor::zeros({2});
  return cd;
}

Tensor cd_forward(Tape& tape, const Tensor& imgs_t1, const Tensor& imgs_t2,
                  const CdModelParams& params) {
  Tensor x1 = encoder_forward(tape, imgs_t1, params.encoder);
  Tensor x2 = encoder_forward(tape, imgs_t2, params.encoder);
  Tensor fdi = abs(tape, sub(tape, x1, x2));
  Tensor h = relu(tape, add_channel_bias(tape, conv2d(tape, fdi, params.head.conv1, 1, 1),
                                         params.head.bias1));
  Tensor logits = add_channel_bias(tape, conv2d(tape, h, params.head.conv2, 1, 1),
                                   params.head.bias2);
  return upsample_nearest2x(tape, upsample_nearest2x(tape, logits));
}

namespace {

std::string dims_metadata(const ModelDims& d) {
  std::stringstream ss;
  ss << "feat_channels=" << d.feat_channels << "\nproj_hidden=" << d.proj_hidden
     << "\nembed_dim=" << d.embed_dim << "\npred_hidden=" << d.pred_hidden
     << "\n";
  return ss.str();
}

Tensor stats_tensor(const std::array<double, 3>& v) {
  return Tensor::from({3}, {v[0], v[1], v[2]});
}

}  // namespace

Checkpoint checkpoint_from_model(ModelParams& model, std::string metadata) {
  Checkpoint ckpt;
  for (auto& [name, t] : model.named()) ckpt.add(name, *t);
  ckpt.add("norm.mean", stats_tensor(model.norm_mean));
  ckpt.add("norm.std", stats_tensor(model.norm_std));
  ckpt.metadata = "format=sadl-pretrain\n" + dims_metadata(model.dims) + metadata;
  return ckpt;
}

ModelParams model_from_checkpoint(const Checkpoint& ckpt) {
  ModelDims dims = dims_from_metadata(ckpt);
  Rng rng(0);
  ModelParams model = ModelParams::init(rng, dims);
  load_named(ckpt, model.named(), "");
  load_norm_stats(ckpt, model.norm_mean, model.norm_std);
  return model;
}

Checkpoint checkpoint_from_cd_model(CdModelParams& model, std::string metadata) {
  Checkpoint ckpt;
  for (auto& [name, t] : model.named()) ckpt.add(name, *t);
  ckpt.add("norm.mean", stats_tensor(model.norm_mean));
  ckpt.add("norm.std", stats_tensor(model.norm_std));
  ckpt.metadata = "format=sadl-cd\n" + dims_metadata(model.dims) + metadata;
  return ckpt;
}

CdModelParams cd_model_from_checkpoint(const Checkpoint& ckpt) {
  ModelDims dims = dims_from_metadata(ckpt);
  Rng rng(0);
  CdModelParams model = build_cd_model(rng, dims, nullptr);
  load_named(ckpt, model.named(), "");
  load_norm_stats(ckpt, model.norm_mean, model.norm_std);
  return model;
}

}  // namespace sadl
