// Command-line driver: data synthesis, pre-training, fine-tuning,
// evaluation, self-similarity visualization, and gradient checking.
// Exit codes: 0 success, 1 usage/config error, 2 runtime/data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "sadl/config.hpp"
#include "sadl/gradcheck.hpp"
#include "sadl/netpbm.hpp"
#include "sadl/parallel.hpp"

namespace fs = std::filesystem;
using namespace sadl;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// Canonical config echo next to a run's primary output.
void echo_config(const RunConfig& cfg, const std::string& primary_output) {
  write_text(primary_output + ".config", cfg.canonical());
}

std::string metadata_for(const RunConfig& cfg, int epoch) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "epoch=%d\nseed=%llu\nconfig_hash=%016llx\n",
                epoch, static_cast<unsigned long long>(cfg.train.seed),
                static_cast<unsigned long long>(cfg.hash()));
  return std::string(buf) + "preset=" + cfg.train.preset + "\n";
}

int cmd_synth(const std::string& out_dir, int num, int size,
              std::uint64_t seed, bool cd_pairs) {
  RunConfig cfg;
  cfg.synth.size = size;
  cfg.train.seed = seed;
  if (size < 16 || size % 16 != 0) {
    std::cerr << "error: --size must be a positive multiple of 16, got "
              << size << "\n";
    return 1;
  }
  if (num < 1) {
    std::cerr << "error: --num must be >= 1\n";
    return 1;
  }
  fs::create_directories(out_dir);
  Rng rng(seed);
  parallel_for(num, [&](int i) {
    Rng stream = rng.fork(static_cast<std::uint64_t>(i));
    if (cd_pairs) {
      CDPair pair = synth_cd_pair(stream, cfg.synth);
      write_ppm(pair.image_t1, out_dir + "/" + cd_t1_name(i));
      write_ppm(pair.image_t2, out_dir + "/" + cd_t2_name(i));
      write_pgm(pair.change_mask, out_dir + "/" + cd_change_name(i));
    } else {
      auto [img, mask] = synth_scene(stream, cfg.synth);
      write_ppm(img, out_dir + "/" + scene_image_name(i));
      write_pgm(mask, out_dir + "/" + scene_mask_name(i));
    }
  }, cfg.train.threads);
  DatasetManifest manifest = build_manifest(out_dir, {0.8, 0.1, 0.1}, seed);
  write_manifest(manifest, out_dir + "/manifest.tsv");
  echo_config(cfg, out_dir + "/manifest.tsv");
  std::cout << (cd_pairs ? "cd pairs: " : "scenes: ") << num
            << "  manifest records: " << manifest.records.size() << "\n";
  return 0;
}

int cmd_pretrain(const std::string& data_dir, const std::string& config_path,
                 const std::string& out_ckpt, const std::string& log_csv) {
  RunConfig cfg = config_path.empty() ? RunConfig{}
                                      : RunConfig::from_file(config_path);
  DatasetManifest manifest = read_manifest(data_dir + "/manifest.tsv");
  PretrainResult result = pretrain(
      cfg.train, manifest, [&](int epoch, ModelParams& model) {
        Checkpoint ckpt = checkpoint_from_model(model, metadata_for(cfg, epoch));
        checkpoint_save(ckpt, out_ckpt);
      });
  if (cfg.train.epochs == 0) {
    Checkpoint ckpt = checkpoint_from_model(result.model, metadata_for(cfg, -1));
    checkpoint_save(ckpt, out_ckpt);
  }
  write_text(log_csv, result.csv);
  echo_config(cfg, out_ckpt);
  std::cout << "pretrain done: " << result.epoch_mean_total.size()
            << " epochs";
  if (!result.epoch_mean_total.empty())
    std::cout << ", mean total " << result.epoch_mean_total.front() << " -> "
              << result.epoch_mean_total.back();
  std::cout << "\n";
  return 0;
}

int cmd_finetune(const std::string& data_dir, const std::string& init,
                 double frac, const std::string& config_path,
                 const std::string& out_ckpt, const std::string& log_csv) {
  if (!(frac > 0.0) || frac > 1.0) {
    std::cerr << "error: --frac must be in (0, 1]\n";
    return 1;
  }
  RunConfig cfg = config_path.empty() ? RunConfig{}
                                      : RunConfig::from_file(config_path);
  Checkpoint ckpt;
  const Checkpoint* init_ptr = nullptr;
  if (init != "random") {
    ckpt = checkpoint_load(init);
    init_ptr = &ckpt;
  }
  DatasetManifest manifest = read_manifest(data_dir + "/manifest.tsv");
  FinetuneResult result = finetune_cd(cfg.train, manifest, init_ptr, frac);
  Checkpoint best = checkpoint_from_cd_model(
      result.best_model, metadata_for(cfg, result.best_epoch));
  checkpoint_save(best, out_ckpt);
  write_text(log_csv, result.csv);
  echo_config(cfg, out_ckpt);
  std::printf("best epoch %d  val f1 %.4f  test f1 %.4f\n", result.best_epoch,
              result.best_val.f1, result.test.f1);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir) {
  Checkpoint ckpt = checkpoint_load(model_path);
  if (metadata_value(ckpt.metadata, "format") != "sadl-cd")
    throw Error("eval needs a fine-tuned CD checkpoint");
  CdModelParams model = cd_model_from_checkpoint(ckpt);
  DatasetManifest manifest = read_manifest(data_dir + "/manifest.tsv");
  CdDataset test = load_cd_split(manifest, "test");
  if (test.pairs.empty()) throw Error("eval: empty test split");
  CDMetrics m = evaluate_cd(model, test, 8);
  std::printf("%.4f %.4f %.4f %.4f\n", m.precision, m.recall, m.f1, m.iou);
  return 0;
}

int cmd_selfsim(const std::string& model_path, const std::string& image_path,
                const std::string& mask_path, const std::string& point,
                const std::string& out_path) {
  Checkpoint ckpt = checkpoint_load(model_path);
  EncoderParams encoder;
  std::array<double, 3> mean{}, std_dev{};
  if (metadata_value(ckpt.metadata, "format") == "sadl-cd") {
    CdModelParams m = cd_model_from_checkpoint(ckpt);
    encoder = m.encoder;
    mean = m.norm_mean;
    std_dev = m.norm_std;
  } else {
    ModelParams m = model_from_checkpoint(ckpt);
    encoder = m.encoder;
    mean = m.norm_mean;
    std_dev = m.norm_std;
  }
  ImageRGB img = read_ppm(image_path);
  if (!mask_path.empty()) (void)read_pgm(mask_path);  // validated, not needed
  auto comma = point.find(',');
  if (comma == std::string::npos)
    throw ConfigError("--point must be r,c");
  int pr = std::stoi(point.substr(0, comma));
  int pc = std::stoi(point.substr(comma + 1));

  Tape tape;
  Tensor feats = encoder_forward(
      tape, images_to_tensor({&img}, mean, std_dev), encoder);
  Tensor chw = slice_first(tape, feats, 0);
  const int ds = EncoderParams::kDownscale;
  Grid sm = self_similarity_map(chw, pr / ds, pc / ds);
  write_pgm_gray(sm, out_path);
  std::cout << "self-similarity map " << sm.rows() << "x" << sm.cols()
            << " -> " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic-aware dense pretraining for change detection"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic scenes or CD pairs");
  std::string synth_out;
  int synth_num = 16, synth_size = 64;
  std::uint64_t synth_seed = 0;
  bool synth_cd = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--num", synth_num, "number of samples");
  synth->add_option("--size", synth_size, "scene size (multiple of 16)");
  synth->add_option("--seed", synth_seed, "rng seed");
  synth->add_option("--cd-pairs", synth_cd, "write bitemporal CD pairs");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "run SaDL pre-training");
  std::string pre_data, pre_config, pre_out, pre_log;
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--config", pre_config, "key=value config file");
  pre->add_option("--out", pre_out, "checkpoint path")->required();
  pre->add_option("--log", pre_log, "CSV log path")->required();

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune the CD model");
  std::string ft_data, ft_init = "random", ft_config, ft_out, ft_log;
  double ft_frac = 1.0;
  ft->add_option("--data", ft_data, "CD dataset directory")->required();
  ft->add_option("--init", ft_init, "pretrain checkpoint or 'random'");
  ft->add_option("--frac", ft_frac, "train-split fraction in (0,1]");
  ft->add_option("--config", ft_config, "key=value config file");
  ft->add_option("--out", ft_out, "best checkpoint path")->required();
  ft->add_option("--log", ft_log, "CSV metric log path")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a CD checkpoint on the test split");
  std::string ev_model, ev_data;
  ev->add_option("--model", ev_model, "CD checkpoint")->required();
  ev->add_option("--data", ev_data, "CD dataset directory")->required();

  // selfsim
  auto* ss = app.add_subcommand("selfsim", "write a self-similarity heat map");
  std::string ss_model, ss_image, ss_mask, ss_point, ss_out;
  ss->add_option("--model", ss_model, "checkpoint")->required();
  ss->add_option("--image", ss_image, "input PPM")->required();
  ss->add_option("--mask", ss_mask, "input PGM (validated only)");
  ss->add_option("--point", ss_point, "query point r,c in image pixels")->required();
  ss->add_option("--out", ss_out, "output PGM")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  std::uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_num, synth_size, synth_seed, synth_cd);
    if (pre->parsed()) return cmd_pretrain(pre_data, pre_config, pre_out, pre_log);
    if (ft->parsed())
      return cmd_finetune(ft_data, ft_init, ft_frac, ft_config, ft_out, ft_log);
    if (ev->parsed()) return cmd_eval(ev_model, ev_data);
    if (ss->parsed())
      return cmd_selfsim(ss_model, ss_image, ss_mask, ss_point, ss_out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

namespace {

// Builds a tiny desk-preset batch, flattens all parameters, and compares
// tape gradients of the total loss against central finite differences.
int cmd_gradcheck(std::uint64_t seed) {
  RunConfig cfg;
  cfg.synth.size = 16;
  cfg.train.n_points = 4;

  Rng rng(seed);
  std::vector<ImageRGB> images;
  std::vector<Mask> masks;
  for (int i = 0; i < 2; ++i) {
    Rng stream = rng.fork(static_cast<std::uint64_t>(i));
    auto [img, mask] = synth_scene(stream, cfg.synth);
    images.push_back(img);
    masks.push_back(mask);
  }
  Rng init_rng = rng.fork(100);
  ModelParams model = ModelParams::init(init_rng, ModelDims::desk());

  std::vector<const ImageRGB*> img_ptrs{&images[0], &images[1]};
  std::vector<const Mask*> mask_ptrs{&masks[0], &masks[1]};
  Rng batch_rng = rng.fork(200);
  PreparedBatch batch =
      prepare_pretrain_batch(img_ptrs, mask_ptrs, batch_rng, cfg.train);
  std::vector<PreparedSample> samples(2);
  for (int i = 0; i < 2; ++i) {
    samples[(std::size_t)i].triplet = &batch.triplets[(std::size_t)i];
    samples[(std::size_t)i].points = batch.points[(std::size_t)i];
  }

  GradCheckReport report =
      check_model_gradients(model, samples, 1e-5, 1e-3, 200, mix_seed(seed, 777));
  std::printf("checked %d coordinates (%d skipped at kinks)\n", report.checked,
              report.skipped);
  std::printf("max rel err %.3e  mean rel err %.3e\n", report.max_rel,
              report.mean_rel);
  if (report.max_rel > 1e-4) {
    std::cerr << "FAIL: max relative error above 1e-4\n";
    return 2;
  }
  std::cout << "OK\n";
  return 0;
}

}  // namespace
