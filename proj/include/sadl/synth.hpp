#pragma once

#include <utility>
#include <vector>

#include "sadl/image.hpp"
#include "sadl/image_ops.hpp"
#include "sadl/rng.hpp"

namespace sadl {

struct SynthConfig {
  int size = 64;            // square scenes, divisible by 16
  int min_buildings = 1;
  int max_buildings = 6;
  int min_building_size = 6;  // max is max(min, size / 3)
  int noise_cell = 8;         // coarse value-noise grid spacing
  double noise_amplitude = 0.15;
  // bitemporal pair derivation
  double cd_remove_prob = 0.3;
  int cd_max_added = 2;
  // Per-epoch appearance jitter for CD pairs. Milder than the pre-training
  // augmentation: the pairs must stay learnable by the small CD head at
  // desk scale while still exercising illumination invariance.
  ColorAugConfig epoch_jitter{
      .jitter_prob = 0.8,
      .brightness_strength = 0.15,
      .contrast_strength = 0.15,
      .saturation_strength = 0.15,
      .hue_strength = 0.05,
      .blur_prob = 0.3,
      .blur_sigma_min = 0.1,
      .blur_sigma_max = 1.0,
  };

  int max_building_size() const {
    return std::max(min_building_size, size / 3);
  }
};

struct Building {
  int u = 0, v = 0, w = 0, h = 0;  // top-left col/row and size, pre-clipping
  std::array<double, 3> fill{};
  std::array<double, 3> border{};
};

// Terrain (low-frequency value noise) plus axis-aligned buildings.
struct SceneSpec {
  int size = 0;
  std::array<double, 3> base{};
  std::array<Grid, 3> coarse;  // noise offsets at coarse grid points
  std::vector<Building> buildings;
};

struct CDPair {
  ImageRGB image_t1, image_t2;
  Mask change_mask;  // 1 where a building was added or removed
};

SceneSpec sample_scene_spec(Rng& rng, const SynthConfig& cfg);
SceneSpec sample_buildings_only(Rng& rng, const SynthConfig& cfg,
                                const SceneSpec& terrain_of);

ImageRGB render_scene(const SceneSpec& spec);
Mask scene_mask(const SceneSpec& spec);

// Scene plus its building mask; deterministic in (seed, config).
std::pair<ImageRGB, Mask> synth_scene(Rng& rng, const SynthConfig& cfg);

// Draws a scene, removes each building with cd_remove_prob, adds up to
// cd_max_added new ones, renders both epochs with independent color jitter
// over the same terrain. change_mask is the xor of the building masks.
CDPair synth_cd_pair(Rng& rng, const SynthConfig& cfg);

}  // namespace sadl
