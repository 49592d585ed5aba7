#include "sadl/synth.hpp"

#include <algorithm>
#include <cmath>

namespace sadl {

namespace {

void check_size(const SynthConfig& cfg) {
  if (cfg.size < 16 || cfg.size % 16 != 0)
    throw ConfigError("scene size must be a positive multiple of 16, got " +
                      std::to_string(cfg.size));
}

Building sample_building(Rng& rng, const SynthConfig& cfg) {
  Building b;
  int lo = cfg.min_building_size, hi = cfg.max_building_size();
  b.w = lo + rng.uniform_int(hi - lo + 1);
  b.h = lo + rng.uniform_int(hi - lo + 1);
  b.u = rng.uniform_int(cfg.size);
  b.v = rng.uniform_int(cfg.size);
  for (auto& c : b.fill) c = rng.uniform();
  for (auto& c : b.border) c = rng.uniform();
  return b;
}

}  // namespace

SceneSpec sample_scene_spec(Rng& rng, const SynthConfig& cfg) {
  check_size(cfg);
  SceneSpec spec;
  spec.size = cfg.size;
  int cells = cfg.size / cfg.noise_cell + 1;
  for (int c = 0; c < 3; ++c) {
    spec.base[(std::size_t)c] = rng.uniform(0.15, 0.85);
    spec.coarse[(std::size_t)c] = Grid::Zero(cells, cells);
    for (int r = 0; r < cells; ++r)
      for (int k = 0; k < cells; ++k)
        spec.coarse[(std::size_t)c](r, k) =
            rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
  }
  int count = cfg.min_buildings +
              rng.uniform_int(cfg.max_buildings - cfg.min_buildings + 1);
  for (int i = 0; i < count; ++i) spec.buildings.push_back(sample_building(rng, cfg));
  return spec;
}

ImageRGB render_scene(const SceneSpec& spec) {
  const int n = spec.size;
  ImageRGB img(n, n);
  const int cells = static_cast<int>(spec.coarse[0].rows());
  const double cell = static_cast<double>(n) / (cells - 1);
  for (int c = 0; c < 3; ++c) {
    const Grid& g = spec.coarse[(std::size_t)c];
    for (int r = 0; r < n; ++r) {
      double fy = r / cell;
      int y0 = std::min(static_cast<int>(fy), cells - 2);
      double wy = fy - y0;
      for (int col = 0; col < n; ++col) {
        double fx = col / cell;
        int x0 = std::min(static_cast<int>(fx), cells - 2);
        double wx = fx - x0;
        double noise = (1 - wy) * ((1 - wx) * g(y0, x0) + wx * g(y0, x0 + 1)) +
                       wy * ((1 - wx) * g(y0 + 1, x0) + wx * g(y0 + 1, x0 + 1));
        img.at(c, r, col) = spec.base[(std::size_t)c] + noise;
      }
    }
  }
  for (const Building& b : spec.buildings) {
    int r0 = std::max(0, b.v), r1 = std::min(n, b.v + b.h);
    int c0 = std::max(0, b.u), c1 = std::min(n, b.u + b.w);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        bool edge = r == r0 || r == r1 - 1 || c == c0 || c == c1 - 1;
        for (int k = 0; k < 3; ++k)
          img.at(k, r, c) = edge ? b.border[(std::size_t)k] : b.fill[(std::size_t)k];
      }
  }
  img.clamp01();
  return img;
}

Mask scene_mask(const SceneSpec& spec) {
  const int n = spec.size;
  Mask mask(n, n);
  for (const Building& b : spec.buildings) {
    int r0 = std::max(0, b.v), r1 = std::min(n, b.v + b.h);
    int c0 = std::max(0, b.u), c1 = std::min(n, b.u + b.w);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) mask.at(r, c) = 1;
  }
  return mask;
}

std::pair<ImageRGB, Mask> synth_scene(Rng& rng, const SynthConfig& cfg) {
  SceneSpec spec = sample_scene_spec(rng, cfg);
  return {render_scene(spec), scene_mask(spec)};
}

CDPair synth_cd_pair(Rng& rng, const SynthConfig& cfg) {
  SceneSpec t1 = sample_scene_spec(rng, cfg);
  SceneSpec t2 = t1;
  t2.buildings.clear();
  for (const Building& b : t1.buildings)
    if (!rng.bernoulli(cfg.cd_remove_prob)) t2.buildings.push_back(b);
  int added = cfg.cd_max_added > 0 ? rng.uniform_int(cfg.cd_max_added + 1) : 0;
  for (int i = 0; i < added; ++i)
    t2.buildings.push_back(sample_building(rng, cfg));

  ColorAugParams j1 = sample_color_aug(rng, cfg.epoch_jitter);
  ColorAugParams j2 = sample_color_aug(rng, cfg.epoch_jitter);
  CDPair pair;
  pair.image_t1 = apply_color_aug(render_scene(t1), j1);
  pair.image_t2 = apply_color_aug(render_scene(t2), j2);
  Mask m1 = scene_mask(t1), m2 = scene_mask(t2);
  pair.change_mask = Mask(cfg.size, cfg.size);
  for (int r = 0; r < cfg.size; ++r)
    for (int c = 0; c < cfg.size; ++c)
      pair.change_mask.at(r, c) = m1.at(r, c) != m2.at(r, c) ? 1 : 0;
  return pair;
}

}  // namespace sadl
