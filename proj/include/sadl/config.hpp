#pragma once

#include <cstdint>
#include <string>

#include "sadl/synth.hpp"
#include "sadl/trainer.hpp"

namespace sadl {

// Flat key=value run configuration covering training, augmentation, and
// synthesis. '#' starts a comment; unknown keys are errors. canonical()
// serializes every key in a stable order for run provenance.
struct RunConfig {
  TrainConfig train;
  SynthConfig synth;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text, const std::string& origin);
  std::string canonical() const;
  std::uint64_t hash() const;  // FNV-1a over the canonical form
};

}  // namespace sadl
