#pragma once

#include <array>
#include <string>
#include <vector>

namespace sadl {

// One dataset entry. Scene datasets use (image, mask); change-detection
// datasets add a second image (image2 = t2, mask = change mask).
struct ManifestRecord {
  std::string image;
  std::string image2;  // empty for scene datasets
  std::string mask;
  std::string split;   // train | val | test
  bool is_pair() const { return !image2.empty(); }
};

struct DatasetManifest {
  std::string root;  // directory all record paths are relative to
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& name) const;
  std::string resolve(const std::string& rel) const { return root + "/" + rel; }
};

// Enumerates img_/msk_ scene pairs (or t1_/t2_/chg_ CD triples) in dir,
// shuffles with the seed, and assigns splits by the given (train, val,
// test) fractions, which must sum to 1.
DatasetManifest build_manifest(const std::string& dir,
                               const std::array<double, 3>& fractions,
                               std::uint64_t seed);

// Tab-separated text: image[\timage2]\tmask\tsplit, one record per line.
void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// File-name scheme shared by the synthesizer CLI and manifest scanner.
std::string scene_image_name(int index);
std::string scene_mask_name(int index);
std::string cd_t1_name(int index);
std::string cd_t2_name(int index);
std::string cd_change_name(int index);

}  // namespace sadl
