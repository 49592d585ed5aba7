#include "sadl/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sadl/errors.hpp"
#include "sadl/rng.hpp"

namespace fs = std::filesystem;

namespace sadl {

namespace {
std::string numbered(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%05d.%s", prefix, index, ext);
  return buf;
}
}  // namespace

std::string scene_image_name(int i) { return numbered("img_", i, "ppm"); }
std::string scene_mask_name(int i) { return numbered("msk_", i, "pgm"); }
std::string cd_t1_name(int i) { return numbered("t1_", i, "ppm"); }
std::string cd_t2_name(int i) { return numbered("t2_", i, "ppm"); }
std::string cd_change_name(int i) { return numbered("chg_", i, "pgm"); }

std::vector<ManifestRecord> DatasetManifest::split(
    const std::string& name) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(r);
  return out;
}

DatasetManifest build_manifest(const std::string& dir,
                               const std::array<double, 3>& fractions,
                               std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0 ||
      std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");

  DatasetManifest m;
  m.root = dir;
  // scene pairs take priority; a directory holds one dataset kind
  std::vector<std::string> images;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    if (name.rfind("img_", 0) == 0 && name.size() > 4 &&
        e.path().extension() == ".ppm")
      images.push_back(name);
  }
  if (!images.empty()) {
    std::sort(images.begin(), images.end());
    for (const auto& img : images) {
      std::string mask = "msk_" + img.substr(4, img.size() - 8) + ".pgm";
      if (!fs::exists(fs::path(dir) / mask))
        throw IoError("missing mask file " + mask + " for " + img);
      m.records.push_back(ManifestRecord{img, "", mask, ""});
    }
  } else {
    std::vector<std::string> t1s;
    for (const auto& e : fs::directory_iterator(dir)) {
      std::string name = e.path().filename().string();
      if (name.rfind("t1_", 0) == 0 && e.path().extension() == ".ppm")
        t1s.push_back(name);
    }
    std::sort(t1s.begin(), t1s.end());
    if (t1s.empty()) throw IoError("no img_/t1_ files found in " + dir);
    for (const auto& t1 : t1s) {
      std::string id = t1.substr(3, t1.size() - 7);
      std::string t2 = "t2_" + id + ".ppm";
      std::string chg = "chg_" + id + ".pgm";
      if (!fs::exists(fs::path(dir) / t2) || !fs::exists(fs::path(dir) / chg))
        throw IoError("missing t2/chg file for " + t1);
      m.records.push_back(ManifestRecord{t1, t2, chg, ""});
    }
  }

  // seed-deterministic Fisher-Yates shuffle
  Rng rng(seed);
  for (int i = static_cast<int>(m.records.size()) - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(m.records[(std::size_t)i], m.records[(std::size_t)j]);
  }

  const long n = static_cast<long>(m.records.size());
  long c1 = std::lround(fractions[0] * n);
  long c2 = std::lround((fractions[0] + fractions[1]) * n);
  for (long i = 0; i < n; ++i)
    m.records[(std::size_t)i].split = i < c1 ? "train" : (i < c2 ? "val" : "test");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& r : m.records) {
    if (r.is_pair())
      out << r.image << '\t' << r.image2 << '\t' << r.mask << '\t' << r.split
          << '\n';
    else
      out << r.image << '\t' << r.mask << '\t' << r.split << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    ManifestRecord r;
    if (fields.size() == 3) {
      r.image = fields[0];
      r.mask = fields[1];
      r.split = fields[2];
    } else if (fields.size() == 4) {
      r.image = fields[0];
      r.image2 = fields[1];
      r.mask = fields[2];
      r.split = fields[3];
    } else {
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected 3 or 4 tab-separated fields");
    }
    if (r.split != "train" && r.split != "val" && r.split != "test")
      throw IoError(path + ":" + std::to_string(lineno) + ": bad split tag '" +
                    r.split + "'");
    m.records.push_back(std::move(r));
  }
  for (const auto& r : m.records) {
    if (!fs::exists(m.resolve(r.image)) || !fs::exists(m.resolve(r.mask)) ||
        (r.is_pair() && !fs::exists(m.resolve(r.image2))))
      throw IoError("manifest references missing file: " + r.image);
  }
  return m;
}

}  // namespace sadl
