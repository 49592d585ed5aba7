#include "sadl/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sadl {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad number '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
  }
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto add = [&f](const std::string& key,
                    std::function<void(RunConfig&, const std::string&)> set,
                    std::function<std::string(const RunConfig&)> get) {
      f[key] = Field{std::move(set), std::move(get)};
    };
    auto add_d = [&](const std::string& key, auto ref) {
      add(key,
          [key, ref](RunConfig& c, const std::string& v) {
            ref(c) = parse_double(key, v);
          },
          [ref](const RunConfig& c) {
            return fmt_double(ref(const_cast<RunConfig&>(c)));
          });
    };
    auto add_i = [&](const std::string& key, auto ref) {
      add(key,
          [key, ref](RunConfig& c, const std::string& v) {
            ref(c) = parse_int(key, v);
          },
          [ref](const RunConfig& c) {
            return std::to_string(ref(const_cast<RunConfig&>(c)));
          });
    };

    // training
    add_d("lr0", [](RunConfig& c) -> double& { return c.train.lr0; });
    add_d("momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    add_d("weight_decay",
          [](RunConfig& c) -> double& { return c.train.weight_decay; });
    add_d("poly_power",
          [](RunConfig& c) -> double& { return c.train.poly_power; });
    add_i("epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    add_i("batch", [](RunConfig& c) -> int& { return c.train.batch; });
    add_i("n_points", [](RunConfig& c) -> int& { return c.train.n_points; });
    add_i("retry_limit",
          [](RunConfig& c) -> int& { return c.train.retry_limit; });
    add_i("threads", [](RunConfig& c) -> int& { return c.train.threads; });
    add("seed",
        [](RunConfig& c, const std::string& v) {
          c.train.seed = parse_u64("seed", v);
        },
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    add("preset",
        [](RunConfig& c, const std::string& v) {
          if (v != "desk" && v != "paper")
            throw ConfigError("preset must be 'desk' or 'paper', got '" + v + "'");
          c.train.preset = v;
        },
        [](const RunConfig& c) { return c.train.preset; });

    // color augmentation
    add_d("jitter_prob",
          [](RunConfig& c) -> double& { return c.train.views.color.jitter_prob; });
    add_d("brightness_strength", [](RunConfig& c) -> double& {
      return c.train.views.color.brightness_strength;
    });
    add_d("contrast_strength", [](RunConfig& c) -> double& {
      return c.train.views.color.contrast_strength;
    });
    add_d("saturation_strength", [](RunConfig& c) -> double& {
      return c.train.views.color.saturation_strength;
    });
    add_d("hue_strength", [](RunConfig& c) -> double& {
      return c.train.views.color.hue_strength;
    });
    add_d("blur_prob",
          [](RunConfig& c) -> double& { return c.train.views.color.blur_prob; });
    add_d("blur_sigma_min", [](RunConfig& c) -> double& {
      return c.train.views.color.blur_sigma_min;
    });
    add_d("blur_sigma_max", [](RunConfig& c) -> double& {
      return c.train.views.color.blur_sigma_max;
    });

    // geometric augmentation
    add_d("crop_scale_min",
          [](RunConfig& c) -> double& { return c.train.views.geom.scale_min; });
    add_d("crop_scale_max",
          [](RunConfig& c) -> double& { return c.train.views.geom.scale_max; });
    add_d("crop_ratio_min",
          [](RunConfig& c) -> double& { return c.train.views.geom.ratio_min; });
    add_d("crop_ratio_max",
          [](RunConfig& c) -> double& { return c.train.views.geom.ratio_max; });
    add_d("hflip_prob",
          [](RunConfig& c) -> double& { return c.train.views.geom.hflip_prob; });
    add_d("vflip_prob",
          [](RunConfig& c) -> double& { return c.train.views.geom.vflip_prob; });

    // background-swap compositing
    add_i("erode_radius",
          [](RunConfig& c) -> int& { return c.train.views.erode_radius; });
    add_d("blend_blur_sigma",
          [](RunConfig& c) -> double& { return c.train.views.blend_blur_sigma; });
    add_i("blend_blur_radius",
          [](RunConfig& c) -> int& { return c.train.views.blend_blur_radius; });

    // synthesis
    add_i("scene_size", [](RunConfig& c) -> int& { return c.synth.size; });
    add_i("min_buildings",
          [](RunConfig& c) -> int& { return c.synth.min_buildings; });
    add_i("max_buildings",
          [](RunConfig& c) -> int& { return c.synth.max_buildings; });
    add_i("min_building_size",
          [](RunConfig& c) -> int& { return c.synth.min_building_size; });
    add_i("noise_cell", [](RunConfig& c) -> int& { return c.synth.noise_cell; });
    add_d("noise_amplitude",
          [](RunConfig& c) -> double& { return c.synth.noise_amplitude; });
    add_d("cd_remove_prob",
          [](RunConfig& c) -> double& { return c.synth.cd_remove_prob; });
    add_i("cd_max_added",
          [](RunConfig& c) -> int& { return c.synth.cd_max_added; });
    return f;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text,
                               const std::string& origin) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = fields().find(key);
    if (it == fields().end())
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": unknown config key '" + key + "'");
    it->second.set(cfg, value);
  }
  if (cfg.train.epochs < 0 || cfg.train.batch < 1 || cfg.train.n_points < 1 ||
      cfg.train.retry_limit < 0)
    throw ConfigError(origin + ": invalid training sizes");
  if (!(cfg.train.lr0 > 0) || !(cfg.train.momentum >= 0) ||
      !(cfg.train.weight_decay >= 0) || !(cfg.train.poly_power > 0))
    throw ConfigError(origin + ": rates must be positive");
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path);
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [key, field] : fields())
    out += key + "=" + field.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : canonical()) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace sadl
