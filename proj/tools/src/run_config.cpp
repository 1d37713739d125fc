#include "xdg_cli/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xdg/checkpoint.hpp"

namespace xdg::cli {

using json = nlohmann::ordered_json;

namespace {

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

std::uint64_t count(const json& j, const std::string& path) {
  if (!j.is_number_unsigned()) throw ConfigError(path, "expected a nonnegative integer");
  return j.get<std::uint64_t>();
}

std::vector<double> numbers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::string text(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

template <class F>
auto rethrow_as_config(const std::string& path, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

DatasetSpec parse_dataset(const json& j) {
  require_object(j, "dataset");
  DatasetSpec d;
  for (const auto& [key, v] : j.items()) {
    const std::string path = "dataset." + key;
    if (key == "name") d.name = text(v, path);
    else if (key == "seed") d.seed = count(v, path);
    else if (key == "digits") d.digits = count(v, path);
    else if (key == "domain_probs") d.domain_probs = numbers(v, path);
    else if (key == "label_noise") d.label_noise = number(v, path);
    else if (key == "angles") d.angles = numbers(v, path);
    else if (key == "mnist_dir") d.mnist_dir = text(v, path);
    else if (key == "test_env") {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      d.test_env = v.get<int>();
    } else if (key == "glyphs") {
      require_object(v, path);
      for (const auto& [gk, gv] : v.items()) {
        const std::string gpath = path + "." + gk;
        if (gk == "classes") d.glyphs.classes = static_cast<int>(count(gv, gpath));
        else if (gk == "per_class") d.glyphs.per_class = count(gv, gpath);
        else if (gk == "domains") d.glyphs.domains = static_cast<int>(count(gv, gpath));
        else if (gk == "channels") d.glyphs.channels = count(gv, gpath);
        else if (gk == "side") d.glyphs.side = count(gv, gpath);
        else throw ConfigError(gpath, "unknown key");
      }
    } else {
      throw ConfigError(path, "unknown key");
    }
  }
  d.validate();
  return d;
}

json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["name"] = d.name;
  j["seed"] = d.seed;
  j["digits"] = d.digits;
  j["domain_probs"] = d.domain_probs;
  j["label_noise"] = d.label_noise;
  j["angles"] = d.angles;
  j["glyphs"] = {{"classes", d.glyphs.classes},
                 {"per_class", d.glyphs.per_class},
                 {"domains", d.glyphs.domains},
                 {"channels", d.glyphs.channels},
                 {"side", d.glyphs.side}};
  if (!d.mnist_dir.empty()) j["mnist_dir"] = d.mnist_dir.string();
  j["test_env"] = d.test_env;
  return j;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

RunConfig parse_run_config(const std::string& body, const std::optional<std::string>& algorithm) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  require_object(j, "config");
  static const char* known[] = {"algorithm", "dataset", "hparams", "split_seed", "trace", "sweep", "export"};
  for (const auto& [key, v] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ConfigError(key, "unknown key");
    }
  }
  RunConfig cfg;
  std::string algo = algorithm ? *algorithm : (j.contains("algorithm") ? text(j["algorithm"], "algorithm") : "erm");
  cfg.algorithm = rethrow_as_config("algorithm", [&] { return parse_algorithm(algo); });
  cfg.hparams = default_hyperparams(cfg.algorithm);
  if (j.contains("dataset")) cfg.dataset = parse_dataset(j["dataset"]);
  if (j.contains("hparams")) {
    require_object(j["hparams"], "hparams");
    cfg.hparams = hyperparams_from_json(j["hparams"].dump(), cfg.hparams, "hparams");
  }
  if (j.contains("split_seed")) cfg.split_seed = count(j["split_seed"], "split_seed");
  if (j.contains("trace")) {
    if (!j["trace"].is_boolean()) throw ConfigError("trace", "expected a boolean");
    cfg.trace = j["trace"].get<bool>();
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    require_object(s, "sweep");
    for (const auto& [key, v] : s.items()) {
      const std::string path = "sweep." + key;
      if (key == "table") {
        const auto name = text(v, path);
        cfg.sweep.table = rethrow_as_config(path, [&] { return parse_search_table(name); });
      } else if (key == "n_trials") cfg.sweep.n_trials = count(v, path);
      else if (key == "split_seeds") cfg.sweep.split_seeds = count(v, path);
      else if (key == "seed") cfg.sweep.seed = count(v, path);
      else throw ConfigError(path, "unknown key");
    }
  }
  if (j.contains("export")) {
    const json& e = j["export"];
    require_object(e, "export");
    for (const auto& [key, v] : e.items()) {
      const std::string path = "export." + key;
      if (key == "cam_steps") {
        if (!v.is_array()) throw ConfigError(path, "expected an array of steps");
        for (std::size_t i = 0; i < v.size(); ++i) {
          cfg.exports.cam_steps.push_back(count(v[i], path + "[" + std::to_string(i) + "]"));
        }
      } else if (key == "cam_images") cfg.exports.cam_images = count(v, path);
      else throw ConfigError(path, "unknown key");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::optional<std::string>& algorithm) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), algorithm);
}

std::string run_config_json(const RunConfig& cfg) {
  json j;
  j["algorithm"] = to_string(cfg.algorithm);
  j["dataset"] = dataset_to_json(cfg.dataset);
  j["hparams"] = json::parse(hyperparams_to_json(cfg.hparams));
  j["split_seed"] = cfg.split_seed;
  j["trace"] = cfg.trace;
  j["sweep"] = {{"table", to_string(cfg.sweep.table)},
                {"n_trials", cfg.sweep.n_trials},
                {"split_seeds", cfg.sweep.split_seeds},
                {"seed", cfg.sweep.seed}};
  j["export"] = {{"cam_steps", cfg.exports.cam_steps}, {"cam_images", cfg.exports.cam_images}};
  return j.dump(2);
}

std::string dataset_json(const DatasetSpec& spec) { return dataset_to_json(spec).dump(); }

std::filesystem::path data_root() {
  if (const char* env = std::getenv("XDG_DATA_DIR"); env && *env) return env;
  return "xdg-data";
}

std::filesystem::path dataset_cache_path(const DatasetSpec& spec) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(dataset_json(spec))));
  return data_root() / (spec.name + "-" + hex + ".xdgc");
}

MultiDomainDataset load_or_build_dataset(DatasetSpec spec) {
  if (spec.mnist_dir.empty() && spec.name != "glyphs" && mnist_available(data_root() / "mnist")) {
    spec.mnist_dir = data_root() / "mnist";
  }
  const auto path = dataset_cache_path(spec);
  if (std::filesystem::exists(path)) return decode_dataset(load_arrays(path));
  MultiDomainDataset ds = build_dataset(spec);
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  save_arrays(tmp, encode_dataset(ds));
  std::filesystem::rename(tmp, path);
  return ds;
}

}  // namespace xdg::cli
