#include "pcet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pcet/errors.hpp"
#include "pcet/provenance.hpp"

namespace pcet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string fmt(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get>
Field size_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) {
            get(c) = static_cast<std::size_t>(parse_u64(k, v));
          },
          [get](const RunConfig& c) { return std::to_string(get(c)); }};
}

template <class Get>
Field double_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_double(k, v); },
          [get](const RunConfig& c) { return fmt(get(c)); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    m["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    m["data.sequences"] = size_field([](auto& c) -> auto& { return c.data.sequences; });
    m["data.frames"] = size_field([](auto& c) -> auto& { return c.data.frames; });
    m["data.eval_sequences"] = size_field([](auto& c) -> auto& { return c.data.eval_sequences; });
    m["data.occlusion"] = double_field([](auto& c) -> auto& { return c.data.occlusion; });
    m["data.categories"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.data.categories = parse_list(v); },
        [](const RunConfig& c) { return join(c.data.categories); }};
    m["model.backbone"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                             if (v == "desk") c.model.backbone = nn::BackboneConfig::desk();
                             else if (v == "paper") c.model.backbone = nn::BackboneConfig::paper();
                             else throw ConfigError("config: " + k + " must be desk or paper");
                           },
                           [](const RunConfig& c) {
                             return c.model.backbone.stages.size() == 3 ? std::string("paper") : std::string("desk");
                           }};
    m["model.search_scale"] = double_field([](auto& c) -> auto& { return c.model.search_scale; });
    m["model.template_scale"] = double_field([](auto& c) -> auto& { return c.model.template_scale; });
    for (int s = 0; s < 3; ++s) {
      const std::string n = std::to_string(s + 1);
      m["train.stage" + n + ".iterations"] =
          size_field([s](auto& c) -> auto& { return c.train.iterations[s]; });
      m["train.stage" + n + ".lr"] = double_field([s](auto& c) -> auto& { return c.train.lr[s]; });
    }
    m["train.batch"] = size_field([](auto& c) -> auto& { return c.train.batch; });
    m["train.iters_per_epoch"] = size_field([](auto& c) -> auto& { return c.train.iters_per_epoch; });
    m["train.lr_step_epochs"] = size_field([](auto& c) -> auto& { return c.train.lr_step_epochs; });
    m["train.lambda1"] = double_field([](auto& c) -> auto& { return c.train.weights.lambda1; });
    m["train.lambda2"] = double_field([](auto& c) -> auto& { return c.train.weights.lambda2; });
    m["train.lambda3"] = double_field([](auto& c) -> auto& { return c.train.weights.lambda3; });
    m["train.stage3_coarse_weight"] =
        double_field([](auto& c) -> auto& { return c.train.stage3_coarse_weight; });
    m["train.center_jitter"] = double_field([](auto& c) -> auto& { return c.train.center_jitter; });
    m["train.yaw_jitter"] = double_field([](auto& c) -> auto& { return c.train.yaw_jitter; });
    m["train.finetune_backbone"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.train.finetune_backbone = parse_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.train.finetune_backbone ? "true" : "false"); }};
    m["bench.frames"] = size_field([](auto& c) -> auto& { return c.bench.frames; });
    m["bench.warmup"] = size_field([](auto& c) -> auto& { return c.bench.warmup; });
    return m;
  }();
  return f;
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  if (!(search_scale >= 1.0)) throw ConfigError("model.search_scale must be >= 1");
  if (!(template_scale >= 1.0)) throw ConfigError("model.template_scale must be >= 1");
  if (backbone.template_points % 2 != 0) throw ConfigError("backbone template point count must be even");
}

void StageWeights::validate() const {
  if (!(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0)) throw ConfigError("stage weights must be >= 0");
}

void TrainConfig::validate() const {
  weights.validate();
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (iters_per_epoch == 0 || lr_step_epochs == 0) {
    throw ConfigError("train.iters_per_epoch and train.lr_step_epochs must be positive");
  }
  for (double l : lr)
    if (!(l > 0)) throw ConfigError("learning rates must be positive");
  if (!(center_jitter >= 0 && yaw_jitter >= 0)) throw ConfigError("jitter must be >= 0");
  if (!(stage3_coarse_weight >= 0)) throw ConfigError("train.stage3_coarse_weight must be >= 0");
}

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("unknown preset '" + preset + "'");
  model.validate();
  train.validate();
  if (data.categories.empty()) throw ConfigError("data.categories is empty");
  if (data.frames < 2) throw ConfigError("data.frames must be >= 2");
  if (!(data.occlusion >= 0 && data.occlusion < 1)) throw ConfigError("data.occlusion must be in [0, 1)");
}

std::string RunConfig::to_text() const {
  std::string out = "preset = " + preset + "\n";
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::digest() const { return hex64(fnv1a64(to_text())); }

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "paper") {
    c.model.backbone = nn::BackboneConfig::paper();
    // 300 / 100 / 100 epochs at batch 300; lr 1e-3 halved every 50 epochs, 5e-4 in the last stage.
    c.train.batch = 300;
    c.train.iters_per_epoch = 1;
    c.train.iterations[0] = 300;
    c.train.iterations[1] = 100;
    c.train.iterations[2] = 100;
    c.train.lr[0] = 1e-3;
    c.train.lr[1] = 1e-3;
    c.train.lr[2] = 5e-4;
    c.train.lr_step_epochs = 50;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    const std::uint64_t seed = cfg.seed;
    cfg = preset_config(value);
    cfg.seed = seed;
    return;
  }
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(cfg, key, value);
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not found: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
}

}  // namespace pcet
