#pragma once

// Plain-text configuration: `key = value` lines, `#` starts a comment.
// Every key is declared below with its default; unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dgtr/data_synth.hpp"
#include "dgtr/model.hpp"
#include "dgtr/objectives.hpp"

namespace dgtr {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"model.seq_len", "16", "frames per input window (T)"},
      {"model.input_dim", "2048", "static feature width"},
      {"gma.layers", "2", "attention encoder layers"},
      {"gma.heads", "8", "attention heads"},
      {"gma.dim", "512", "attention encoder width"},
      {"gma.ffn_dim", "1024", "attention feed-forward width"},
      {"ldr.window", "3", "frames around the target seen by the local branch"},
      {"ldr.layers", "1", "graph-convolution blocks"},
      {"ldr.hidden", "512", "local branch width"},
      {"ldr.kernel", "3", "temporal convolution kernel size"},
      {"ldr.ffn_dim", "1024", "local feed-forward width"},
      {"ldr.mgcn_residual", "false", "add a residual around the graph convolution"},
      {"regressor.hidden", "1024", "regressor hidden units"},
      {"regressor.iterations", "3", "refinement iterations"},
      {"loss.w_shape", "0.06", "shape loss weight"},
      {"loss.w_pose", "60", "pose (rotation matrix) loss weight"},
      {"loss.w_3d", "300", "3D joint loss weight"},
      {"loss.w_2d", "300", "2D reprojection loss weight"},
      {"loss.w_vel3d", "300", "3D joint velocity loss weight"},
      {"loss.w_vel2d", "300", "2D joint velocity loss weight"},
      {"train.use_gma", "true", "enable the global attention branch"},
      {"train.use_ldr", "true", "enable the local refine branch"},
      {"train.batch", "8", "consecutive windows per step"},
      {"train.epochs", "5", "passes over the training windows"},
      {"train.max_steps", "0", "total optimizer steps; 0 derives it from epochs"},
      {"train.base_lr", "1e-4", "peak learning rate"},
      {"train.warmup_steps", "10", "linear warm-up steps"},
      {"train.seed", "0", "initialisation and shuffling seed"},
      {"train.precision", "32", "arithmetic width for training, 32 or 64"},
      {"train.checkpoint", "dgtr.ckpt", "checkpoint output path"},
      {"train.log", "train_log.csv", "per-step loss log path"},
      {"train.metrics_log", "train_metrics.csv", "per-epoch metric log path"},
      {"data.dir", "", "directory of .dgtr sequence files; empty uses $DGTR_DATA_DIR or generates"},
      {"data.sequences", "4", "generated training sequences"},
      {"data.frames", "32", "frames per generated sequence"},
      {"data.seed", "1", "generation seed"},
      {"data.noise", "0.01", "feature noise standard deviation"},
      {"body.file", "", "synthetic body file; empty uses the shipped data"},
      {"body.embedding", "", "feature embedding file; empty uses the shipped data"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static Config parse(const std::string& text, const std::string& source = "config") {
    Config c;
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      try {
        c.set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& s = str(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError(key + ": expected a nonnegative integer, got '" + s + "'");
    }
    return v;
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  double real(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + s + "'");
  }

  /// Every key in declaration order, one `key = value` per line.
  std::string echo() const {
    std::ostringstream os;
    for (const auto& k : config_keys()) os << k.name << " = " << values_.at(k.name) << '\n';
    return os.str();
  }

  static std::string help() {
    std::ostringstream os;
    for (const auto& k : config_keys()) {
      os << "  " << k.name << " = " << (*k.default_value ? k.default_value : "\"\"") << "    # " << k.help << '\n';
    }
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.seq_len = c.size("model.seq_len");
  m.input_dim = c.size("model.input_dim");
  m.use_gma = c.flag("train.use_gma");
  m.use_ldr = c.flag("train.use_ldr");
  m.gma.layers = c.size("gma.layers");
  m.gma.heads = c.size("gma.heads");
  m.gma.dim = c.size("gma.dim");
  m.gma.ffn_dim = c.size("gma.ffn_dim");
  m.ldr.window = c.size("ldr.window");
  m.ldr.layers = c.size("ldr.layers");
  m.ldr.hidden = c.size("ldr.hidden");
  m.ldr.kernel = c.size("ldr.kernel");
  m.ldr.ffn_dim = c.size("ldr.ffn_dim");
  m.ldr.mgcn_residual = c.flag("ldr.mgcn_residual");
  m.regressor.hidden = c.size("regressor.hidden");
  m.regressor.iterations = c.size("regressor.iterations");
  m.sync();
  m.validate();
  return m;
}

inline LossWeights loss_weights(const Config& c) {
  LossWeights w;
  w.shape = c.real("loss.w_shape");
  w.pose = c.real("loss.w_pose");
  w.joints3d = c.real("loss.w_3d");
  w.joints2d = c.real("loss.w_2d");
  w.vel3d = c.real("loss.w_vel3d");
  w.vel2d = c.real("loss.w_vel2d");
  w.validate();
  return w;
}

inline SyntheticDatasetSpec dataset_spec(const Config& c) {
  SyntheticDatasetSpec s;
  s.num_sequences = c.size("data.sequences");
  s.seq_len = c.size("data.frames");
  s.seed = c.u64("data.seed");
  s.noise = c.real("data.noise");
  s.validate();
  return s;
}

}  // namespace dgtr
