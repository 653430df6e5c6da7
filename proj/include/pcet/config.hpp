#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcet/net.hpp"

namespace pcet {

struct DataConfig {
  std::size_t sequences = 200;
  std::size_t frames = 10;
  double occlusion = 0.3;
  std::vector<std::string> categories{"car", "pedestrian", "cyclist"};
  std::size_t eval_sequences = 60;  ///< held-out synthetic sequences (different seed stream)
};

struct ModelConfig {
  nn::BackboneConfig backbone = nn::BackboneConfig::desk();
  double search_scale = 4.0;    ///< search region = previous box scaled by this
  double template_scale = 1.25;  ///< template / merged-cloud crops use a slightly enlarged box

  std::size_t merged_half() const { return backbone.template_points / 2; }
  void validate() const;
};

struct StageWeights {
  double lambda1 = 0.1;
  double lambda2 = 0.05;
  double lambda3 = 1.0;

  void validate() const;
};

struct TrainConfig {
  std::size_t iterations[3] = {600, 300, 400};
  std::size_t batch = 8;
  double lr[3] = {1e-3, 1e-3, 5e-4};
  std::size_t iters_per_epoch = 25;
  std::size_t lr_step_epochs = 8;  ///< halve the learning rate every this many epochs
  StageWeights weights;
  bool finetune_backbone = true;  ///< stage 3 also updates the stage-1 modules
  /// Weight of the coarse loss added in stage 3 while the stage-1 modules are
  /// fine-tuned; keeps the coarse head consistent with the drifting features.
  double stage3_coarse_weight = 1.0;
  double center_jitter = 0.1;     ///< reference jitter sigma, fraction of mean(l, w)
  double yaw_jitter = 0.087;      ///< radians

  void validate() const;
};

struct BenchConfig {
  std::size_t frames = 100;
  std::size_t warmup = 10;
};

/// Everything a command needs besides its positional inputs. Loaded from a
/// preset, then overridden by `key = value` lines of a config file.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  BenchConfig bench;

  void validate() const;
  /// Canonical `key = value` dump (sorted keys); feeds the digest.
  std::string to_text() const;
  std::string digest() const;
};

/// "desk" (laptop scale) or "paper" (full-scale architecture and schedule).
RunConfig preset_config(const std::string& name);

/// Applies one override. Unknown keys and malformed values throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// `key = value` per line; `#` starts a comment. A `preset` line, if present,
/// must come first and resets every other value.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

}  // namespace pcet
