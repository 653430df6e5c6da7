#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcet/sequence.hpp"

namespace pcet::sim {

/// Synthetic scene parameters. Motion is constant speed along the heading,
/// with a constant yaw rate plus Gaussian noise on both.
struct SceneConfig {
  std::string category = "car";
  Vec3 size_min{3.6, 1.6, 1.4};
  Vec3 size_max{4.6, 1.9, 1.7};
  double speed_min = 0.4;  ///< meters per frame
  double speed_max = 1.0;
  double yaw_rate_std = 0.03;    ///< radians per frame, drawn once per sequence
  double center_noise_std = 0.02;
  double yaw_noise_std = 0.005;
  std::size_t frames = 10;
  std::size_t target_points_min = 60;  ///< surface returns per frame before occlusion
  std::size_t target_points_max = 200;
  double occlusion = 0.3;  ///< fraction of target returns removed, in [0, 1)
  std::size_t clutter_points = 300;
  double clutter_margin = 4.0;  ///< meters around the trajectory's extent
  double surface_inset = 0.02;  ///< gap between the sampled surface and the labeled box, per side
  std::uint64_t seed = 0;

  void validate() const;
};

/// Size and speed ranges for "car", "pedestrian" or "cyclist".
SceneConfig category_preset(const std::string& category);

/// `n` points uniform over the six faces (area-weighted), posed by `box`.
PointCloud sample_box_surface(const Box3D& box, std::size_t n, Rng& rng);

/// Drops target points whose projection on `direction` (relative to the box
/// center) exceeds the (1 - fraction) quantile of those projections.
PointCloud occlude(const PointCloud& cloud, const Box3D& box, const Vec3& direction, double fraction);

/// Deterministic in `cfg.seed`.
LabeledSequence generate_sequence(const SceneConfig& cfg);

struct DatasetConfig {
  std::size_t sequences = 200;
  std::size_t frames = 10;
  double occlusion = 0.3;
  std::vector<std::string> categories{"car", "pedestrian", "cyclist"};
  std::uint64_t seed = 0;
};

/// Scene parameters of sequence `i` of a dataset.
SceneConfig scene_config(const DatasetConfig& cfg, std::size_t i);

/// Sequence i uses category i mod |categories| and seed derive_seed(seed, i).
std::vector<LabeledSequence> generate_dataset(const DatasetConfig& cfg);

}  // namespace pcet::sim
