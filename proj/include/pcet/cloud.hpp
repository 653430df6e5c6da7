#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pcet/geom.hpp"

namespace pcet {

/// Ordered 3D points in meters. `intensity` is either empty or parallel to `points`.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }
};

/// Deterministic generator. Draws are derived from raw mt19937_64 output with
/// hand-written conversions (no std distributions), so a seed reproduces the same
/// sequence on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Rejection sampling, unbiased.
  std::size_t index(std::size_t n);
  /// Standard normal via Box-Muller (one value per call, second value discarded).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 step, used to derive independent per-item seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t x);
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x9E3779B97F4A7C15ULL));
}

std::vector<bool> points_in_box(const PointCloud& cloud, const Box3D& box, double margin = 0.0);

/// Greedy farthest point sampling. The first pick is `seed_index`; each later
/// pick maximizes the distance to the picked set, ties going to the lowest index.
std::vector<std::size_t> fps(std::span<const Vec3> points, std::size_t k, std::size_t seed_index = 0);
inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t k, std::size_t seed_index = 0) {
  return fps(cloud.points, k, seed_index);
}

/// Returns exactly `k` points drawn from `cloud`. With at least `k` points, a
/// uniform subset without replacement (kept in input order); otherwise all
/// originals followed by `k - count` draws with replacement.
PointCloud resample_to(const PointCloud& cloud, std::size_t k, Rng& rng);

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices);

struct CropResult {
  PointCloud cloud;
  std::size_t inside = 0;   ///< points found in the box before resampling
  bool degenerate = false;  ///< crop was empty; cloud holds k copies of the center
};

/// Points of `cloud` inside `box`, resampled to `k`.
CropResult crop_and_fix(const PointCloud& cloud, const Box3D& box, std::size_t k, Rng& rng);

struct MergedTemplate {
  PointCloud cloud;  ///< previous half (aligned) followed by current half
  bool previous_degenerate = false;
  bool current_degenerate = false;
};

/// Crops the previous frame by `prev_box` and the current frame by `cur_box`
/// (`half` points each), aligns the previous crop onto the current state and
/// concatenates them.
MergedTemplate build_merged_template(const PointCloud& prev, const Box3D& prev_box,
                                     const PointCloud& cur, const Box3D& cur_box, Rng& rng,
                                     std::size_t half = 256);

/// Same center and yaw, every size component scaled by `factor` (>= 1).
Box3D expand_search_region(const Box3D& box, double factor = 4.0);

}  // namespace pcet
