#include "pcet/cloud.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pcet {

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<bool> points_in_box(const PointCloud& cloud, const Box3D& box, double margin) {
  return points_in_box(std::span<const Vec3>(cloud.points), box, margin);
}

std::vector<std::size_t> fps(std::span<const Vec3> points, std::size_t k, std::size_t seed_index) {
  const std::size_t n = points.size();
  if (n == 0) throw std::invalid_argument("fps: empty cloud");
  if (k < 1 || k > n) {
    throw std::invalid_argument("fps: k=" + std::to_string(k) + " out of range [1, " +
                                std::to_string(n) + "]");
  }
  if (seed_index >= n) throw std::invalid_argument("fps: seed index out of range");

  std::vector<std::size_t> picks;
  picks.reserve(k);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t current = seed_index;
  for (std::size_t step = 0; step < k; ++step) {
    picks.push_back(current);
    min_d2[current] = -1.0;
    const Vec3 c = points[current];
    std::size_t best = 0;
    double best_d = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d2[i] < 0.0) continue;
      const double d = squared_distance(points[i], c);
      if (d < min_d2[i]) min_d2[i] = d;
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return picks;
}

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (std::size_t i : indices) out.points.push_back(cloud.points.at(i));
  if (cloud.has_intensity()) {
    out.intensity.reserve(indices.size());
    for (std::size_t i : indices) out.intensity.push_back(cloud.intensity.at(i));
  }
  return out;
}

PointCloud resample_to(const PointCloud& cloud, std::size_t k, Rng& rng) {
  const std::size_t n = cloud.size();
  if (n == 0) throw std::invalid_argument("resample_to: empty cloud");
  if (n == k) return cloud;

  std::vector<std::size_t> idx;
  if (n > k) {
    // Partial Fisher-Yates over an index permutation, then restore input order.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.index(n - i);
      std::swap(perm[i], perm[j]);
    }
    idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(idx.begin(), idx.end());
  } else {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i < k; ++i) idx.push_back(rng.index(n));
  }
  return select(cloud, idx);
}

CropResult crop_and_fix(const PointCloud& cloud, const Box3D& box, std::size_t k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("crop_and_fix: k must be >= 1");
  const auto mask = points_in_box(cloud, box);
  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) inside.push_back(i);

  CropResult out;
  out.inside = inside.size();
  if (inside.empty()) {
    out.degenerate = true;
    out.cloud.points.assign(k, box.center());
    if (cloud.has_intensity()) out.cloud.intensity.assign(k, 0.0);
    return out;
  }
  out.cloud = resample_to(select(cloud, inside), k, rng);
  return out;
}

MergedTemplate build_merged_template(const PointCloud& prev, const Box3D& prev_box,
                                     const PointCloud& cur, const Box3D& cur_box, Rng& rng,
                                     std::size_t half) {
  auto p = crop_and_fix(prev, prev_box, half, rng);
  auto c = crop_and_fix(cur, cur_box, half, rng);
  const RigidMotion m = relative_motion(prev_box, cur_box);

  MergedTemplate out;
  out.previous_degenerate = p.degenerate;
  out.current_degenerate = c.degenerate;
  out.cloud.points = transform_points(p.cloud.points, m, prev_box.center());
  out.cloud.points.insert(out.cloud.points.end(), c.cloud.points.begin(), c.cloud.points.end());
  if (p.cloud.has_intensity() && c.cloud.has_intensity()) {
    out.cloud.intensity = p.cloud.intensity;
    out.cloud.intensity.insert(out.cloud.intensity.end(), c.cloud.intensity.begin(),
                               c.cloud.intensity.end());
  }
  return out;
}

Box3D expand_search_region(const Box3D& box, double factor) {
  if (!(factor >= 1.0)) throw std::invalid_argument("expand_search_region: factor must be >= 1");
  return {box.center(), box.size() * factor, box.yaw()};
}

}  // namespace pcet
