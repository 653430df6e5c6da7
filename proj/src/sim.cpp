#include "pcet/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "pcet/errors.hpp"

namespace pcet::sim {

void SceneConfig::validate() const {
  if (!(occlusion >= 0.0 && occlusion < 1.0)) throw ConfigError("sim: occlusion must be in [0, 1)");
  if (frames < 2) throw ConfigError("sim: frames must be >= 2");
  if (target_points_min < 1 || target_points_max < target_points_min) {
    throw ConfigError("sim: invalid target point range");
  }
  if (!(surface_inset >= 0 && 2 * surface_inset < std::min({size_min.x, size_min.y, size_min.z}))) {
    throw ConfigError("sim: surface_inset must be >= 0 and smaller than half the box size");
  }
  if (!(size_min.x > 0 && size_min.y > 0 && size_min.z > 0) || size_max.x < size_min.x ||
      size_max.y < size_min.y || size_max.z < size_min.z) {
    throw ConfigError("sim: invalid size range");
  }
}

SceneConfig category_preset(const std::string& category) {
  SceneConfig c;
  c.category = category;
  if (category == "car") {
    return c;
  }
  if (category == "pedestrian") {
    c.size_min = {0.5, 0.5, 1.5};
    c.size_max = {0.9, 0.8, 1.9};
    c.speed_min = 0.08;
    c.speed_max = 0.25;
    c.yaw_rate_std = 0.05;
    c.target_points_min = 40;
    c.target_points_max = 100;
    c.clutter_margin = 2.5;
    c.clutter_points = 150;
    return c;
  }
  if (category == "cyclist") {
    c.size_min = {1.5, 0.5, 1.6};
    c.size_max = {1.9, 0.8, 1.9};
    c.speed_min = 0.2;
    c.speed_max = 0.6;
    c.yaw_rate_std = 0.04;
    c.target_points_min = 50;
    c.target_points_max = 120;
    c.clutter_margin = 3.0;
    c.clutter_points = 200;
    return c;
  }
  throw ConfigError("sim: unknown category '" + category + "'");
}

PointCloud sample_box_surface(const Box3D& box, std::size_t n, Rng& rng) {
  const double l = box.size().x, w = box.size().y, h = box.size().z;
  // Faces: +x, -x (w*h), +y, -y (l*h), +z, -z (l*w).
  const double areas[6] = {w * h, w * h, l * h, l * h, l * w, l * w};
  const double total = 2.0 * (w * h + l * h + l * w);
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    int face = 0;
    while (face < 5 && u >= areas[face]) {
      u -= areas[face];
      ++face;
    }
    const double a = rng.uniform() - 0.5, b = rng.uniform() - 0.5;
    Vec3 local;
    switch (face) {
      case 0: local = {l / 2, a * w, b * h}; break;
      case 1: local = {-l / 2, a * w, b * h}; break;
      case 2: local = {a * l, w / 2, b * h}; break;
      case 3: local = {a * l, -w / 2, b * h}; break;
      case 4: local = {a * l, b * w, h / 2}; break;
      default: local = {a * l, b * w, -h / 2}; break;
    }
    out.points.push_back(rotate_z(local, box.yaw()) + box.center());
  }
  return out;
}

PointCloud occlude(const PointCloud& cloud, const Box3D& box, const Vec3& direction, double fraction) {
  if (fraction <= 0.0 || cloud.empty()) return cloud;
  std::vector<double> proj(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) proj[i] = direction.dot(cloud.points[i] - box.center());
  std::vector<double> sorted = proj;
  std::sort(sorted.begin(), sorted.end());
  // Lower empirical quantile at level (1 - fraction).
  const double pos = (1.0 - fraction) * static_cast<double>(sorted.size() - 1);
  const double q = sorted[static_cast<std::size_t>(pos)];
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (proj[i] > q) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.has_intensity()) out.intensity.push_back(cloud.intensity[i]);
  }
  return out;
}

LabeledSequence generate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Vec3 size{rng.uniform(cfg.size_min.x, cfg.size_max.x), rng.uniform(cfg.size_min.y, cfg.size_max.y),
                  rng.uniform(cfg.size_min.z, cfg.size_max.z)};
  double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
  const double yaw_rate = rng.normal(0.0, cfg.yaw_rate_std);
  Vec3 center{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0), size.z / 2.0 - 1.7};

  LabeledSequence seq;
  seq.category = cfg.category;
  char name[64];
  std::snprintf(name, sizeof(name), "%s-%016llx", cfg.category.c_str(),
                static_cast<unsigned long long>(cfg.seed));
  seq.name = name;

  for (std::size_t t = 0; t < cfg.frames; ++t) {
    if (t > 0) {
      const Vec3 velocity{speed * std::cos(yaw), speed * std::sin(yaw), 0.0};
      center += velocity;
      center += Vec3{rng.normal(0.0, cfg.center_noise_std), rng.normal(0.0, cfg.center_noise_std), 0.0};
      yaw = wrap_angle(yaw + yaw_rate + rng.normal(0.0, cfg.yaw_noise_std));
    }
    seq.boxes.emplace_back(center, size, yaw);
  }

  // Clutter region: trajectory extent plus margin.
  Vec3 lo = seq.boxes[0].center(), hi = lo;
  for (const auto& b : seq.boxes) {
    lo = {std::min(lo.x, b.center().x), std::min(lo.y, b.center().y), std::min(lo.z, b.center().z)};
    hi = {std::max(hi.x, b.center().x), std::max(hi.y, b.center().y), std::max(hi.z, b.center().z)};
  }
  const double m = cfg.clutter_margin;
  lo = lo - Vec3{m, m, size.z};
  hi = hi + Vec3{m, m, size.z};

  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const Box3D& box = seq.boxes[t];
    const std::size_t n = cfg.target_points_min + rng.index(cfg.target_points_max - cfg.target_points_min + 1);
    const Vec3 shrink{2 * cfg.surface_inset, 2 * cfg.surface_inset, 2 * cfg.surface_inset};
    PointCloud target = sample_box_surface(Box3D(box.center(), box.size() - shrink, box.yaw()), n, rng);
    const double dir = rng.uniform(-std::numbers::pi, std::numbers::pi);
    target = occlude(target, box, {std::cos(dir), std::sin(dir), 0.0}, cfg.occlusion);

    PointCloud frame = std::move(target);
    for (std::size_t i = 0; i < cfg.clutter_points; ++i) {
      const Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
      // Clutter never lands inside the target itself.
      if (point_in_box(p, box)) continue;
      frame.points.push_back(p);
    }
    frame.intensity.assign(frame.size(), 0.0);
    std::size_t inside = 0;
    for (const auto& p : frame.points) inside += point_in_box(p, box) ? 1 : 0;
    seq.fully_occluded.push_back(inside == 0);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

SceneConfig scene_config(const DatasetConfig& cfg, std::size_t i) {
  if (cfg.categories.empty()) throw ConfigError("sim: no categories");
  SceneConfig sc = category_preset(cfg.categories[i % cfg.categories.size()]);
  sc.frames = cfg.frames;
  sc.occlusion = cfg.occlusion;
  sc.seed = derive_seed(cfg.seed, i);
  return sc;
}

std::vector<LabeledSequence> generate_dataset(const DatasetConfig& cfg) {
  std::vector<LabeledSequence> out;
  out.reserve(cfg.sequences);
  for (std::size_t i = 0; i < cfg.sequences; ++i) out.push_back(generate_sequence(scene_config(cfg, i)));
  return out;
}

}  // namespace pcet::sim
