#include "pcet/geom.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace pcet {

namespace {

constexpr double kMinClipArea = 1e-12;

using Point2 = std::array<double, 2>;

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

Point2 line_intersection(const Point2& p, const Point2& q, const Point2& a, const Point2& b) {
  // Intersection of segment pq with the infinite line through a, b.
  const double d1 = cross(a, b, p);
  const double d2 = cross(a, b, q);
  const double t = d1 / (d1 - d2);
  return {p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])};
}

// Sutherland-Hodgman: clip `subject` by the convex counter-clockwise `clip` polygon.
std::vector<Point2> clip_convex(std::vector<Point2> subject, std::span<const Point2> clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % clip.size()];
    std::vector<Point2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Point2& cur = subject[i];
      const Point2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const bool cur_in = cross(a, b, cur) >= 0.0;
      const bool prev_in = cross(a, b, prev) >= 0.0;
      if (cur_in) {
        if (!prev_in) out.push_back(line_intersection(prev, cur, a, b));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(line_intersection(prev, cur, a, b));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

double polygon_area(std::span<const Point2> poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    twice += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(twice);
}

}  // namespace

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

Box3D::Box3D(Vec3 center, Vec3 size, double yaw) : center_(center), size_(size), yaw_(wrap_angle(yaw)) {
  if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0)) {
    throw std::invalid_argument("Box3D: size components must be strictly positive, got (" +
                                std::to_string(size.x) + ", " + std::to_string(size.y) + ", " +
                                std::to_string(size.z) + ")");
  }
  if (!std::isfinite(center.x) || !std::isfinite(center.y) || !std::isfinite(center.z) ||
      !std::isfinite(yaw)) {
    throw std::invalid_argument("Box3D: non-finite center or yaw");
  }
}

std::array<std::array<double, 2>, 4> Box3D::footprint() const {
  const double hl = size_.x / 2.0, hw = size_.y / 2.0;
  const double c = std::cos(yaw_), s = std::sin(yaw_);
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {center_.x + c * local[i][0] - s * local[i][1],
              center_.y + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

std::array<Vec3, 8> Box3D::corners() const {
  const auto fp = footprint();
  const double zb = center_.z - size_.z / 2.0, zt = center_.z + size_.z / 2.0;
  std::array<Vec3, 8> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {fp[i][0], fp[i][1], zb};
    out[i + 4] = {fp[i][0], fp[i][1], zt};
  }
  return out;
}

RigidMotion RigidMotion::inverse() const {
  return {rotate_z(translation, -rotation) * -1.0, wrap_angle(-rotation)};
}

double footprint_intersection_area(const Box3D& a, const Box3D& b) {
  const auto fa = a.footprint();
  const auto fb = b.footprint();
  const std::vector<Point2> subject(fa.begin(), fa.end());
  const auto clipped = clip_convex(subject, std::span<const Point2>(fb.data(), fb.size()));
  const double area = polygon_area(clipped);
  return area < kMinClipArea ? 0.0 : area;
}

double iou3d(const Box3D& a, const Box3D& b) {
  const double zlo = std::max(a.center().z - a.size().z / 2.0, b.center().z - b.size().z / 2.0);
  const double zhi = std::min(a.center().z + a.size().z / 2.0, b.center().z + b.size().z / 2.0);
  const double dz = zhi - zlo;
  if (dz <= 0.0) return 0.0;
  const double area = footprint_intersection_area(a, b);
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double center_distance(const Box3D& a, const Box3D& b) { return (a.center() - b.center()).norm(); }

bool point_in_box(const Vec3& p, const Box3D& box, double margin) {
  const Vec3 l = box.to_local(p);
  const Vec3& s = box.size();
  return std::abs(l.x) <= s.x / 2.0 + margin && std::abs(l.y) <= s.y / 2.0 + margin &&
         std::abs(l.z) <= s.z / 2.0 + margin;
}

std::vector<bool> points_in_box(std::span<const Vec3> points, const Box3D& box, double margin) {
  std::vector<bool> mask(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) mask[i] = point_in_box(points[i], box, margin);
  return mask;
}

RigidMotion relative_motion(const Box3D& from, const Box3D& to) {
  return {to.center() - from.center(), angle_diff(to.yaw(), from.yaw())};
}

Vec3 transform_point(const Vec3& p, const RigidMotion& m, const Vec3& pivot) {
  return rotate_z(p - pivot, m.rotation) + pivot + m.translation;
}

std::vector<Vec3> transform_points(std::span<const Vec3> points, const RigidMotion& m,
                                   const Vec3& pivot) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(transform_point(p, m, pivot));
  return out;
}

Box3D transform_box(const Box3D& box, const RigidMotion& m, const Vec3& pivot) {
  return {transform_point(box.center(), m, pivot), box.size(), box.yaw() + m.rotation};
}

}  // namespace pcet
