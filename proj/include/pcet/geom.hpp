#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace pcet {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

/// Minimal signed difference `to - from`, wrapped into (-pi, pi].
inline double angle_diff(double to, double from) { return wrap_angle(to - from); }

/// Rotates `p` about the vertical axis by `radians`.
inline Vec3 rotate_z(const Vec3& p, double radians) {
  const double c = std::cos(radians), s = std::sin(radians);
  return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

/// Oriented box with yaw about the vertical axis. Size is (length, width, height),
/// length along the heading. Construction rejects non-positive sizes and stores
/// the yaw wrapped to (-pi, pi].
class Box3D {
 public:
  Box3D(Vec3 center, Vec3 size, double yaw);

  const Vec3& center() const { return center_; }
  const Vec3& size() const { return size_; }
  double yaw() const { return yaw_; }
  double volume() const { return size_.x * size_.y * size_.z; }

  Box3D with_center(Vec3 c) const { return {c, size_, yaw_}; }
  Box3D with_yaw(double yaw) const { return {center_, size_, yaw}; }

  /// The 4 footprint corners (counter-clockwise) in world xy.
  std::array<std::array<double, 2>, 4> footprint() const;
  /// All 8 corners: footprint at the bottom, then the same at the top.
  std::array<Vec3, 8> corners() const;

  /// Expresses a world point in the box frame (origin at center, x along heading).
  Vec3 to_local(const Vec3& p) const { return rotate_z(p - center_, -yaw_); }

 private:
  Vec3 center_;
  Vec3 size_;
  double yaw_;
};

/// A rotation about a vertical pivot axis followed by a translation.
struct RigidMotion {
  Vec3 translation;
  double rotation = 0.0;

  /// Inverse with respect to the same pivot.
  RigidMotion inverse() const;
};

/// Intersection-over-union of two yaw-rotated boxes in 3D.
double iou3d(const Box3D& a, const Box3D& b);

/// Bird's-eye-view overlap area of two footprints (convex clipping).
double footprint_intersection_area(const Box3D& a, const Box3D& b);

double center_distance(const Box3D& a, const Box3D& b);

/// Inside test with inclusive boundary. `margin` inflates each half-extent.
bool point_in_box(const Vec3& p, const Box3D& box, double margin = 0.0);

/// Mask over `points`; true where the point lies inside `box` (boundary inclusive).
std::vector<bool> points_in_box(std::span<const Vec3> points, const Box3D& box,
                                double margin = 0.0);

/// Motion carrying `from` onto `to` when applied with pivot `from.center()`.
RigidMotion relative_motion(const Box3D& from, const Box3D& to);

/// Rotates each point about the vertical axis through `pivot`, then translates.
std::vector<Vec3> transform_points(std::span<const Vec3> points, const RigidMotion& m,
                                   const Vec3& pivot);

Vec3 transform_point(const Vec3& p, const RigidMotion& m, const Vec3& pivot);

/// Applies a motion (pivoted at the box center) to a box.
Box3D transform_box(const Box3D& box, const RigidMotion& m, const Vec3& pivot);

}  // namespace pcet
