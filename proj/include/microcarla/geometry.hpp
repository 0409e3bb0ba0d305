#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace microcarla {

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline Vec2 normalized(Vec2 v) {
  const double n = norm(v);
  return n > 0.0 ? v / n : Vec2{};
}
/// Left-hand perpendicular (counter-clockwise rotation by 90 degrees).
constexpr Vec2 perp(Vec2 v) { return {-v.y, v.x}; }
inline Vec2 unit_from_angle(double a) { return {std::cos(a), std::sin(a)}; }
inline double angle_of(Vec2 v) { return std::atan2(v.y, v.x); }
inline Vec2 rotate(Vec2 v, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct Pose {
  Vec2 position;
  double heading = 0.0;  // rad, counter-clockwise from +x

  bool operator==(const Pose&) const = default;
};

using Polygon = std::vector<Vec2>;

struct Aabb {
  Vec2 lo{1e300, 1e300};
  Vec2 hi{-1e300, -1e300};

  void extend(Vec2 p);
  bool overlaps(const Aabb& o) const {
    return lo.x <= o.hi.x && o.lo.x <= hi.x && lo.y <= o.hi.y && o.lo.y <= hi.y;
  }
  bool contains(Vec2 p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  Aabb inflated(double d) const { return {{lo.x - d, lo.y - d}, {hi.x + d, hi.y + d}}; }
};

Aabb bounds_of(std::span<const Vec2> pts);

/// Vehicle footprint: a rectangle centred on a pose.
struct OrientedRect {
  Vec2 center;
  double heading = 0.0;
  double length = 4.0;
  double width = 1.8;

  std::array<Vec2, 4> corners() const;  // counter-clockwise
  Polygon polygon() const;
  double area() const { return length * width; }
  Vec2 axis() const { return unit_from_angle(heading); }
  /// Point in the rectangle's local frame (x forward, y left).
  Vec2 to_local(Vec2 p) const;
  Vec2 to_world(Vec2 local) const;
  bool operator==(const OrientedRect&) const = default;
};

/// Signed area; positive for counter-clockwise winding.
double signed_area(std::span<const Vec2> poly);
inline double area(std::span<const Vec2> poly) { return std::abs(signed_area(poly)); }

bool is_convex(std::span<const Vec2> poly);
/// Returns a counter-clockwise copy.
Polygon ccw(std::span<const Vec2> poly);

/// Inclusive containment test for a convex polygon of either winding.
bool convex_contains(std::span<const Vec2> poly, Vec2 p, double eps = 1e-12);

/// Sutherland-Hodgman: clips `subject` by the convex counter-clockwise `window`.
Polygon clip_convex(std::span<const Vec2> subject, std::span<const Vec2> window);

/// Area of subject ∩ window, window convex and counter-clockwise.
double intersection_area(std::span<const Vec2> subject, std::span<const Vec2> window);

/// Separating-axis test for two convex polygons (touching counts as overlap).
bool convex_overlap(std::span<const Vec2> a, std::span<const Vec2> b);

bool circle_overlaps_convex(Vec2 c, double r, std::span<const Vec2> poly);

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b);
/// Distance from p to a convex polygon (0 when inside).
double point_convex_distance(Vec2 p, std::span<const Vec2> poly);

/// Nearest non-negative ray parameter hitting the polygon boundary, with
/// `dir` unit length. A ray starting inside returns 0.
std::optional<double> ray_convex(Vec2 origin, Vec2 dir, std::span<const Vec2> poly);
std::optional<double> ray_circle(Vec2 origin, Vec2 dir, Vec2 c, double r);
std::optional<double> ray_segment(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b);

}  // namespace microcarla
