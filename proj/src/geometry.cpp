#include "microcarla/geometry.hpp"

#include <algorithm>
#include <limits>

namespace microcarla {

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

void Aabb::extend(Vec2 p) {
  lo.x = std::min(lo.x, p.x);
  lo.y = std::min(lo.y, p.y);
  hi.x = std::max(hi.x, p.x);
  hi.y = std::max(hi.y, p.y);
}

Aabb bounds_of(std::span<const Vec2> pts) {
  Aabb b;
  for (const auto& p : pts) b.extend(p);
  return b;
}

std::array<Vec2, 4> OrientedRect::corners() const {
  const Vec2 f = axis() * (length / 2.0);
  const Vec2 l = perp(axis()) * (width / 2.0);
  return {center - f - l, center + f - l, center + f + l, center - f + l};
}

Polygon OrientedRect::polygon() const {
  const auto c = corners();
  return {c.begin(), c.end()};
}

Vec2 OrientedRect::to_local(Vec2 p) const {
  const Vec2 d = p - center;
  const Vec2 f = axis();
  return {dot(d, f), dot(d, perp(f))};
}

Vec2 OrientedRect::to_world(Vec2 local) const {
  const Vec2 f = axis();
  return center + f * local.x + perp(f) * local.y;
}

double signed_area(std::span<const Vec2> poly) {
  double a = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) a += cross(poly[i], poly[(i + 1) % n]);
  return 0.5 * a;
}

bool is_convex(std::span<const Vec2> poly) {
  const size_t n = poly.size();
  if (n < 3) return false;
  int sign = 0;
  for (size_t i = 0; i < n; ++i) {
    const double c = cross(poly[(i + 1) % n] - poly[i], poly[(i + 2) % n] - poly[(i + 1) % n]);
    if (std::abs(c) < 1e-12) continue;
    const int s = c > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return sign != 0;
}

Polygon ccw(std::span<const Vec2> poly) {
  Polygon out(poly.begin(), poly.end());
  if (signed_area(out) < 0.0) std::reverse(out.begin(), out.end());
  return out;
}

bool convex_contains(std::span<const Vec2> poly, Vec2 p, double eps) {
  const size_t n = poly.size();
  bool pos = false, neg = false;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[i], b = poly[(i + 1) % n];
    const double c = cross(b - a, p - a);
    if (c > eps) pos = true;
    if (c < -eps) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

Polygon clip_convex(std::span<const Vec2> subject, std::span<const Vec2> window) {
  Polygon out(subject.begin(), subject.end());
  Polygon in;
  const size_t m = window.size();
  for (size_t e = 0; e < m && !out.empty(); ++e) {
    const Vec2 a = window[e], b = window[(e + 1) % m];
    const Vec2 edge = b - a;
    in.swap(out);
    out.clear();
    const size_t n = in.size();
    for (size_t i = 0; i < n; ++i) {
      const Vec2 p = in[i], q = in[(i + 1) % n];
      const double dp = cross(edge, p - a);
      const double dq = cross(edge, q - a);
      if (dp >= 0.0) out.push_back(p);
      if ((dp >= 0.0) != (dq >= 0.0)) {
        const double t = dp / (dp - dq);
        out.push_back(p + (q - p) * t);
      }
    }
  }
  return out;
}

double intersection_area(std::span<const Vec2> subject, std::span<const Vec2> window) {
  return area(clip_convex(subject, window));
}

namespace {

void project(std::span<const Vec2> poly, Vec2 axis, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const auto& p : poly) {
    const double d = dot(p, axis);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
}

bool separated_along_edges(std::span<const Vec2> a, std::span<const Vec2> b) {
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 axis = perp(a[(i + 1) % n] - a[i]);
    double alo, ahi, blo, bhi;
    project(a, axis, alo, ahi);
    project(b, axis, blo, bhi);
    if (ahi < blo || bhi < alo) return true;
  }
  return false;
}

}  // namespace

bool convex_overlap(std::span<const Vec2> a, std::span<const Vec2> b) {
  return !separated_along_edges(a, b) && !separated_along_edges(b, a);
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + ab * t);
}

double point_convex_distance(Vec2 p, std::span<const Vec2> poly) {
  if (convex_contains(poly, p)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) best = std::min(best, point_segment_distance(p, poly[i], poly[(i + 1) % n]));
  return best;
}

bool circle_overlaps_convex(Vec2 c, double r, std::span<const Vec2> poly) {
  return point_convex_distance(c, poly) <= r;
}

std::optional<double> ray_segment(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b) {
  const Vec2 e = b - a;
  const double denom = cross(dir, e);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const Vec2 w = a - origin;
  const double t = cross(w, e) / denom;
  const double u = cross(w, dir) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

std::optional<double> ray_convex(Vec2 origin, Vec2 dir, std::span<const Vec2> poly) {
  if (convex_contains(poly, origin)) return 0.0;
  std::optional<double> best;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const auto t = ray_segment(origin, dir, poly[i], poly[(i + 1) % n]);
    if (t && (!best || *t < *best)) best = t;
  }
  return best;
}

std::optional<double> ray_circle(Vec2 origin, Vec2 dir, Vec2 c, double r) {
  const Vec2 m = origin - c;
  const double b = dot(m, dir);
  const double cc = dot(m, m) - r * r;
  if (cc <= 0.0) return 0.0;
  if (b > 0.0) return std::nullopt;
  const double disc = b * b - cc;
  if (disc < 0.0) return std::nullopt;
  return -b - std::sqrt(disc);
}

}  // namespace microcarla
