#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "moe/common.hpp"

namespace moe {

struct Sphere {
  Vec3 center;
  double radius = 0.0;
};

// Segment a-b swept by a ball of the given radius.
struct Capsule {
  Vec3 a;
  Vec3 b;
  double radius = 0.0;
};

// Smallest t >= t_min with |o + t*d - center| = radius, for unit d.
inline std::optional<double> ray_sphere(const Vec3& o, const Vec3& d,
                                        const Sphere& s,
                                        double t_min = 1e-9) {
  const Vec3 oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < t_min) t = -b + sq;
  if (t < t_min) return std::nullopt;
  return t;
}

// Smallest t >= t_min hitting the capsule surface, for unit d. Cylinder
// body first, spherical caps as fallback.
inline std::optional<double> ray_capsule(const Vec3& o, const Vec3& d,
                                         const Capsule& cap,
                                         double t_min = 1e-9) {
  const Vec3 ab = cap.b - cap.a;
  const double len2 = ab.squaredNorm();
  std::optional<double> best;
  auto consider = [&](double t) {
    if (t >= t_min && (!best || t < *best)) best = t;
  };

  if (len2 > 1e-18) {
    const Vec3 axis = ab / std::sqrt(len2);
    const Vec3 oa = o - cap.a;
    const Vec3 d_perp = d - d.dot(axis) * axis;
    const Vec3 oa_perp = oa - oa.dot(axis) * axis;
    const double A = d_perp.squaredNorm();
    const double B = 2.0 * d_perp.dot(oa_perp);
    const double C = oa_perp.squaredNorm() - cap.radius * cap.radius;
    if (A > 1e-18) {
      const double disc = B * B - 4.0 * A * C;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        for (double t : {(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)}) {
          if (t < t_min) continue;
          const double axial = (oa + t * d).dot(axis);
          if (axial >= 0.0 && axial * axial <= len2) consider(t);
        }
      }
    }
  }
  if (auto t = ray_sphere(o, d, {cap.a, cap.radius}, t_min)) consider(*t);
  if (auto t = ray_sphere(o, d, {cap.b, cap.radius}, t_min)) consider(*t);
  return best;
}

// Distance from p to segment a-b and the closest point on it.
inline double point_segment_distance(const Vec3& p, const Vec3& a,
                                     const Vec3& b, Vec3* closest = nullptr) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double s = len2 > 1e-18 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  const Vec3 q = a + s * ab;
  if (closest) *closest = q;
  return (p - q).norm();
}

// Andrew monotone chain; returns hull vertices counter-clockwise.
// Degenerate inputs (< 3 distinct points, collinear sets) return what is
// available; point_in_convex_hull treats those as empty regions.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& p, const Vec2& q) {
    return p.x() < q.x() || (p.x() == q.x() && p.y() < q.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& p, const Vec2& q) {
                          return p.x() == q.x() && p.y() == q.y();
                        }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) -
           (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Point-in-convex-polygon by half-plane tests against the CCW hull.
inline bool point_in_convex_hull(const Vec2& p, const std::vector<Vec2>& hull,
                                 double eps = 1e-12) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    const double side = (b.x() - a.x()) * (p.y() - a.y()) -
                        (b.y() - a.y()) * (p.x() - a.x());
    if (side < -eps) return false;
  }
  return true;
}

}  // namespace moe
