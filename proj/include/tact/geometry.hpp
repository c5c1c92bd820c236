#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "tact/errors.hpp"
#include "tact/rng.hpp"

namespace tact {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Normalize an angle to [0, 2*pi).
inline double normalize_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  return a;
}

// Rigid planar pose: rotation about the origin followed by a translation.
struct Pose2D {
  double rotation = 0.0;  // radians, [0, 2*pi)
  Vec2 translation;       // meters
};

inline Vec2 apply_pose(const Pose2D& pose, Vec2 v) {
  const double c = std::cos(pose.rotation), s = std::sin(pose.rotation);
  return {c * v.x - s * v.y + pose.translation.x,
          s * v.x + c * v.y + pose.translation.y};
}

// Composition: apply_pose(compose(b, a), v) == apply_pose(b, apply_pose(a, v)).
inline Pose2D compose(const Pose2D& second, const Pose2D& first) {
  const double c = std::cos(second.rotation), s = std::sin(second.rotation);
  Pose2D out;
  out.rotation = normalize_angle(first.rotation + second.rotation);
  out.translation = {c * first.translation.x - s * first.translation.y +
                         second.translation.x,
                     s * first.translation.x + c * first.translation.y +
                         second.translation.y};
  return out;
}

// Object shape: counter-clockwise vertex list in meters. The shape's own
// frame is centered on the angular-walk origin; placement in the workspace is
// a separate Pose2D.
struct Polygon {
  std::vector<Vec2> vertices;
  int id = 0;
};

// Signed area via the shoelace formula; positive for counter-clockwise.
inline double shoelace_area(const Polygon& poly) {
  double acc = 0.0;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    acc += cross(v[j], v[i]);
  }
  return 0.5 * acc;
}

// Random polygon by a monotone angular walk: draw the vertex count, split the
// full circle with positive angular steps, and put each vertex at a random
// radius in (min_radius_frac * max_radius, max_radius]. The step vector is
// redrawn while any single step exceeds half the total: that caps every
// angular gap at a half turn, which keeps the origin interior, and a polygon
// whose vertices wind around an interior point at strictly increasing angles
// is simple and counter-clockwise.
inline Polygon generate_polygon(Rng& rng, int max_edges, double max_radius,
                                double min_radius_frac = 0.2) {
  if (max_edges < 3) throw ConfigError("generate_polygon: max_edges must be >= 3");
  if (max_radius <= 0.0) throw ConfigError("generate_polygon: max_radius must be > 0");

  const int n = 3 + static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(max_edges - 3 + 1)));
  std::vector<double> steps(n);
  double total = 0.0;
  for (bool ok = false; !ok;) {
    total = 0.0;
    for (auto& s : steps) {
      s = 1.0 - rng.uniform();  // (0, 1]
      total += s;
    }
    ok = true;
    for (double s : steps) ok = ok && s <= 0.5 * total;
  }
  const double min_radius = min_radius_frac * max_radius;

  Polygon poly;
  poly.vertices.reserve(n);
  double prefix = 0.0;
  for (int k = 0; k < n; ++k) {
    const double angle = kTwoPi * prefix / total;  // exclusive prefix: first vertex at 0
    prefix += steps[k];
    const double r = max_radius - rng.uniform() * (max_radius - min_radius);
    poly.vertices.push_back({r * std::cos(angle), r * std::sin(angle)});
  }
  return poly;
}

inline Polygon transform(const Polygon& poly, const Pose2D& pose) {
  Polygon out;
  out.id = poly.id;
  out.vertices.reserve(poly.vertices.size());
  for (const Vec2& v : poly.vertices) out.vertices.push_back(apply_pose(pose, v));
  return out;
}

namespace detail {
inline bool point_on_segment(Vec2 p, Vec2 a, Vec2 b, double eps) {
  const Vec2 ab = b - a, ap = p - a;
  const double len = norm(ab);
  if (len == 0.0) return norm(ap) <= eps;
  if (std::abs(cross(ab, ap)) > eps * len) return false;
  const double t = dot(ab, ap);
  return t >= -eps * len && t <= len * len + eps * len;
}
}  // namespace detail

// Even-odd ray crossing with the boundary counted as inside. The half-open
// vertex rule plus the explicit on-segment test keeps vertex-grazing rays
// consistent; eps guards the on-boundary classification.
inline bool point_in_polygon(Vec2 p, const Polygon& poly) {
  constexpr double kEps = 1e-12;
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if (detail::point_on_segment(p, v[j], v[i], kEps)) return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double x_cross =
          v[i].x + (p.y - v[i].y) * (v[j].x - v[i].x) / (v[j].y - v[i].y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

// Cell layout of the workspace in the object frame: the workspace square is
// centered on the origin, so cell centers run from -size/2 to +size/2.
struct GridSpec {
  int width = 0;
  int height = 0;
  double cell_size = 0.0;

  Vec2 cell_center(int ix, int iy) const {
    return {(ix + 0.5) * cell_size - 0.5 * width * cell_size,
            (iy + 0.5) * cell_size - 0.5 * height * cell_size};
  }
};

// Ground-truth occupancy: one bool per cell, true iff the cell center lies
// inside the posed polygon.
struct TruthGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> occupied;

  bool at(int x, int y) const { return occupied[static_cast<std::size_t>(y) * width + x] != 0; }
  int occupied_count() const {
    int n = 0;
    for (auto c : occupied) n += c;
    return n;
  }
};

inline TruthGrid rasterize_truth(const Polygon& poly, const Pose2D& pose,
                                 const GridSpec& spec) {
  const Polygon posed = transform(poly, pose);
  TruthGrid grid;
  grid.width = spec.width;
  grid.height = spec.height;
  grid.occupied.assign(static_cast<std::size_t>(spec.width) * spec.height, 0);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      if (point_in_polygon(spec.cell_center(x, y), posed)) {
        grid.occupied[static_cast<std::size_t>(y) * spec.width + x] = 1;
      }
    }
  }
  return grid;
}

}  // namespace tact
