#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "tact/discriminator.hpp"
#include "tact/encoder.hpp"
#include "tact/errors.hpp"
#include "tact/geometry.hpp"

namespace tact {

struct ICPConfig {
  double match_threshold = 0.0025;  // mean residual below this counts as a match (meters)
  double boundary_spacing = 0.001;  // arc-length gap between model points (meters)
  int init_angles = 36;             // evenly spaced initial rotations over a full turn
  int max_iterations = 100;
  double tolerance = 1e-9;          // stop once an iteration improves less than this

  void validate() const {
    if (!(match_threshold > 0.0)) throw ConfigError("icp: match_threshold must be > 0");
    if (!(boundary_spacing > 0.0)) throw ConfigError("icp: boundary_spacing must be > 0");
    if (init_angles < 1) throw ConfigError("icp: init_angles must be >= 1");
    if (max_iterations < 1) throw ConfigError("icp: max_iterations must be >= 1");
    if (!(tolerance >= 0.0)) throw ConfigError("icp: tolerance must be >= 0");
  }
};

// Centers of all contact cells, in a corner-origin frame: cell (i, j) maps to
// ((i + 0.5)·cell, (j + 0.5)·cell). Free and unexplored cells contribute nothing.
inline std::vector<Vec2> grid_to_pointcloud(const GridEncoder& grid, double cell_size) {
  std::vector<Vec2> cloud;
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      if (grid.at(x, y) == CellState::Contact) {
        cloud.push_back({(x + 0.5) * cell_size, (y + 0.5) * cell_size});
      }
    }
  }
  return cloud;
}

// Points along the polygon outline at a fixed arc-length spacing, starting at
// vertex 0 and carrying the remainder across vertices so gaps stay uniform.
inline std::vector<Vec2> sample_boundary(const Polygon& poly, double spacing) {
  if (!(spacing > 0.0)) throw ConfigError("sample_boundary: spacing must be > 0");
  std::vector<Vec2> points;
  double carry = 0.0;  // distance from the current edge's start to the next sample
  const std::size_t n = poly.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly.vertices[i];
    const Vec2 b = poly.vertices[(i + 1) % n];
    const Vec2 d = b - a;
    const double len = std::hypot(d.x, d.y);
    double at = carry;
    while (at < len) {
      points.push_back({a.x + d.x * (at / len), a.y + d.y * (at / len)});
      at += spacing;
    }
    carry = at - len;
  }
  return points;
}

// Uniform-grid index over a fixed point set with exact nearest-neighbor
// queries (expanding bucket rings with a distance bound).
class PointHash {
 public:
  PointHash() = default;

  explicit PointHash(std::vector<Vec2> points, double bucket_size)
      : points_(std::move(points)), bucket_(bucket_size) {
    if (points_.empty()) throw DataError("PointHash: empty point set");
    if (!(bucket_ > 0.0)) throw ConfigError("PointHash: bucket size must be > 0");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      buckets_[key(bucket_of(points_[i].x), bucket_of(points_[i].y))].push_back(static_cast<int>(i));
    }
  }

  const std::vector<Vec2>& points() const { return points_; }

  int nearest(const Vec2& q, double* dist_out = nullptr) const {
    const long long bx = bucket_of(q.x);
    const long long by = bucket_of(q.y);
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (long long r = 0;; ++r) {
      scan_ring(bx, by, r, q, best, best_d2);
      // Any point in a farther ring is at least (r)·bucket away.
      if (best >= 0 && best_d2 <= static_cast<double>(r) * bucket_ * static_cast<double>(r) * bucket_) {
        break;
      }
    }
    if (dist_out) *dist_out = std::sqrt(best_d2);
    return best;
  }

 private:
  static long long key(long long ix, long long iy) {
    return (ix << 32) | (iy & 0xffffffffLL);
  }
  long long bucket_of(double v) const { return static_cast<long long>(std::floor(v / bucket_)); }

  void scan_bucket(long long ix, long long iy, const Vec2& q, int& best, double& best_d2) const {
    const auto it = buckets_.find(key(ix, iy));
    if (it == buckets_.end()) return;
    for (int i : it->second) {
      const double dx = points_[static_cast<std::size_t>(i)].x - q.x;
      const double dy = points_[static_cast<std::size_t>(i)].y - q.y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
        best = i;
        best_d2 = d2;
      }
    }
  }

  void scan_ring(long long bx, long long by, long long r, const Vec2& q, int& best,
                 double& best_d2) const {
    if (r == 0) {
      scan_bucket(bx, by, q, best, best_d2);
      return;
    }
    for (long long ix = bx - r; ix <= bx + r; ++ix) {
      scan_bucket(ix, by - r, q, best, best_d2);
      scan_bucket(ix, by + r, q, best, best_d2);
    }
    for (long long iy = by - r + 1; iy <= by + r - 1; ++iy) {
      scan_bucket(bx - r, iy, q, best, best_d2);
      scan_bucket(bx + r, iy, q, best, best_d2);
    }
  }

  std::vector<Vec2> points_;
  double bucket_ = 0.0;
  std::unordered_map<long long, std::vector<int>> buckets_;
};

// One object's outline prepared for matching.
struct BoundaryModel {
  std::vector<Vec2> points;
  Vec2 centroid;
  PointHash hash;
};

inline BoundaryModel make_boundary_model(const Polygon& poly, double spacing) {
  BoundaryModel m;
  m.points = sample_boundary(poly, spacing);
  Vec2 c{0.0, 0.0};
  for (const Vec2& p : m.points) c = c + p;
  m.centroid = (1.0 / static_cast<double>(m.points.size())) * c;
  m.hash = PointHash(m.points, 5.0 * spacing);
  return m;
}

inline std::vector<BoundaryModel> make_boundary_models(const std::vector<Polygon>& objects,
                                                       double spacing) {
  std::vector<BoundaryModel> models;
  models.reserve(objects.size());
  for (const Polygon& poly : objects) models.push_back(make_boundary_model(poly, spacing));
  return models;
}

struct AlignResult {
  Pose2D pose;        // maps model-frame points onto the cloud's frame
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

namespace detail {

// Mean distance from each cloud point to its nearest model point under `pose`,
// plus the matched model index per cloud point. Distances are measured in the
// model frame via the inverse pose, which a rigid transform leaves unchanged.
inline double correspond(const std::vector<Vec2>& cloud, const BoundaryModel& model,
                         const Pose2D& pose, std::vector<int>& match) {
  const double c = std::cos(pose.rotation), s = std::sin(pose.rotation);
  match.resize(cloud.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double dx = cloud[i].x - pose.translation.x;
    const double dy = cloud[i].y - pose.translation.y;
    const Vec2 q{c * dx + s * dy, -s * dx + c * dy};  // inverse rotation
    double dist = 0.0;
    match[i] = model.hash.nearest(q, &dist);
    total += dist;
  }
  return total / static_cast<double>(cloud.size());
}

// Closed-form rigid fit mapping the matched model points onto the cloud.
inline Pose2D rigid_fit(const std::vector<Vec2>& cloud, const BoundaryModel& model,
                        const std::vector<int>& match) {
  Vec2 mbar{0.0, 0.0}, cbar{0.0, 0.0};
  const double inv_n = 1.0 / static_cast<double>(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    mbar = mbar + model.points[static_cast<std::size_t>(match[i])];
    cbar = cbar + cloud[i];
  }
  mbar = inv_n * mbar;
  cbar = inv_n * cbar;
  double sum_cross = 0.0, sum_dot = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec2 m = model.points[static_cast<std::size_t>(match[i])] - mbar;
    const Vec2 q = cloud[i] - cbar;
    sum_cross += cross(m, q);
    sum_dot += dot(m, q);
  }
  const double theta = (sum_cross == 0.0 && sum_dot == 0.0) ? 0.0 : std::atan2(sum_cross, sum_dot);
  Pose2D pose;
  pose.rotation = theta;
  const double c = std::cos(theta), s = std::sin(theta);
  pose.translation = {cbar.x - (c * mbar.x - s * mbar.y), cbar.y - (s * mbar.x + c * mbar.y)};
  return pose;
}

}  // namespace detail

// Iterate nearest-neighbor correspondence and closed-form rigid alignment from
// the given initial pose. Stops once an iteration fails to improve the mean
// residual by at least `tolerance`; a worsening step is discarded, so the
// recorded residual history never increases.
inline AlignResult icp_refine(const std::vector<Vec2>& cloud, const BoundaryModel& model,
                              const Pose2D& init_pose, const ICPConfig& cfg,
                              std::vector<double>* history = nullptr) {
  if (cloud.empty()) throw DataError("icp_align: empty point cloud");
  cfg.validate();

  AlignResult result;
  result.pose = init_pose;

  std::vector<int> match;
  result.residual = detail::correspond(cloud, model, result.pose, match);
  if (history) history->push_back(result.residual);

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const Pose2D candidate = detail::rigid_fit(cloud, model, match);
    std::vector<int> candidate_match;
    const double res = detail::correspond(cloud, model, candidate, candidate_match);
    if (res < result.residual) {
      const double improvement = result.residual - res;
      result.pose = candidate;
      result.residual = res;
      result.iterations = iter + 1;
      match = std::move(candidate_match);
      if (history) history->push_back(res);
      if (improvement < cfg.tolerance) break;
    } else {
      break;  // no improvement: keep the best pose seen
    }
  }
  return result;
}

namespace detail {

inline Vec2 centroid_of(const std::vector<Vec2>& points) {
  Vec2 c{0.0, 0.0};
  for (const Vec2& p : points) c = c + p;
  return (1.0 / static_cast<double>(points.size())) * c;
}

// Pose with the given rotation whose translation lands `model_point` (in the
// model frame) exactly on `target` (in the cloud frame).
inline Pose2D pin_point_pose(double angle, const Vec2& model_point, const Vec2& target) {
  const double c = std::cos(angle), s = std::sin(angle);
  Pose2D pose;
  pose.rotation = angle;
  pose.translation = {target.x - (c * model_point.x - s * model_point.y),
                      target.y - (s * model_point.x + c * model_point.y)};
  return pose;
}

}  // namespace detail

// Centroid-initialized alignment from one initial rotation: the model centroid
// starts on the cloud centroid.
inline AlignResult icp_align(const std::vector<Vec2>& cloud, const BoundaryModel& model,
                             double init_angle, const ICPConfig& cfg,
                             std::vector<double>* history = nullptr) {
  if (cloud.empty()) throw DataError("icp_align: empty point cloud");
  return icp_refine(cloud, model, detail::pin_point_pose(init_angle, model.centroid,
                                                         detail::centroid_of(cloud)),
                    cfg, history);
}

struct ICPOutcome {
  std::vector<double> best_error;  // per object, min over initial rotations
  std::vector<bool> matched;       // best_error < match_threshold
  Prediction prediction;
};

namespace detail {

// A partial outline trace can sit anywhere along an object's boundary, so a
// centroid-to-centroid start is off by up to the object radius and plain
// nearest-neighbor iteration often never recovers. Each initial rotation is
// therefore also tried with translations that pin evenly spaced boundary
// anchors onto the cloud centroid ("the trace lies here"); those extra starts
// are ranked by a single correspondence pass over a subsampled cloud and only
// the most promising few are refined.
constexpr int kAnchorsPerAngle = 16;
constexpr int kRefinedAnchorStarts = 6;
constexpr int kCoarseSampleCap = 48;

// Subset of at most kCoarseSampleCap points taken at a fixed stride over the
// coordinate-sorted cloud, so the choice ignores the cloud's point order.
inline std::vector<Vec2> coarse_sample(const std::vector<Vec2>& cloud) {
  std::vector<Vec2> sorted = cloud;
  std::sort(sorted.begin(), sorted.end(), [](const Vec2& a, const Vec2& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  if (sorted.size() <= static_cast<std::size_t>(kCoarseSampleCap)) return sorted;
  const std::size_t stride =
      (sorted.size() + static_cast<std::size_t>(kCoarseSampleCap) - 1) /
      static_cast<std::size_t>(kCoarseSampleCap);
  std::vector<Vec2> picked;
  for (std::size_t i = 0; i < sorted.size(); i += stride) picked.push_back(sorted[i]);
  return picked;
}

// Best residual over all starts for one model: every centroid start is refined
// in full, anchor starts compete for a few refinement slots.
inline double multi_start_best(const std::vector<Vec2>& cloud, const std::vector<Vec2>& sample,
                               const BoundaryModel& model, const ICPConfig& cfg) {
  const Vec2 cloud_centroid = centroid_of(cloud);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < cfg.init_angles; ++a) {
    const double angle = kTwoPi * static_cast<double>(a) / static_cast<double>(cfg.init_angles);
    const AlignResult r = icp_align(cloud, model, angle, cfg);
    best = std::min(best, r.residual);
  }

  struct Start {
    double score = std::numeric_limits<double>::infinity();
    Pose2D pose;
  };
  std::vector<Start> kept(static_cast<std::size_t>(kRefinedAnchorStarts));
  std::vector<int> scratch;
  const std::size_t model_n = model.points.size();
  for (int a = 0; a < cfg.init_angles; ++a) {
    const double angle = kTwoPi * static_cast<double>(a) / static_cast<double>(cfg.init_angles);
    for (int k = 0; k < kAnchorsPerAngle; ++k) {
      const Vec2& anchor =
          model.points[(static_cast<std::size_t>(k) * model_n) / kAnchorsPerAngle];
      const Pose2D pose = pin_point_pose(angle, anchor, cloud_centroid);
      const double score = correspond(sample, model, pose, scratch);
      // Insertion keeps the list sorted; strict comparison keeps earlier
      // starts on ties, so the outcome ignores the cloud's point order.
      std::size_t slot = kept.size();
      while (slot > 0 && score < kept[slot - 1].score) --slot;
      if (slot < kept.size()) {
        for (std::size_t j = kept.size() - 1; j > slot; --j) kept[j] = kept[j - 1];
        kept[slot] = {score, pose};
      }
    }
  }
  for (const Start& start : kept) {
    if (!std::isfinite(start.score)) continue;
    best = std::min(best, icp_refine(cloud, model, start.pose, cfg).residual);
  }
  return best;
}

}  // namespace detail

// Match the contact cloud against every object over a sweep of initial
// rotations (each with centroid and boundary-anchor translation starts);
// probability mass is spread uniformly over the matched objects, or over all
// objects when nothing matches (including the empty-cloud case).
inline ICPOutcome icp_discriminate_full(const std::vector<Vec2>& cloud,
                                        const std::vector<BoundaryModel>& models,
                                        const ICPConfig& cfg) {
  cfg.validate();
  if (models.empty()) throw ConfigError("icp: empty object set");
  const int n = static_cast<int>(models.size());
  ICPOutcome out;
  out.best_error.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  out.matched.assign(static_cast<std::size_t>(n), false);

  if (!cloud.empty()) {
    const std::vector<Vec2> sample = detail::coarse_sample(cloud);
    for (int o = 0; o < n; ++o) {
      const double best =
          detail::multi_start_best(cloud, sample, models[static_cast<std::size_t>(o)], cfg);
      out.best_error[static_cast<std::size_t>(o)] = best;
      out.matched[static_cast<std::size_t>(o)] = best < cfg.match_threshold;
    }
  }

  int match_count = 0;
  for (int o = 0; o < n; ++o) match_count += out.matched[static_cast<std::size_t>(o)] ? 1 : 0;
  out.prediction.distribution.assign(static_cast<std::size_t>(n), 0.0);
  if (match_count == 0) {
    std::fill(out.prediction.distribution.begin(), out.prediction.distribution.end(),
              1.0 / static_cast<double>(n));
  } else {
    for (int o = 0; o < n; ++o) {
      if (out.matched[static_cast<std::size_t>(o)]) {
        out.prediction.distribution[static_cast<std::size_t>(o)] =
            1.0 / static_cast<double>(match_count);
      }
    }
  }
  int best_label = 0;
  for (int o = 1; o < n; ++o) {
    if (out.prediction.distribution[static_cast<std::size_t>(o)] >
        out.prediction.distribution[static_cast<std::size_t>(best_label)]) {
      best_label = o;
    }
  }
  out.prediction.label = best_label;
  out.prediction.confidence = out.prediction.distribution[static_cast<std::size_t>(best_label)];
  return out;
}

inline Prediction icp_discriminate(const std::vector<Vec2>& cloud,
                                   const std::vector<BoundaryModel>& models,
                                   const ICPConfig& cfg) {
  return icp_discriminate_full(cloud, models, cfg).prediction;
}

// Per-episode wrapper that recomputes the match only when the grid's contact
// set has changed since the previous query.
class IcpPredictor {
 public:
  IcpPredictor(const std::vector<BoundaryModel>* models, ICPConfig cfg, double cell_size)
      : models_(models), cfg_(cfg), cell_size_(cell_size) {
    if (!models_ || models_->empty()) throw ConfigError("icp: empty object set");
    cfg_.validate();
  }

  const Prediction& predict(const GridEncoder& grid) {
    if (!cached_ || version_ != grid.contact_version()) {
      prediction_ = icp_discriminate(grid_to_pointcloud(grid, cell_size_), *models_, cfg_);
      version_ = grid.contact_version();
      cached_ = true;
    }
    return prediction_;
  }

  // Drop the cache at episode boundaries: a fresh grid restarts its contact
  // version at zero, which must not collide with the previous episode's.
  void invalidate() { cached_ = false; }

 private:
  const std::vector<BoundaryModel>* models_;
  ICPConfig cfg_;
  double cell_size_;
  bool cached_ = false;
  std::uint64_t version_ = 0;
  Prediction prediction_;
};

}  // namespace tact
