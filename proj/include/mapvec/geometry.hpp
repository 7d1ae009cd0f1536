#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mapvec/core/error.hpp"

namespace mapvec {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline double manhattan(Point2 a, Point2 b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

// Cosine of the angle between two vectors; zero when either is degenerate.
inline double cosine_similarity(Point2 a, Point2 b) {
  // sqrt of the product keeps cos(a, a) exactly 1.
  const double aa = dot(a, a);
  const double bb = dot(b, b);
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / std::sqrt(aa * bb), -1.0, 1.0);
}

using Polyline = std::vector<Point2>;

enum class MapClass { pedestrian_crossing = 0, lane_divider = 1, road_boundary = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<MapClass, kNumClasses> kAllClasses = {
    MapClass::pedestrian_crossing, MapClass::lane_divider, MapClass::road_boundary};

inline std::string_view class_name(MapClass c) {
  switch (c) {
    case MapClass::pedestrian_crossing: return "pedestrian_crossing";
    case MapClass::lane_divider: return "lane_divider";
    case MapClass::road_boundary: return "road_boundary";
  }
  return "unknown";
}

inline MapClass parse_class(std::string_view name) {
  for (MapClass c : kAllClasses) {
    if (class_name(c) == name) return c;
  }
  throw ValidationError("unknown map class '" + std::string(name) + "'");
}

inline std::size_t class_index(MapClass c) { return static_cast<std::size_t>(c); }

// Per-class predicted probabilities, indexed by class_index().
using ClassProbs = std::array<double, kNumClasses>;

// One vectorized map element. Closed instances do not repeat the first point.
struct MapInstance {
  MapClass class_id = MapClass::lane_divider;
  Polyline points;
  bool closed = false;
  double score = 1.0;

  void validate() const {
    require(points.size() >= 2, "map instance needs at least 2 points");
    for (const auto& p : points) {
      require(std::isfinite(p.x) && std::isfinite(p.y),
              "map instance coordinates must be finite");
    }
    require(score >= 0.0 && score <= 1.0, "map instance score must lie in [0,1]");
  }

  friend bool operator==(const MapInstance&, const MapInstance&) = default;
};

struct BevExtent {
  double x_min = -15.0;
  double x_max = 15.0;
  double y_min = -30.0;
  double y_max = 30.0;

  void validate() const {
    require(x_min < x_max && y_min < y_max, "degenerate BEV extent");
  }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  friend bool operator==(const BevExtent&, const BevExtent&) = default;
};

struct Box2D {
  Point2 min;
  Point2 max;

  double area() const {
    return std::max(0.0, max.x - min.x) * std::max(0.0, max.y - min.y);
  }
};

// Planar rigid pose. Maps local coordinates p to parent coordinates
// R(yaw) p + (x, y).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  friend bool operator==(const Pose2&, const Pose2&) = default;
};

// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

inline Point2 transform_point(const Pose2& pose, Point2 p) {
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  return {c * p.x - s * p.y + pose.x, s * p.x + c * p.y + pose.y};
}

inline Point2 inverse_transform_point(const Pose2& pose, Point2 p) {
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  const double dx = p.x - pose.x;
  const double dy = p.y - pose.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Pose2 compose(const Pose2& a, const Pose2& b) {
  const Point2 t = transform_point(a, {b.x, b.y});
  return {t.x, t.y, normalize_angle(a.yaw + b.yaw)};
}

inline Pose2 inverse(const Pose2& pose) {
  const Point2 t = inverse_transform_point(pose, {0.0, 0.0});
  return {t.x, t.y, normalize_angle(-pose.yaw)};
}

// Pose that maps coordinates expressed in the `source` ego frame into the
// `target` ego frame, both poses given in the world frame.
inline Pose2 relative_pose(const Pose2& source, const Pose2& target) {
  return compose(inverse(target), source);
}

struct MapFrame {
  double timestamp_s = 0.0;
  Pose2 ego_pose;
  std::vector<MapInstance> instances;

  friend bool operator==(const MapFrame&, const MapFrame&) = default;
};

// Affine map of the instance into [0,1]^2, clamping points outside the extent.
inline Polyline normalize_points(std::span<const Point2> points, const BevExtent& extent) {
  extent.validate();
  Polyline out;
  out.reserve(points.size());
  for (const auto& p : points) {
    out.push_back({std::clamp((p.x - extent.x_min) / extent.width(), 0.0, 1.0),
                   std::clamp((p.y - extent.y_min) / extent.height(), 0.0, 1.0)});
  }
  return out;
}

inline Polyline normalize_points(const MapInstance& inst, const BevExtent& extent) {
  return normalize_points(inst.points, extent);
}

namespace detail {
inline double directed_mean_min(std::span<const Point2> from, std::span<const Point2> to) {
  double total = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, distance(p, q));
    total += best;
  }
  return total / static_cast<double>(from.size());
}
}  // namespace detail

// Symmetric chamfer distance: the average of both directed mean
// nearest-neighbour distances.
inline double chamfer_distance(std::span<const Point2> a, std::span<const Point2> b) {
  require(!a.empty() && !b.empty(), "chamfer_distance: empty point list");
  return 0.5 * (detail::directed_mean_min(a, b) + detail::directed_mean_min(b, a));
}

struct EdgeSet {
  std::vector<Point2> directions;  // unit vectors, zero for degenerate edges
  std::vector<bool> degenerate;

  std::size_t size() const { return directions.size(); }
  bool any_degenerate() const {
    return std::find(degenerate.begin(), degenerate.end(), true) != degenerate.end();
  }
};

// Unit edge directions; closed rings include the wrap-around edge.
inline EdgeSet edge_directions(std::span<const Point2> points, bool closed) {
  require(points.size() >= 2, "edge_directions: need at least 2 points");
  const std::size_t n = points.size();
  const std::size_t edges = closed ? n : n - 1;
  EdgeSet out;
  out.directions.reserve(edges);
  out.degenerate.reserve(edges);
  for (std::size_t i = 0; i < edges; ++i) {
    const Point2 d = points[(i + 1) % n] - points[i];
    const double len = norm(d);
    if (len == 0.0) {
      out.directions.push_back({0.0, 0.0});
      out.degenerate.push_back(true);
    } else {
      out.directions.push_back({d.x / len, d.y / len});
      out.degenerate.push_back(false);
    }
  }
  return out;
}

inline EdgeSet edge_directions(const MapInstance& inst) {
  return edge_directions(inst.points, inst.closed);
}

inline Box2D enclosing_box(std::span<const Point2> points) {
  require(!points.empty(), "enclosing_box: empty point list");
  Box2D box{points.front(), points.front()};
  for (const auto& p : points) {
    box.min.x = std::min(box.min.x, p.x);
    box.min.y = std::min(box.min.y, p.y);
    box.max.x = std::max(box.max.x, p.x);
    box.max.y = std::max(box.max.y, p.y);
  }
  return box;
}

inline Box2D enclosing_box(const MapInstance& inst) { return enclosing_box(inst.points); }

namespace detail {
// GIoU of two intervals on a line.
inline double interval_giou(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = (a1 - a0) + (b1 - b0) - inter;
  const double hull = std::max(a1, b1) - std::min(a0, b0);
  if (hull <= 0.0) return 1.0;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  return iou - (hull - uni) / hull;
}
}  // namespace detail

// Generalized IoU: IoU - (hull \ union) / hull. Zero-area boxes count as
// area 0. When the hull itself has zero area (both boxes on one axis-aligned
// line, e.g. two straight lane lines) the interval GIoU along that line is
// returned.
inline double giou(const Box2D& a, const Box2D& b) {
  const double hull_w = std::max(a.max.x, b.max.x) - std::min(a.min.x, b.min.x);
  const double hull_h = std::max(a.max.y, b.max.y) - std::min(a.min.y, b.min.y);
  if (hull_w <= 0.0) return detail::interval_giou(a.min.y, a.max.y, b.min.y, b.max.y);
  if (hull_h <= 0.0) return detail::interval_giou(a.min.x, a.max.x, b.min.x, b.max.x);
  const double ix = std::max(0.0, std::min(a.max.x, b.max.x) - std::max(a.min.x, b.min.x));
  const double iy = std::max(0.0, std::min(a.max.y, b.max.y) - std::max(a.min.y, b.min.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  const double hull = hull_w * hull_h;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  return std::clamp(iou - (hull - uni) / hull, -1.0, 1.0);
}

// All orderings describing the same geometric element: forward and reversed
// for polylines; every cyclic shift of both directions for closed rings.
// Order of the result: forward shifts 0..n-1, then reversed shifts 0..n-1.
inline std::vector<Polyline> equivalent_orderings(std::span<const Point2> points, bool closed) {
  const std::size_t n = points.size();
  Polyline forward(points.begin(), points.end());
  Polyline reversed(forward.rbegin(), forward.rend());
  std::vector<Polyline> out;
  if (!closed) {
    out.push_back(std::move(forward));
    out.push_back(std::move(reversed));
    return out;
  }
  out.reserve(2 * n);
  for (const Polyline* base : {&forward, &reversed}) {
    for (std::size_t shift = 0; shift < n; ++shift) {
      Polyline p(n);
      for (std::size_t i = 0; i < n; ++i) p[i] = (*base)[(i + shift) % n];
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline std::vector<Polyline> equivalent_orderings(const MapInstance& inst) {
  return equivalent_orderings(inst.points, inst.closed);
}

}  // namespace mapvec
