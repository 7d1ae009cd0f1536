#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "mapvec/align_scores.hpp"
#include "mapvec/core/error.hpp"
#include "mapvec/core/parallel.hpp"
#include "mapvec/core/rng.hpp"
#include "mapvec/geometry.hpp"
#include "mapvec/instance_mask.hpp"
#include "mapvec/temporal_fusion.hpp"

namespace mapvec {

inline constexpr std::size_t kPointsPerInstance = 20;

enum class RoadTemplate { straight, curve, intersection };

inline std::string_view template_name(RoadTemplate t) {
  switch (t) {
    case RoadTemplate::straight: return "straight";
    case RoadTemplate::curve: return "curve";
    case RoadTemplate::intersection: return "intersection";
  }
  return "unknown";
}

inline RoadTemplate parse_template(std::string_view name) {
  for (RoadTemplate t : {RoadTemplate::straight, RoadTemplate::curve, RoadTemplate::intersection}) {
    if (template_name(t) == name) return t;
  }
  throw ValidationError("unknown road template '" + std::string(name) + "'");
}

struct NoiseConfig {
  std::array<double, kNumClasses> sigma{0.2, 0.2, 0.2};  // per-point jitter in meters, by class index
  double dropout = 0.0;
  double spurious_rate = 0.0;  // expected spurious instances per GT instance
};

// score = clamp(q + score_noise * (1 - q) * z, 0, 1) with q the point score
// of the perturbed instance against its source and z ~ N(0, 1). Spurious
// instances draw their score from U[spurious_score_min, spurious_score_max].
struct ScoreModel {
  double score_noise = 0.05;
  double spurious_score_min = 0.05;
  double spurious_score_max = 0.5;
};

struct BevSynthConfig {
  std::size_t channels = 4;
  std::size_t height = 200;
  std::size_t width = 100;
  double cell_size = 0.3;
  double bump_sigma = 1.5;     // meters
  double noise_amplitude = 0.05;
};

struct ScenarioConfig {
  std::uint64_t seed = 42;
  std::size_t num_frames = 10;
  RoadTemplate road_template = RoadTemplate::straight;
  std::size_t lane_count = 2;
  double lane_width = 3.5;
  double ego_speed = 2.0;  // meters per frame
  double frame_interval_s = 0.5;
  NoiseConfig noise;
  ScoreModel score_model;
  BevSynthConfig bev;
  BevExtent extent;

  void validate() const {
    require(num_frames >= 1, "scenario: num_frames must be at least 1");
    require(lane_count >= 1 && lane_count <= 8, "scenario: lane_count must lie in [1, 8]");
    require(lane_width > 0.0 && std::isfinite(lane_width), "scenario: lane_width must be positive");
    require(ego_speed >= 0.0 && std::isfinite(ego_speed), "scenario: ego_speed must be >= 0");
    require(frame_interval_s > 0.0, "scenario: frame interval must be positive");
    for (double s : noise.sigma) require(s >= 0.0 && std::isfinite(s), "scenario: noise sigma must be >= 0");
    require(noise.dropout >= 0.0 && noise.dropout <= 1.0, "scenario: dropout must lie in [0,1]");
    require(noise.spurious_rate >= 0.0 && noise.spurious_rate <= 1.0, "scenario: spurious rate must lie in [0,1]");
    require(score_model.score_noise >= 0.0, "scenario: score noise must be >= 0");
    require(score_model.spurious_score_min >= 0.0 && score_model.spurious_score_min <= score_model.spurious_score_max &&
                score_model.spurious_score_max <= 1.0,
            "scenario: spurious score range must lie in [0,1]");
    require(bev.channels >= 1 && bev.height > 0 && bev.width > 0 && bev.cell_size > 0.0, "scenario: bad BEV shape");
    require(bev.bump_sigma > 0.0 && bev.noise_amplitude >= 0.0, "scenario: bad BEV field parameters");
    extent.validate();
  }
};

// Independent stream seeds: splitmix64 of (seed, stream, index).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream * 0x100000001ULL + index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kStreamWorld = 1, kStreamPerturb = 2, kStreamBev = 3 };

// Resamples a polyline (or ring, when closed) to n points equally spaced
// by arc length. Open polylines keep both endpoints; rings start at the
// first vertex and do not repeat it.
inline Polyline resample(std::span<const Point2> pts, bool closed, std::size_t n) {
  require(pts.size() >= 2 && n >= 2, "resample: need at least 2 points");
  std::vector<Point2> path(pts.begin(), pts.end());
  if (closed) path.push_back(pts.front());
  std::vector<double> cum(path.size(), 0.0);
  for (std::size_t i = 1; i < path.size(); ++i) cum[i] = cum[i - 1] + distance(path[i - 1], path[i]);
  const double total = cum.back();
  Polyline out;
  out.reserve(n);
  if (total == 0.0) {
    out.assign(n, path.front());
    return out;
  }
  const double step = total / static_cast<double>(closed ? n : n - 1);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double target = std::min(total, step * static_cast<double>(k));
    while (seg + 2 < path.size() && cum[seg + 1] < target) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double a = len > 0.0 ? (target - cum[seg]) / len : 0.0;
    out.push_back(path[seg] + a * (path[seg + 1] - path[seg]));
  }
  if (!closed) out.back() = path.back();
  return out;
}

// A map element in world coordinates, densely sampled.
struct WorldElement {
  MapClass class_id = MapClass::lane_divider;
  Polyline points;
  bool closed = false;
};

struct EgoTrajectory {
  std::vector<Pose2> poses;
  std::vector<double> timestamps;
};

namespace detail {

inline constexpr double kDenseStep = 0.5;

inline Polyline dense_line(Point2 a, Point2 b) {
  const double len = distance(a, b);
  const std::size_t n = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(len / kDenseStep)) + 1);
  Polyline out;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    out.push_back(a + t * (b - a));
  }
  return out;
}

inline WorldElement crossing(Point2 c0, Point2 c1, Point2 c2, Point2 c3) {
  return {MapClass::pedestrian_crossing, {c0, c1, c2, c3}, true};
}

inline MapClass line_class(std::size_t k, std::size_t lane_count) {
  return (k == 0 || k == lane_count) ? MapClass::road_boundary : MapClass::lane_divider;
}

// Lateral offsets of the road lines, left to right, centred on the road axis.
inline std::vector<double> line_offsets(const ScenarioConfig& cfg) {
  std::vector<double> out;
  const double half = 0.5 * static_cast<double>(cfg.lane_count) * cfg.lane_width;
  for (std::size_t k = 0; k <= cfg.lane_count; ++k) out.push_back(-half + static_cast<double>(k) * cfg.lane_width);
  return out;
}

inline double route_length(const ScenarioConfig& cfg) {
  return cfg.ego_speed * static_cast<double>(cfg.num_frames);
}

inline constexpr double kCrossingDepth = 4.0;
inline constexpr double kMargin = 60.0;

}  // namespace detail

// Road network in world coordinates. The ego starts at the origin heading
// along world +y (yaw 0, ego +y is forward). Crossing positions are drawn
// from the world stream of the seed.
inline std::vector<WorldElement> build_world(const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng(stream_seed(cfg.seed, kStreamWorld, 0));
  const auto offsets = detail::line_offsets(cfg);
  const double half = -offsets.front();
  const double y_start = -detail::kMargin;
  const double y_end = detail::route_length(cfg) + detail::kMargin;
  std::vector<WorldElement> world;

  auto add_crossing_across_y = [&](double y0, double x_lo, double x_hi) {
    world.push_back(detail::crossing({x_lo, y0}, {x_hi, y0}, {x_hi, y0 + detail::kCrossingDepth},
                                     {x_lo, y0 + detail::kCrossingDepth}));
  };

  switch (cfg.road_template) {
    case RoadTemplate::straight: {
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        world.push_back({detail::line_class(k, cfg.lane_count),
                         detail::dense_line({offsets[k], y_start}, {offsets[k], y_end}), false});
      }
      for (double y = rng.uniform(10.0, 20.0); y < y_end; y += rng.uniform(40.0, 60.0)) {
        add_crossing_across_y(y, -half, half);
      }
      break;
    }
    case RoadTemplate::curve: {
      // Left-hand arc: centre(s) = (R (cos(s/R) - 1), R sin(s/R)), heading yaw = s/R.
      const double radius = rng.uniform(60.0, 120.0);
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        Polyline line;
        for (double s = y_start; s <= y_end + 1e-9; s += detail::kDenseStep) {
          const double yaw = s / radius;
          line.push_back({radius * (std::cos(yaw) - 1.0) + offsets[k] * std::cos(yaw),
                          radius * std::sin(yaw) + offsets[k] * std::sin(yaw)});
        }
        world.push_back({detail::line_class(k, cfg.lane_count), std::move(line), false});
      }
      break;
    }
    case RoadTemplate::intersection: {
      // A crossing road along world x centred at y = yc; lines stop at the
      // junction box, crossings sit on all four arms.
      const double yc = rng.uniform(15.0, 25.0);
      const double gap = half + 2.0;
      const double x_far = 80.0;
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        const MapClass cls = detail::line_class(k, cfg.lane_count);
        world.push_back({cls, detail::dense_line({offsets[k], y_start}, {offsets[k], yc - gap}), false});
        world.push_back({cls, detail::dense_line({offsets[k], yc + gap}, {offsets[k], y_end}), false});
        world.push_back({cls, detail::dense_line({-x_far, yc + offsets[k]}, {-gap, yc + offsets[k]}), false});
        world.push_back({cls, detail::dense_line({gap, yc + offsets[k]}, {x_far, yc + offsets[k]}), false});
      }
      const double d = detail::kCrossingDepth;
      add_crossing_across_y(yc - gap - d - 1.0, -half, half);
      add_crossing_across_y(yc + gap + 1.0, -half, half);
      world.push_back(detail::crossing({-gap - 1.0 - d, yc - half}, {-gap - 1.0, yc - half},
                                       {-gap - 1.0, yc + half}, {-gap - 1.0 - d, yc + half}));
      world.push_back(detail::crossing({gap + 1.0, yc - half}, {gap + 1.0 + d, yc - half},
                                       {gap + 1.0 + d, yc + half}, {gap + 1.0, yc + half}));
      break;
    }
  }
  return world;
}

// Ego poses along the road axis, ego_speed meters apart.
inline EgoTrajectory build_trajectory(const ScenarioConfig& cfg) {
  cfg.validate();
  EgoTrajectory traj;
  double radius = 0.0;
  if (cfg.road_template == RoadTemplate::curve) {
    // Same draw as build_world so the ego follows the generated arc.
    Rng rng(stream_seed(cfg.seed, kStreamWorld, 0));
    radius = rng.uniform(60.0, 120.0);
  }
  for (std::size_t f = 0; f < cfg.num_frames; ++f) {
    const double s = cfg.ego_speed * static_cast<double>(f);
    Pose2 pose{0.0, s, 0.0};
    if (cfg.road_template == RoadTemplate::curve) {
      const double yaw = s / radius;
      pose = {radius * (std::cos(yaw) - 1.0), radius * std::sin(yaw), normalize_angle(yaw)};
    }
    traj.poses.push_back(pose);
    traj.timestamps.push_back(cfg.frame_interval_s * static_cast<double>(f));
  }
  return traj;
}

namespace detail {
inline bool inside(const BevExtent& e, Point2 p) {
  return p.x >= e.x_min && p.x <= e.x_max && p.y >= e.y_min && p.y <= e.y_max;
}
inline constexpr double kMinVisibleLength = 2.0;
}  // namespace detail

// Projects the world map into one ego frame: polylines are clipped to the
// BEV extent (each maximal inside run of at least 2 m becomes an instance),
// rings are kept only when fully inside. Every instance is resampled to
// kPointsPerInstance points.
inline std::vector<MapInstance> observe(const std::vector<WorldElement>& world, const Pose2& ego,
                                        const BevExtent& extent) {
  std::vector<MapInstance> out;
  for (const auto& el : world) {
    Polyline local;
    local.reserve(el.points.size());
    for (const auto& p : el.points) local.push_back(inverse_transform_point(ego, p));
    if (el.closed) {
      if (std::all_of(local.begin(), local.end(), [&](Point2 p) { return detail::inside(extent, p); })) {
        out.push_back({el.class_id, resample(local, true, kPointsPerInstance), true, 1.0});
      }
      continue;
    }
    Polyline run;
    auto flush = [&]() {
      if (run.size() >= 2) {
        double len = 0.0;
        for (std::size_t i = 1; i < run.size(); ++i) len += distance(run[i - 1], run[i]);
        if (len >= detail::kMinVisibleLength) {
          out.push_back({el.class_id, resample(run, false, kPointsPerInstance), false, 1.0});
        }
      }
      run.clear();
    };
    for (const auto& p : local) {
      if (detail::inside(extent, p)) {
        run.push_back(p);
      } else {
        flush();
      }
    }
    flush();
  }
  return out;
}

inline std::vector<MapFrame> generate_gt(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto world = build_world(cfg);
  const auto traj = build_trajectory(cfg);
  std::vector<MapFrame> frames(cfg.num_frames);
  parallel_for(cfg.num_frames, [&](std::size_t f) {
    frames[f].timestamp_s = traj.timestamps[f];
    frames[f].ego_pose = traj.poses[f];
    frames[f].instances = observe(world, traj.poses[f], cfg.extent);
  });
  return frames;
}

namespace detail {
inline MapInstance spurious_instance(Rng& rng, const BevExtent& e, const ScoreModel& sm) {
  const MapClass cls = rng.bernoulli(0.5) ? MapClass::lane_divider : MapClass::road_boundary;
  const double margin = 1.0;
  const Point2 start{rng.uniform(e.x_min + margin, e.x_max - margin), rng.uniform(e.y_min + margin, e.y_max - margin)};
  const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double length = rng.uniform(5.0, 20.0);
  Point2 end{start.x + length * std::cos(heading), start.y + length * std::sin(heading)};
  end.x = std::clamp(end.x, e.x_min, e.x_max);
  end.y = std::clamp(end.y, e.y_min, e.y_max);
  if (end == start) end.y = std::clamp(start.y + 1.0, e.y_min, e.y_max);
  MapInstance inst{cls, resample(std::vector<Point2>{start, end}, false, kPointsPerInstance), false, 0.0};
  inst.score = rng.uniform(sm.spurious_score_min, sm.spurious_score_max);
  return inst;
}
}  // namespace detail

// Noisy predictions for one GT frame. Random draws per GT instance, in
// order: dropout, then x/y jitter per point, then the score noise. Spurious
// instances are appended after all GT-derived ones.
inline MapFrame perturb(const MapFrame& gt, const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  MapFrame out;
  out.timestamp_s = gt.timestamp_s;
  out.ego_pose = gt.ego_pose;
  for (const auto& g : gt.instances) {
    g.validate();
    if (rng.bernoulli(cfg.noise.dropout)) continue;
    MapInstance p = g;
    const double sigma = cfg.noise.sigma[class_index(g.class_id)];
    for (auto& pt : p.points) {
      pt.x += sigma * rng.normal();
      pt.y += sigma * rng.normal();
    }
    const double q = gcs_p2p(normalize_points(p, cfg.extent), normalize_points(g, cfg.extent));
    const double z = rng.normal();
    p.score = std::clamp(q + cfg.score_model.score_noise * (1.0 - q) * z, 0.0, 1.0);
    out.instances.push_back(std::move(p));
  }
  for (std::size_t k = 0; k < gt.instances.size(); ++k) {
    if (rng.bernoulli(cfg.noise.spurious_rate)) {
      out.instances.push_back(detail::spurious_instance(rng, cfg.extent, cfg.score_model));
    }
  }
  return out;
}

inline std::vector<MapFrame> perturb_all(const std::vector<MapFrame>& gt, const ScenarioConfig& cfg) {
  std::vector<MapFrame> out(gt.size());
  parallel_for(gt.size(), [&](std::size_t f) { out[f] = perturb(gt[f], cfg, stream_seed(cfg.seed, kStreamPerturb, f)); });
  return out;
}

// Synthetic BEV features for one ego frame.
//   channel 0: binary occupancy of the rasterized map elements;
//   channel c > 0: sum over instance points of w_c(class) * exp(-d^2 / 2 sigma^2),
//     truncated at 3 sigma, plus noise_amplitude * (sum of three plane waves
//     with wavelengths in [20, 60] m, phased in world coordinates).
// Class weights and waves depend only on `seed`, so a static scene looks the
// same from every frame.
inline BevGrid generate_bev(const MapFrame& frame, const BevSynthConfig& bc, std::uint64_t seed) {
  require(bc.channels >= 1, "generate_bev: need at least one channel");
  BevGrid grid(bc.height, bc.width, bc.channels, bc.cell_size);
  grid.pose = frame.ego_pose;
  grid.timestamp_s = frame.timestamp_s;
  const BevExtent extent = grid.extent();

  Rng rng(seed);
  std::vector<std::array<double, kNumClasses>> class_weight(bc.channels);
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<std::array<Wave, 3>> waves(bc.channels);
  for (std::size_t ch = 1; ch < bc.channels; ++ch) {
    for (double& w : class_weight[ch]) w = rng.uniform(0.5, 1.5);
    for (auto& wave : waves[ch]) {
      const double lambda = rng.uniform(20.0, 60.0);
      const double dir = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double k = 2.0 * std::numbers::pi / lambda;
      wave = {k * std::cos(dir), k * std::sin(dir), rng.uniform(0.0, 2.0 * std::numbers::pi)};
    }
  }

  for (const auto& inst : frame.instances) {
    const auto mask = rasterize_instance(inst, extent, bc.height, bc.width);
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      if (mask.values[i] > 0.0) grid.data[i * bc.channels] = 1.0;
    }
  }
  if (bc.channels == 1) return grid;

  const double reach = 3.0 * bc.bump_sigma;
  const double inv2s2 = 1.0 / (2.0 * bc.bump_sigma * bc.bump_sigma);
  const double half_w = 0.5 * static_cast<double>(bc.width);
  const double half_h = 0.5 * static_cast<double>(bc.height);
  parallel_for(bc.height, [&](std::size_t r) {
    const double y = (static_cast<double>(r) + 0.5 - half_h) * bc.cell_size;
    for (std::size_t c = 0; c < bc.width; ++c) {
      const double x = (static_cast<double>(c) + 0.5 - half_w) * bc.cell_size;
      auto cell = grid.cell(r, c);
      for (const auto& inst : frame.instances) {
        const auto& w = class_weight;
        const std::size_t ci = class_index(inst.class_id);
        for (const auto& p : inst.points) {
          const double dx = x - p.x, dy = y - p.y;
          if (std::abs(dx) > reach || std::abs(dy) > reach) continue;
          const double d2 = dx * dx + dy * dy;
          if (d2 > reach * reach) continue;
          const double g = std::exp(-d2 * inv2s2);
          for (std::size_t ch = 1; ch < bc.channels; ++ch) cell[ch] += w[ch][ci] * g;
        }
      }
      if (bc.noise_amplitude > 0.0) {
        const Point2 world = transform_point(frame.ego_pose, {x, y});
        for (std::size_t ch = 1; ch < bc.channels; ++ch) {
          double n = 0.0;
          for (const auto& wave : waves[ch]) n += std::sin(wave.kx * world.x + wave.ky * world.y + wave.phase);
          cell[ch] += bc.noise_amplitude * n;
        }
      }
    }
  });
  return grid;
}

struct Scenario {
  std::vector<MapFrame> gt;
  std::vector<MapFrame> pred;
  std::vector<BevGrid> bev;
};

inline Scenario generate_scenario(const ScenarioConfig& cfg) {
  Scenario s;
  s.gt = generate_gt(cfg);
  s.pred = perturb_all(s.gt, cfg);
  const std::uint64_t bev_seed = stream_seed(cfg.seed, kStreamBev, 0);
  for (const auto& f : s.gt) s.bev.push_back(generate_bev(f, cfg.bev, bev_seed));
  return s;
}

}  // namespace mapvec
