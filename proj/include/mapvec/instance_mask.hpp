#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <vector>

#include "mapvec/align_scores.hpp"
#include "mapvec/core/error.hpp"
#include "mapvec/core/matrix.hpp"
#include "mapvec/geometry.hpp"
#include "mapvec/temporal_fusion.hpp"

namespace mapvec {

// H x W grid of probabilities (or binary targets), row-major.
struct InstanceMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t instance = 0;
  std::vector<double> values;

  InstanceMask() = default;
  InstanceMask(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), values(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t count_nonzero() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](double v) { return v != 0.0; }));
  }
  bool same_shape(const InstanceMask& o) const { return height == o.height && width == o.width; }
};

// Two-layer perceptron: fc2(relu(fc1(q))).
struct MaskMlpWeights {
  Linear fc1;
  Linear fc2;
};

// sigmoid(MLP(q_i) . F_bev) per cell, for every query row.
inline std::vector<InstanceMask> project_masks(const Matrix& queries, const MaskMlpWeights& w,
                                               const BevGrid& f_bev) {
  f_bev.validate();
  require(w.fc1.in_features() == queries.cols(), "mask MLP input width mismatch");
  require(w.fc2.in_features() == w.fc1.out_features(), "mask MLP hidden width mismatch");
  require(w.fc2.out_features() == f_bev.channels, "mask MLP output width must equal BEV channels");
  std::vector<InstanceMask> masks;
  masks.reserve(queries.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    auto hidden = w.fc1.apply(queries.row(q));
    for (double& h : hidden) h = relu(h);
    const auto embed = w.fc2.apply(hidden);
    InstanceMask m(f_bev.height, f_bev.width);
    m.instance = q;
    for (std::size_t r = 0; r < f_bev.height; ++r) {
      for (std::size_t c = 0; c < f_bev.width; ++c) {
        const auto feat = f_bev.cell(r, c);
        double acc = 0.0;
        for (std::size_t ch = 0; ch < feat.size(); ++ch) acc += embed[ch] * feat[ch];
        m.at(r, c) = sigmoid(acc);
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

namespace detail {
inline void check_mask_pair(const InstanceMask& pred, const InstanceMask& target) {
  require(pred.same_shape(target), "mask shape mismatch");
  require(!pred.values.empty(), "empty mask");
}
}  // namespace detail

// Mean over cells of the geometry-aware focal loss: foreground cells use
// s * CE(p; s), background cells alpha * p^gamma * CE(p; 0).
inline double mask_gfl(const InstanceMask& pred, const InstanceMask& target, double s_geo,
                       const FocalParams& fp) {
  detail::check_mask_pair(pred, target);
  detail::check_unit_interval(s_geo, "mask geometry score");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    detail::check_unit_interval(pred.values[i], "mask probability");
    total += target.values[i] > 0.5 ? gfl_positive(pred.values[i], s_geo) : gfl_negative(pred.values[i], fp);
  }
  return total / static_cast<double>(pred.values.size());
}

// d mask_gfl / d p for every cell.
inline std::vector<double> mask_gfl_grad(const InstanceMask& pred, const InstanceMask& target,
                                         double s_geo, const FocalParams& fp) {
  detail::check_mask_pair(pred, target);
  const double n = static_cast<double>(pred.values.size());
  std::vector<double> g(pred.values.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (target.values[i] > 0.5 ? gfl_positive_grad(pred.values[i], s_geo)
                                   : gfl_negative_grad(pred.values[i], fp)) / n;
  }
  return g;
}

// Mean over cells of the pairwise matching cost between a predicted mask and
// a target: foreground cells contribute gfc(p, s), background cells the
// negative branch alpha * p^gamma * (-ln(1 - p)) as a penalty.
inline double mask_gfc(const InstanceMask& pred, const InstanceMask& target, double s_geo,
                       const FocalParams& fp) {
  detail::check_mask_pair(pred, target);
  detail::check_unit_interval(s_geo, "mask geometry score");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    total += target.values[i] > 0.5 ? gfc(pred.values[i], s_geo, fp) : gfl_negative(pred.values[i], fp);
  }
  return total / static_cast<double>(pred.values.size());
}

inline constexpr double kDiceSmoothing = 1.0;

// 1 - 2 sum(p t) / (sum p + sum t + 1).
inline double dice_loss(const InstanceMask& pred, const InstanceMask& target) {
  detail::check_mask_pair(pred, target);
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    inter += pred.values[i] * target.values[i];
    sp += pred.values[i];
    st += target.values[i];
  }
  return 1.0 - 2.0 * inter / (sp + st + kDiceSmoothing);
}

// Binary target mask of one instance on an H x W grid covering `extent`
// (rows along y, columns along x). Polylines are drawn as 1-cell Bresenham
// strokes, closed rings are filled by an even-odd scanline test at cell
// centres. Cells outside the grid are dropped.
inline InstanceMask rasterize_instance(const MapInstance& inst, const BevExtent& extent,
                                       std::size_t height, std::size_t width) {
  extent.validate();
  require(height > 0 && width > 0, "rasterize: empty grid");
  InstanceMask mask(height, width);
  const double sx = static_cast<double>(width) / extent.width();
  const double sy = static_cast<double>(height) / extent.height();

  if (inst.closed) {
    const auto& pts = inst.points;
    for (std::size_t r = 0; r < height; ++r) {
      const double yc = extent.y_min + (static_cast<double>(r) + 0.5) / sy;
      std::vector<double> crossings;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        const Point2 a = pts[k];
        const Point2 b = pts[(k + 1) % pts.size()];
        if ((a.y <= yc) != (b.y <= yc)) {
          crossings.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
      }
      std::sort(crossings.begin(), crossings.end());
      for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
        for (std::size_t c = 0; c < width; ++c) {
          const double xc = extent.x_min + (static_cast<double>(c) + 0.5) / sx;
          if (xc >= crossings[k] && xc < crossings[k + 1]) mask.at(r, c) = 1.0;
        }
      }
    }
    return mask;
  }

  auto to_cell = [&](Point2 p) {
    auto index = [](double v) { return static_cast<long>(std::clamp(std::floor(v), -1e9, 1e9)); };
    return std::pair<long, long>{index((p.x - extent.x_min) * sx), index((p.y - extent.y_min) * sy)};
  };
  auto plot = [&](long cx, long cy) {
    if (cx >= 0 && cy >= 0 && cx < static_cast<long>(width) && cy < static_cast<long>(height)) {
      mask.at(static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)) = 1.0;
    }
  };
  for (std::size_t k = 0; k + 1 < inst.points.size(); ++k) {
    auto [x0, y0] = to_cell(inst.points[k]);
    const auto [x1, y1] = to_cell(inst.points[k + 1]);
    const long W = static_cast<long>(width), H = static_cast<long>(height);
    if ((x0 < 0 && x1 < 0) || (y0 < 0 && y1 < 0) || (x0 >= W && x1 >= W) || (y0 >= H && y1 >= H)) {
      continue;
    }
    const long dx = std::abs(x1 - x0), sx_step = x0 < x1 ? 1 : -1;
    const long dy = -std::abs(y1 - y0), sy_step = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      plot(x0, y0);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx_step;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy_step;
      }
    }
  }
  return mask;
}

}  // namespace mapvec
