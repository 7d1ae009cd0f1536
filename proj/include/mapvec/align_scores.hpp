#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mapvec/core/error.hpp"
#include "mapvec/geometry.hpp"

namespace mapvec {

// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any logarithm.
inline constexpr double kProbEps = 1e-6;

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;

  void validate() const {
    require(std::isfinite(alpha) && alpha >= 0.0, "focal alpha must be finite and >= 0");
    require(std::isfinite(gamma) && gamma >= 0.0, "focal gamma must be finite and >= 0");
  }
};

enum class GcsCombine { product, mean };

struct GcsConfig {
  bool use_p2p = true;
  bool use_dir = true;
  bool use_giou = false;
  GcsCombine combine = GcsCombine::product;

  void validate() const {
    require(use_p2p || use_dir || use_giou, "at least one geometry score must be enabled");
  }
};

struct LossWeights {
  double lambda_cls = 2.0;
  double lambda_p2p = 4.0;
  double lambda_dir = 0.005;
  double lambda_mgf = 30.0;
  double lambda_dice = 3.0;

  void validate() const {
    for (double w : {lambda_cls, lambda_p2p, lambda_dir, lambda_mgf, lambda_dice}) {
      require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Geometry-aware classification scores

// 1 - (1 / 2N) * sum of Manhattan distances between corresponding normalized
// points, floored at 0.
inline double gcs_p2p(std::span<const Point2> pred, std::span<const Point2> gt) {
  require(pred.size() == gt.size(), "gcs_p2p: point count mismatch");
  require(!pred.empty(), "gcs_p2p: empty point list");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += manhattan(pred[i], gt[i]);
  return std::max(0.0, 1.0 - total / (2.0 * static_cast<double>(pred.size())));
}

// 0.5 + (1 / 2N) * sum of edge cosines. Degenerate edges contribute 0.
inline double gcs_dir(std::span<const Point2> pred_edges, std::span<const Point2> gt_edges) {
  require(pred_edges.size() == gt_edges.size(), "gcs_dir: edge count mismatch");
  require(!pred_edges.empty(), "gcs_dir: empty edge list");
  double total = 0.0;
  for (std::size_t i = 0; i < pred_edges.size(); ++i) {
    total += cosine_similarity(pred_edges[i], gt_edges[i]);
  }
  const double s = 0.5 + total / (2.0 * static_cast<double>(pred_edges.size()));
  return std::clamp(s, 0.0, 1.0);
}

inline double gcs_giou(const Box2D& pred, const Box2D& gt) {
  return std::clamp(0.5 + 0.5 * giou(pred, gt), 0.0, 1.0);
}

struct GcsBreakdown {
  double p2p = 1.0;
  double dir = 1.0;
  double giou = 1.0;
  double combined = 1.0;
};

inline double combine_scores(std::span<const double> enabled, GcsCombine mode) {
  require(!enabled.empty(), "no geometry score enabled");
  if (mode == GcsCombine::product) {
    double out = 1.0;
    for (double s : enabled) out *= s;
    return out;
  }
  double out = 0.0;
  for (double s : enabled) out += s;
  return out / static_cast<double>(enabled.size());
}

// Geometry score of `pred` against `gt` with the GT point order given
// explicitly (the matcher passes its chosen equivalent ordering). Point
// scores use normalized coordinates; edges and boxes use metric ones. Both
// edge sets follow the GT topology (open/closed).
inline GcsBreakdown gcs_breakdown(std::span<const Point2> pred, std::span<const Point2> gt,
                                  bool closed, const GcsConfig& cfg, const BevExtent& extent) {
  cfg.validate();
  require(pred.size() == gt.size(), "gcs: point count mismatch");
  GcsBreakdown out;
  std::vector<double> enabled;
  if (cfg.use_p2p) {
    out.p2p = gcs_p2p(normalize_points(pred, extent), normalize_points(gt, extent));
    enabled.push_back(out.p2p);
  }
  if (cfg.use_dir) {
    out.dir = gcs_dir(edge_directions(pred, closed).directions,
                      edge_directions(gt, closed).directions);
    enabled.push_back(out.dir);
  }
  if (cfg.use_giou) {
    out.giou = gcs_giou(enclosing_box(pred), enclosing_box(gt));
    enabled.push_back(out.giou);
  }
  out.combined = std::clamp(combine_scores(enabled, cfg.combine), 0.0, 1.0);
  return out;
}

inline double gcs_combined(const MapInstance& pred, const MapInstance& gt, const GcsConfig& cfg,
                           const BevExtent& extent) {
  return gcs_breakdown(pred.points, gt.points, gt.closed, cfg, extent).combined;
}

// ---------------------------------------------------------------------------
// Geometry-aware focal loss and cost

inline double clamp_probability(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

// Binary cross-entropy of prediction p against soft target t.
inline double cross_entropy(double p, double t) {
  p = clamp_probability(p);
  return -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
}

inline double cross_entropy_grad(double p, double t) {
  p = clamp_probability(p);
  return -t / p + (1.0 - t) / (1.0 - p);
}

namespace detail {
inline void check_unit_interval(double v, const char* what) {
  require(std::isfinite(v) && v >= 0.0 && v <= 1.0, std::string(what) + " must lie in [0,1]");
}
}  // namespace detail

// Positive branch: s * CE(p; s).
inline double gfl_positive(double p, double s_geo) {
  detail::check_unit_interval(p, "gfl probability");
  detail::check_unit_interval(s_geo, "gfl geometry score");
  return s_geo * cross_entropy(p, s_geo);
}

inline double gfl_positive_grad(double p, double s_geo) {
  return s_geo * cross_entropy_grad(p, s_geo);
}

// Negative branch: alpha * p^gamma * CE(p; 0).
inline double gfl_negative(double p, const FocalParams& fp) {
  detail::check_unit_interval(p, "gfl probability");
  const double pc = clamp_probability(p);
  return fp.alpha * std::pow(pc, fp.gamma) * -std::log(1.0 - pc);
}

inline double gfl_negative_grad(double p, const FocalParams& fp) {
  const double pc = clamp_probability(p);
  const double log_term = -std::log(1.0 - pc);
  const double d_pow = fp.gamma == 0.0 ? 0.0 : fp.gamma * std::pow(pc, fp.gamma - 1.0);
  return fp.alpha * (d_pow * log_term + std::pow(pc, fp.gamma) / (1.0 - pc));
}

struct PositiveSample {
  double p = 0.0;
  double s_geo = 0.0;
};

inline double gfl(std::span<const PositiveSample> positives, std::span<const double> negatives,
                  const FocalParams& fp) {
  fp.validate();
  double loss = 0.0;
  for (const auto& pos : positives) {
    detail::check_unit_interval(pos.p, "gfl probability");
    detail::check_unit_interval(pos.s_geo, "gfl geometry score");
    loss += gfl_positive(pos.p, pos.s_geo);
  }
  for (double p : negatives) {
    detail::check_unit_interval(p, "gfl probability");
    loss += gfl_negative(p, fp);
  }
  return loss;
}

// Pairwise classification cost of a prediction with probability p against a
// ground truth with geometry score s_geo:
//   s * CE(p; s) - alpha * p^gamma * (-ln(1 - p)).
inline double gfc(double p, double s_geo, const FocalParams& fp) {
  detail::check_unit_interval(p, "gfc probability");
  detail::check_unit_interval(s_geo, "gfc geometry score");
  return gfl_positive(p, s_geo) - gfl_negative(p, fp);
}

inline double gfc_grad(double p, double s_geo, const FocalParams& fp) {
  return gfl_positive_grad(p, s_geo) - gfl_negative_grad(p, fp);
}

// The standard focal classification cost used by geometry-agnostic matchers:
//   alpha (1-p)^gamma (-ln p) - (1-alpha) p^gamma (-ln(1-p)).
inline double focal_cost(double p, const FocalParams& fp) {
  detail::check_unit_interval(p, "focal_cost probability");
  const double pc = clamp_probability(p);
  const double pos = fp.alpha * std::pow(1.0 - pc, fp.gamma) * -std::log(pc);
  const double neg = (1.0 - fp.alpha) * std::pow(pc, fp.gamma) * -std::log(1.0 - pc);
  return pos - neg;
}

// ---------------------------------------------------------------------------
// Regression losses

inline double smooth_l1(double diff, double beta = 1.0) {
  const double a = std::abs(diff);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

// Mean smooth-L1 over every coordinate.
inline double p2p_loss(std::span<const Point2> pred, std::span<const Point2> gt) {
  require(pred.size() == gt.size(), "p2p_loss: point count mismatch");
  require(!pred.empty(), "p2p_loss: empty point list");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total += smooth_l1(pred[i].x - gt[i].x) + smooth_l1(pred[i].y - gt[i].y);
  }
  return total / (2.0 * static_cast<double>(pred.size()));
}

// Mean (1 - cos) between corresponding predicted and ground-truth edges.
inline double dir_loss(std::span<const Point2> pred_edges, std::span<const Point2> gt_edges) {
  require(pred_edges.size() == gt_edges.size(), "dir_loss: edge count mismatch");
  require(!pred_edges.empty(), "dir_loss: empty edge list");
  double total = 0.0;
  for (std::size_t i = 0; i < pred_edges.size(); ++i) {
    total += 1.0 - cosine_similarity(pred_edges[i], gt_edges[i]);
  }
  return total / static_cast<double>(pred_edges.size());
}

// ---------------------------------------------------------------------------
// Total loss

struct DetectionTerms {
  double cls = 0.0;
  double p2p = 0.0;
  double dir = 0.0;
};

struct SegmentationTerms {
  double mgf = 0.0;
  double dice = 0.0;
};

struct LossBreakdown {
  double cls = 0.0;
  double p2p = 0.0;
  double dir = 0.0;
  double mgf = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

// Weighted sum of detection and segmentation terms; each field of the
// breakdown holds the weighted contribution.
inline LossBreakdown total_loss(const DetectionTerms& det, const SegmentationTerms& seg,
                                const LossWeights& w) {
  w.validate();
  for (double t : {det.cls, det.p2p, det.dir, seg.mgf, seg.dice}) require_finite(t, "loss term");
  LossBreakdown out;
  out.cls = w.lambda_cls * det.cls;
  out.p2p = w.lambda_p2p * det.p2p;
  out.dir = w.lambda_dir * det.dir;
  out.mgf = w.lambda_mgf * seg.mgf;
  out.dice = w.lambda_dice * seg.dice;
  out.total = out.cls + out.p2p + out.dir + out.mgf + out.dice;
  return out;
}

}  // namespace mapvec
