#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mapvec/core/error.hpp"
#include "mapvec/core/parallel.hpp"
#include "mapvec/geometry.hpp"

namespace mapvec {

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 1.5};
  std::vector<MapClass> classes{kAllClasses.begin(), kAllClasses.end()};
  BevExtent extent;
  double score_floor = 0.0;

  void validate() const {
    require(!thresholds.empty(), "eval: no thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      require(thresholds[i] > 0.0, "eval: thresholds must be positive");
      if (i > 0) require(thresholds[i] > thresholds[i - 1], "eval: thresholds must be sorted ascending");
    }
    require(!classes.empty(), "eval: no classes");
    for (std::size_t i = 0; i < classes.size(); ++i) {
      for (std::size_t j = i + 1; j < classes.size(); ++j) {
        require(classes[i] != classes[j], "eval: duplicate class");
      }
    }
    require(score_floor >= 0.0 && score_floor <= 1.0, "eval: score floor must lie in [0,1]");
    extent.validate();
  }
};

struct PrPoint {
  double score = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct ThresholdResult {
  double threshold = 0.0;
  std::optional<double> ap;  // empty when the class has no GT and no predictions
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  std::size_t num_tp = 0;
  std::vector<PrPoint> pr;
};

struct ClassResult {
  MapClass class_id = MapClass::lane_divider;
  std::vector<ThresholdResult> per_threshold;
  std::optional<double> ap;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<ClassResult> classes;
  double map = 0.0;
  std::size_t classes_evaluated = 0;
};

// One prediction after matching, with the flag decided at a given threshold.
struct ScoredFlag {
  double score = 0.0;
  bool tp = false;
};

// Greedy matching in descending score order. `preds` and `gts` are expected
// to share one class; instances of other classes are ignored. Returns one flag
// per prediction in input order.
inline std::vector<bool> match_frame(std::span<const MapInstance> preds, std::span<const MapInstance> gts,
                                     double tau) {
  require(tau > 0.0, "match_frame: threshold must be positive");
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> flags(preds.size(), false);
  for (std::size_t i : order) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].class_id != preds[i].class_id) continue;
      const double d = chamfer_distance(preds[i].points, gts[j].points);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (best_j < gts.size() && best < tau) {
      taken[best_j] = true;
      flags[i] = true;
    }
  }
  return flags;
}

// All-point interpolated AP. Entries are ranked by descending score; ties keep
// their input order. Returns nullopt when there is nothing to evaluate.
inline std::optional<double> average_precision(std::vector<ScoredFlag> flags, std::size_t num_gt,
                                               std::vector<PrPoint>* pr_out = nullptr) {
  if (num_gt == 0) {
    if (flags.empty()) return std::nullopt;
    if (pr_out) pr_out->clear();
    return 0.0;
  }
  std::stable_sort(flags.begin(), flags.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  std::vector<double> recall(flags.size()), precision(flags.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i].tp) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  if (pr_out) {
    pr_out->clear();
    for (std::size_t i = 0; i < flags.size(); ++i) pr_out->push_back({flags[i].score, recall[i], precision[i]});
  }
  // Envelope: precision made non-increasing from the right.
  for (std::size_t i = flags.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

inline EvalReport evaluate(std::span<const MapFrame> preds, std::span<const MapFrame> gts, const EvalConfig& cfg) {
  cfg.validate();
  require(preds.size() == gts.size(), "eval: prediction and ground-truth frame counts differ (" +
                                          std::to_string(preds.size()) + " vs " + std::to_string(gts.size()) + ")");
  auto known = [&](MapClass c) { return std::find(cfg.classes.begin(), cfg.classes.end(), c) != cfg.classes.end(); };
  for (const auto* set : {&preds, &gts}) {
    for (const auto& f : *set) {
      for (const auto& inst : f.instances) {
        require(known(inst.class_id),
                "eval: instance of class '" + std::string(class_name(inst.class_id)) + "' not in the evaluated class set");
      }
    }
  }

  // Per class, per frame: the filtered predictions and the GTs of that class.
  const std::size_t nc = cfg.classes.size(), nt = cfg.thresholds.size(), nf = preds.size();
  std::vector<std::vector<std::vector<MapInstance>>> cls_preds(nc, std::vector<std::vector<MapInstance>>(nf));
  std::vector<std::vector<std::vector<MapInstance>>> cls_gts(nc, std::vector<std::vector<MapInstance>>(nf));
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t f = 0; f < nf; ++f) {
      for (const auto& inst : preds[f].instances) {
        if (inst.class_id == cfg.classes[c] && inst.score >= cfg.score_floor) cls_preds[c][f].push_back(inst);
      }
      for (const auto& inst : gts[f].instances) {
        if (inst.class_id == cfg.classes[c]) cls_gts[c][f].push_back(inst);
      }
    }
  }

  std::vector<ThresholdResult> cells(nc * nt);
  parallel_for(nc * nt, [&](std::size_t idx) {
    const std::size_t c = idx / nt, t = idx % nt;
    ThresholdResult& out = cells[idx];
    out.threshold = cfg.thresholds[t];
    std::vector<ScoredFlag> flags;
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& fp = cls_preds[c][f];
      const auto frame_flags = match_frame(fp, cls_gts[c][f], out.threshold);
      for (std::size_t i = 0; i < fp.size(); ++i) {
        flags.push_back({fp[i].score, frame_flags[i]});
        if (frame_flags[i]) ++out.num_tp;
      }
      out.num_gt += cls_gts[c][f].size();
    }
    out.num_pred = flags.size();
    out.ap = average_precision(std::move(flags), out.num_gt, &out.pr);
  });

  EvalReport report;
  report.thresholds = cfg.thresholds;
  double sum = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    ClassResult cr;
    cr.class_id = cfg.classes[c];
    double class_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      cr.per_threshold.push_back(std::move(cells[c * nt + t]));
      if (cr.per_threshold.back().ap) {
        class_sum += *cr.per_threshold.back().ap;
        ++counted;
      }
    }
    if (counted > 0) {
      cr.ap = class_sum / static_cast<double>(counted);
      sum += *cr.ap;
      ++report.classes_evaluated;
    }
    report.classes.push_back(std::move(cr));
  }
  report.map = report.classes_evaluated > 0 ? sum / static_cast<double>(report.classes_evaluated) : 0.0;
  return report;
}

}  // namespace mapvec
