#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "mapvec/align_scores.hpp"
#include "mapvec/core/error.hpp"
#include "mapvec/core/parallel.hpp"
#include "mapvec/geometry.hpp"

namespace mapvec {

enum class ClassCost { geometry_aware, focal };

struct MatcherConfig {
  GcsConfig gcs;
  FocalParams focal;
  BevExtent extent;
  double w_cls = 2.0;
  double w_pts = 4.0;
  // Optional edge-direction term (mean 1 - cos); disabled by default.
  double w_dir = 0.0;
  ClassCost class_cost = ClassCost::geometry_aware;
};

// A MapInstance carries only its own class score; the other classes are
// taken as 0.
inline ClassProbs class_probabilities(const MapInstance& inst) {
  ClassProbs probs{};
  probs[class_index(inst.class_id)] = inst.score;
  return probs;
}

struct CostEntry {
  double total = 0.0;
  double cls_term = 0.0;
  double pts_term = 0.0;
  double dir_term = 0.0;
  double s_geo = 0.0;
  std::size_t ordering = 0;
};

// Rows are predictions, columns ground truths.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), entries_(rows * cols) {}

  static CostMatrix from_values(const std::vector<std::vector<double>>& values) {
    const std::size_t rows = values.size();
    const std::size_t cols = rows == 0 ? 0 : values.front().size();
    CostMatrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      require(values[i].size() == cols, "ragged cost matrix");
      for (std::size_t j = 0; j < cols; ++j) m.at(i, j).total = values[i][j];
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  CostEntry& at(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }
  const CostEntry& at(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }
  double cost(std::size_t i, std::size_t j) const { return at(i, j).total; }

  void validate() const {
    for (const auto& e : entries_) require_finite(e.total, "cost matrix entry");
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<CostEntry> entries_;
};

struct AssignedPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  std::size_t ordering = 0;
  double cost = 0.0;

  friend bool operator==(const AssignedPair&, const AssignedPair&) = default;
};

struct AssignmentResult {
  std::vector<AssignedPair> pairs;  // sorted by prediction index
  double total_cost = 0.0;

  std::vector<bool> matched_predictions(std::size_t num_preds) const {
    std::vector<bool> out(num_preds, false);
    for (const auto& p : pairs) out[p.pred] = true;
    return out;
  }
};

// Mean Manhattan distance between corresponding normalized points.
inline double mean_point_l1(std::span<const Point2> a, std::span<const Point2> b) {
  require(a.size() == b.size(), "point cost: point count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += manhattan(a[i], b[i]);
  return total / static_cast<double>(a.size());
}

// Cost of one prediction against one ground truth. The point term is
// minimized over the GT's equivalent orderings; the geometry score is taken
// at the minimizing ordering (first ordering wins ties).
inline CostEntry pair_cost(const MapInstance& pred, const ClassProbs& probs, const MapInstance& gt,
                           const MatcherConfig& cfg) {
  require(pred.points.size() == gt.points.size(), "build_cost: point count mismatch");
  const auto pred_norm = normalize_points(pred, cfg.extent);
  const auto orderings = equivalent_orderings(gt);
  CostEntry e;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < orderings.size(); ++k) {
    const double c = mean_point_l1(pred_norm, normalize_points(orderings[k], cfg.extent));
    if (c < best) {
      best = c;
      e.ordering = k;
    }
  }
  const auto& chosen = orderings[e.ordering];
  e.s_geo = gcs_breakdown(pred.points, chosen, gt.closed, cfg.gcs, cfg.extent).combined;
  const double p = probs[class_index(gt.class_id)];
  e.cls_term = cfg.w_cls * (cfg.class_cost == ClassCost::geometry_aware ? gfc(p, e.s_geo, cfg.focal)
                                                                         : focal_cost(p, cfg.focal));
  e.pts_term = cfg.w_pts * best;
  if (cfg.w_dir != 0.0) {
    e.dir_term = cfg.w_dir * dir_loss(edge_directions(pred.points, gt.closed).directions,
                                      edge_directions(chosen, gt.closed).directions);
  }
  e.total = e.cls_term + e.pts_term + e.dir_term;
  return e;
}

inline CostMatrix build_cost(std::span<const MapInstance> preds, std::span<const ClassProbs> probs,
                             std::span<const MapInstance> gts, const MatcherConfig& cfg) {
  require(probs.size() == preds.size(), "build_cost: one probability vector per prediction");
  require(!(preds.empty() && !gts.empty()), "build_cost: no predictions for non-empty ground truth");
  cfg.extent.validate();
  cfg.focal.validate();
  CostMatrix m(preds.size(), gts.size());
  parallel_for(preds.size() * gts.size(), [&](std::size_t idx) {
    const std::size_t i = idx / gts.size();
    const std::size_t j = idx % gts.size();
    m.at(i, j) = pair_cost(preds[i], probs[i], gts[j], cfg);
  });
  return m;
}

inline CostMatrix build_cost(std::span<const MapInstance> preds, std::span<const MapInstance> gts,
                             const MatcherConfig& cfg) {
  std::vector<ClassProbs> probs;
  probs.reserve(preds.size());
  for (const auto& p : preds) probs.push_back(class_probabilities(p));
  return build_cost(preds, probs, gts, cfg);
}

namespace detail {

// Sums costs in prediction order so both solvers report bitwise-identical
// totals for the same assignment.
inline AssignmentResult make_result(const CostMatrix& c, std::vector<std::pair<std::size_t, std::size_t>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  AssignmentResult out;
  for (auto [i, j] : pairs) {
    out.pairs.push_back({i, j, c.at(i, j).ordering, c.cost(i, j)});
    out.total_cost += c.cost(i, j);
  }
  return out;
}

// Minimum-cost perfect matching on a square matrix (shortest augmenting
// paths with potentials). Returns row -> column and the dual potentials.
struct SquareSolution {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u;  // row potentials
  std::vector<double> v;  // column potentials
};

inline SquareSolution solve_square(const std::vector<double>& cost, std::size_t n) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution out;
  out.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
  out.u.assign(u.begin() + 1, u.end());
  out.v.assign(v.begin() + 1, v.end());
  return out;
}

// Moves the optimal matching to the lexicographically smallest optimal one
// (prediction 0 takes the smallest feasible GT, then prediction 1, ...).
// Every optimal matching lives on the tight edges of an optimal dual, so the
// search only re-routes along alternating paths of tight edges.
class LexRefiner {
 public:
  LexRefiner(const std::vector<double>& cost, std::size_t n, std::size_t real_rows,
             std::size_t real_cols, const SquareSolution& sol)
      : n_(n), real_rows_(real_rows), real_cols_(real_cols), row_to_col_(sol.row_to_col),
        col_to_row_(n), tight_(n * n, false), fixed_row_(n, false), fixed_col_(n, false) {
    double scale = 1.0;
    for (double c : cost) scale = std::max(scale, std::abs(c));
    const double tol = 1e-9 * scale;
    for (std::size_t i = 0; i < n; ++i) {
      col_to_row_[row_to_col_[i]] = i;
      for (std::size_t j = 0; j < n; ++j) {
        tight_[i * n + j] = cost[i * n + j] - sol.u[i] - sol.v[j] <= tol;
      }
    }
  }

  std::vector<std::size_t> run() {
    for (std::size_t i = 0; i < real_rows_; ++i) {
      const std::size_t current = row_to_col_[i];
      const bool current_is_dummy = current >= real_cols_;
      const std::size_t limit = current_is_dummy ? real_cols_ : current;
      for (std::size_t j = 0; j < limit; ++j) {
        if (!tight_[i * n_ + j] || fixed_col_[j]) continue;
        if (try_switch(i, j)) break;
      }
      fixed_row_[i] = true;
      fixed_col_[row_to_col_[i]] = true;
    }
    return row_to_col_;
  }

 private:
  // Re-matches row i to column j, pushing j's current row along an
  // alternating path that ends at the column i releases.
  bool try_switch(std::size_t i, std::size_t j) {
    const std::size_t released = row_to_col_[i];
    const std::size_t displaced = col_to_row_[j];
    if (fixed_row_[displaced]) return false;
    std::vector<bool> visited(n_, false);
    visited[j] = true;
    std::vector<std::size_t> path_cols;
    if (!search(displaced, released, visited, path_cols)) return false;
    // path_cols[k] is the new column of the k-th row along the path.
    std::size_t row = displaced;
    for (std::size_t col : path_cols) {
      const std::size_t next_row = col_to_row_[col];
      row_to_col_[row] = col;
      col_to_row_[col] = row;
      row = next_row;
    }
    row_to_col_[i] = j;
    col_to_row_[j] = i;
    return true;
  }

  bool search(std::size_t row, std::size_t target, std::vector<bool>& visited,
              std::vector<std::size_t>& path) {
    for (std::size_t col = 0; col < n_; ++col) {
      if (visited[col] || fixed_col_[col] || !tight_[row * n_ + col]) continue;
      visited[col] = true;
      path.push_back(col);
      if (col == target) return true;
      if (search(col_to_row_[col], target, visited, path)) return true;
      path.pop_back();
    }
    return false;
  }

  std::size_t n_;
  std::size_t real_rows_;
  std::size_t real_cols_;
  std::vector<std::size_t> row_to_col_;
  std::vector<std::size_t> col_to_row_;
  std::vector<bool> tight_;
  std::vector<bool> fixed_row_;
  std::vector<bool> fixed_col_;
};

}  // namespace detail

// Globally optimal one-to-one assignment of min(rows, cols) pairs. Among
// optimal assignments the lexicographically smallest pair list is returned.
inline AssignmentResult solve_hungarian(const CostMatrix& c) {
  c.validate();
  const std::size_t rows = c.rows();
  const std::size_t cols = c.cols();
  if (rows == 0 || cols == 0) return {};
  const std::size_t n = std::max(rows, cols);
  std::vector<double> padded(n * n, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) padded[i * n + j] = c.cost(i, j);
  }
  const auto sol = detail::solve_square(padded, n);

  auto collect = [&](const std::vector<std::size_t>& row_to_col) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < rows; ++i) {
      if (row_to_col[i] < cols) pairs.emplace_back(i, row_to_col[i]);
    }
    return detail::make_result(c, std::move(pairs));
  };

  AssignmentResult raw = collect(sol.row_to_col);
  AssignmentResult refined = collect(detail::LexRefiner(padded, n, rows, cols, sol).run());
  // The refinement only walks tight edges, but guard against tolerance slop.
  return refined.total_cost <= raw.total_cost ? refined : raw;
}

inline constexpr std::size_t kBruteForceMaxSide = 8;

// Exhaustive oracle: enumerates every assignment of min(rows, cols) pairs.
// Ties on the exact total keep the lexicographically smallest pair list.
inline AssignmentResult brute_force_assign(const CostMatrix& c) {
  c.validate();
  const std::size_t rows = c.rows();
  const std::size_t cols = c.cols();
  require(std::min(rows, cols) <= kBruteForceMaxSide, "brute_force_assign: problem too large");
  if (rows == 0 || cols == 0) return {};

  AssignmentResult best;
  bool have_best = false;
  std::vector<std::pair<std::size_t, std::size_t>> current;

  auto consider = [&]() {
    AssignmentResult candidate = detail::make_result(c, current);
    if (!have_best || candidate.total_cost < best.total_cost) {
      best = std::move(candidate);
      have_best = true;
      return;
    }
    if (candidate.total_cost == best.total_cost) {
      auto key = [](const AssignmentResult& r) {
        std::vector<std::pair<std::size_t, std::size_t>> k;
        for (const auto& p : r.pairs) k.emplace_back(p.pred, p.gt);
        return k;
      };
      if (key(candidate) < key(best)) best = std::move(candidate);
    }
  };

  const bool by_rows = rows <= cols;
  const std::size_t picks = std::min(rows, cols);
  const std::size_t pool = std::max(rows, cols);
  std::vector<bool> used(pool, false);
  // Assign each element of the smaller side to a distinct element of the larger.
  auto recurse = [&](auto&& self, std::size_t k) -> void {
    if (k == picks) {
      consider();
      return;
    }
    for (std::size_t x = 0; x < pool; ++x) {
      if (used[x]) continue;
      used[x] = true;
      current.emplace_back(by_rows ? k : x, by_rows ? x : k);
      self(self, k + 1);
      current.pop_back();
      used[x] = false;
    }
  };
  recurse(recurse, 0);
  return best;
}

}  // namespace mapvec
