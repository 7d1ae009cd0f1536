#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mapvec/align_scores.hpp"
#include "mapvec/instance_mask.hpp"

namespace mapvec {

struct GradcheckConfig {
  double grid_step = 0.05;
  double fd_step = 1e-5;
  double tolerance = 1e-4;
  std::vector<double> eps_sweep{1e-4, 1e-5, 1e-6};
};

// |a - n| / max(|a|, |n|, floor). The floor keeps the ratio meaningful where
// the derivative itself vanishes (e.g. the positive branch at p = s).
inline constexpr double kGradRelFloor = 1e-3;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradRelFloor});
  return std::abs(analytic - numeric) / denom;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct GradcheckRow {
  std::string loss;
  double step = 0.0;
  double max_rel_error = 0.0;
  double worst_p = 0.0;
  double worst_s = 0.0;
  bool pass = true;
};

// Interior grid points k * step, k = 1 .. round(1/step) - 1.
inline std::vector<double> unit_grid(double step) {
  std::vector<double> out;
  const auto n = static_cast<long>(std::llround(1.0 / step));
  for (long k = 1; k < n; ++k) out.push_back(static_cast<double>(k) * step);
  return out;
}

// Compares the analytic derivatives in p of the positive and negative focal
// branches, the matching cost and the mean mask loss against central
// differences over the (p, s_geo) grid. `corrupt_scale` multiplies the
// analytic gfc derivative and exists only as a negative control.
inline std::vector<GradcheckRow> run_gradcheck(const GradcheckConfig& cfg, const FocalParams& fp, double step,
                                               double corrupt_scale = 1.0) {
  const auto grid = unit_grid(cfg.grid_step);
  using Scalar = std::function<double(double, double)>;
  struct Case {
    const char* name;
    Scalar f;
    Scalar df;
  };
  // Mask: 2 x 2 target with two foreground cells; one cell is varied at a time.
  InstanceMask target(2, 2);
  target.values = {1.0, 0.0, 0.0, 1.0};

  std::vector<Case> cases = {
      {"gfl_positive", [](double p, double s) { return gfl_positive(p, s); },
       [](double p, double s) { return gfl_positive_grad(p, s); }},
      {"gfl_negative", [&](double p, double) { return gfl_negative(p, fp); },
       [&](double p, double) { return gfl_negative_grad(p, fp); }},
      {"gfc", [&](double p, double s) { return gfc(p, s, fp); },
       [&](double p, double s) { return corrupt_scale * gfc_grad(p, s, fp); }},
  };

  std::vector<GradcheckRow> rows;
  for (const auto& c : cases) {
    GradcheckRow row{c.name, step};
    for (double p : grid) {
      for (double s : grid) {
        const double numeric = central_difference([&](double x) { return c.f(x, s); }, p, step);
        const double err = relative_error(c.df(p, s), numeric);
        if (err > row.max_rel_error) {
          row.max_rel_error = err;
          row.worst_p = p;
          row.worst_s = s;
        }
      }
    }
    rows.push_back(row);
  }

  GradcheckRow mask_row{"mask_gfl", step};
  for (double p : grid) {
    for (double s : grid) {
      InstanceMask pred(2, 2, p);
      pred.values[1] = 1.0 - p;  // a background cell at a different probability
      const auto analytic = mask_gfl_grad(pred, target, s, fp);
      for (std::size_t cell = 0; cell < pred.values.size(); ++cell) {
        const double x0 = pred.values[cell];
        const double numeric = central_difference(
            [&](double x) {
              InstanceMask q = pred;
              q.values[cell] = x;
              return mask_gfl(q, target, s, fp);
            },
            x0, step);
        const double err = relative_error(analytic[cell], numeric);
        if (err > mask_row.max_rel_error) {
          mask_row.max_rel_error = err;
          mask_row.worst_p = x0;
          mask_row.worst_s = s;
        }
      }
    }
  }
  rows.push_back(mask_row);

  for (auto& r : rows) r.pass = r.max_rel_error <= cfg.tolerance;
  return rows;
}

}  // namespace mapvec
