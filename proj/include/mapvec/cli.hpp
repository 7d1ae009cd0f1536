#pragma once

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mapvec/io.hpp"
#include "mapvec/mapvec.hpp"

namespace mapvec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> road_template;
};

inline constexpr const char* kGtFile = "gt.json";
inline constexpr const char* kPredFile = "pred.json";
inline constexpr const char* kBevFile = "bev.json";

inline int cmd_gen(const GenOptions& opt, std::ostream& out) {
  io::RunConfig cfg = io::load_run_config(opt.config_path);
  if (opt.seed) cfg.scenario.seed = *opt.seed;
  if (opt.road_template) cfg.scenario.road_template = parse_template(*opt.road_template);
  cfg.scenario.validate();

  const Scenario sc = generate_scenario(cfg.scenario);
  std::filesystem::create_directories(opt.out_dir);
  const std::vector<std::pair<std::string, std::string>> files = {
      {kGtFile, io::dump(io::to_json(io::FrameFile{cfg.extent, sc.gt}))},
      {kPredFile, io::dump(io::to_json(io::FrameFile{cfg.extent, sc.pred}))},
      {kBevFile, io::dump(io::bev_fixture_to_json(sc.bev))},
  };
  io::json manifest = {{"seed", cfg.scenario.seed},
                       {"road_template", std::string(template_name(cfg.scenario.road_template))},
                       {"num_frames", cfg.scenario.num_frames},
                       {"config_fnv1a64", io::hex64(io::fnv1a64(io::to_json(cfg).dump()))},
                       {"files", io::json::array()}};
  for (const auto& [name, text] : files) {
    io::write_file((std::filesystem::path(opt.out_dir) / name).string(), text);
    manifest["files"].push_back({{"name", name}, {"bytes", text.size()}, {"fnv1a64", io::hex64(io::fnv1a64(text))}});
  }
  out << io::dump(manifest);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string config_path;
  std::string pred_path;
  std::string gt_path;
  std::string csv_path;
  std::optional<double> score_floor;
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  io::RunConfig cfg = io::load_run_config(opt.config_path);
  if (opt.score_floor) cfg.eval.score_floor = *opt.score_floor;
  const auto pred = io::load_frames(opt.pred_path);
  const auto gt = io::load_frames(opt.gt_path);
  cfg.eval.extent = gt.extent;
  const EvalReport rep = evaluate(pred.frames, gt.frames, cfg.eval);
  if (!opt.csv_path.empty()) io::write_file(opt.csv_path, io::pr_csv(rep));
  out << io::dump(io::to_json(rep));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// assign

struct AssignOptions {
  std::string config_path;
  std::string pred_path;
  std::string gt_path;
  long frame = 0;
  bool brute_force = false;
  bool json = false;
};

inline io::json assignment_to_json(const AssignmentResult& res, const CostMatrix& cost, std::size_t frame,
                                   const char* solver) {
  io::json pairs = io::json::array();
  for (const auto& p : res.pairs) {
    const auto& e = cost.at(p.pred, p.gt);
    pairs.push_back({{"pred", p.pred},
                     {"gt", p.gt},
                     {"ordering", p.ordering},
                     {"cost", e.total},
                     {"cls_term", e.cls_term},
                     {"pts_term", e.pts_term},
                     {"dir_term", e.dir_term},
                     {"s_geo", e.s_geo}});
  }
  return {{"frame", frame}, {"solver", solver}, {"total_cost", res.total_cost}, {"pairs", pairs}};
}

inline int cmd_assign(const AssignOptions& opt, std::ostream& out) {
  io::RunConfig cfg = io::load_run_config(opt.config_path);
  const auto pred = io::load_frames(opt.pred_path);
  const auto gt = io::load_frames(opt.gt_path);
  require(pred.frames.size() == gt.frames.size(), "assign: prediction and ground-truth frame counts differ");
  require(opt.frame >= 0 && static_cast<std::size_t>(opt.frame) < gt.frames.size(),
          "assign: frame index " + std::to_string(opt.frame) + " out of range [0, " +
              std::to_string(gt.frames.size()) + ")");
  const auto k = static_cast<std::size_t>(opt.frame);
  cfg.matcher.extent = gt.extent;
  const auto& preds = pred.frames[k].instances;
  const auto& gts = gt.frames[k].instances;
  const CostMatrix cost = build_cost(preds, gts, cfg.matcher);
  if (opt.brute_force) {
    require(std::min(cost.rows(), cost.cols()) <= kBruteForceMaxSide,
            "assign: frame too large for the brute-force solver");
  }
  const AssignmentResult res = opt.brute_force ? brute_force_assign(cost) : solve_hungarian(cost);
  const char* solver = opt.brute_force ? "brute_force" : "hungarian";
  if (opt.json) {
    out << io::dump(assignment_to_json(res, cost, k, solver));
    return kExitOk;
  }
  out << "frame " << k << "  solver " << solver << "  predictions " << preds.size() << "  ground truths "
      << gts.size() << '\n';
  out << std::left << std::setw(6) << "pred" << std::setw(6) << "gt" << std::setw(10) << "ordering" << std::right
      << std::setw(14) << "cost" << std::setw(14) << "gfc_term" << std::setw(14) << "point_term" << std::setw(10)
      << "s_geo" << '\n';
  out << std::fixed << std::setprecision(6);
  for (const auto& p : res.pairs) {
    const auto& e = cost.at(p.pred, p.gt);
    out << std::left << std::setw(6) << p.pred << std::setw(6) << p.gt << std::setw(10) << p.ordering << std::right
        << std::setw(14) << e.total << std::setw(14) << e.cls_term << std::setw(14) << e.pts_term << std::setw(10)
        << e.s_geo << '\n';
  }
  out << "total " << res.total_cost << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fuse

struct FuseOptions {
  std::string config_path;
  std::string fixtures;  // directory holding bev.json, or the file itself
  std::string mode = "streaming";
  std::optional<std::uint64_t> seed;
};

inline FusionWeights fusion_weights_for(const io::RunConfig& cfg, std::size_t channels) {
  FusionWeights w;
  if (!cfg.kfs.weights_path.empty()) {
    w = io::fusion_weights_from_json(io::load_json(cfg.kfs.weights_path), "weights");
  } else {
    w = FusionWeights::random(channels, cfg.kfs.kfs.n_pre, cfg.kfs.gate_kernel, cfg.kfs.weight_seed,
                              cfg.kfs.weight_scale);
    w.layer_norm_enabled = cfg.kfs.layer_norm;
  }
  require(w.local_gru.update.out_channels == channels, "fuse: weights do not match the fixture channel count");
  return w;
}

inline int cmd_fuse(const FuseOptions& opt, std::ostream& out) {
  io::RunConfig cfg = io::load_run_config(opt.config_path);
  if (opt.seed) cfg.kfs.weight_seed = *opt.seed;
  require(opt.mode == "streaming" || opt.mode == "stacking", "fuse: --mode must be 'streaming' or 'stacking'");
  const FusionMode mode = opt.mode == "streaming" ? FusionMode::streaming : FusionMode::stacking;
  std::filesystem::path path(opt.fixtures);
  if (std::filesystem::is_directory(path)) path /= kBevFile;
  const auto grids = io::bev_fixture_from_json(io::load_json(path.string()));
  require(!grids.empty(), "fuse: fixture holds no grids");
  const FusionWeights w = fusion_weights_for(cfg, grids.front().channels);

  KfsState state(cfg.kfs.kfs);
  io::json frames = io::json::array();
  io::json keyframes = io::json::array();
  std::optional<BevGrid> prev_submap, prev_global;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    FusionStep step = fuse_frame(state, grids[i], w, mode);
    if (step.keyframe) keyframes.push_back(i);
    io::json rec = {{"index", i},
                    {"timestamp_s", grids[i].timestamp_s},
                    {"keyframe", step.keyframe},
                    {"travelled_since_keyframe", state.travelled_since_keyframe},
                    {"submap_max_abs", step.submap.max_abs()},
                    {"global_max_abs", step.global.max_abs()},
                    {"submap_residual", prev_submap ? io::json(max_abs_diff(step.submap, *prev_submap)) : io::json(nullptr)},
                    {"global_residual", prev_global ? io::json(max_abs_diff(step.global, *prev_global)) : io::json(nullptr)}};
    frames.push_back(rec);
    prev_submap = std::move(step.submap);
    prev_global = std::move(step.global);
  }
  out << io::dump({{"mode", opt.mode},
                   {"n_pre", cfg.kfs.kfs.n_pre},
                   {"d_stride", cfg.kfs.kfs.d_stride},
                   {"num_frames", grids.size()},
                   {"keyframes", keyframes},
                   {"frames", frames}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  std::string config_path;
  bool corrupt_derivative = false;
  bool json = false;
};

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out) {
  const io::RunConfig cfg = io::load_run_config(opt.config_path);
  const double corrupt = opt.corrupt_derivative ? 1.01 : 1.0;
  std::vector<double> steps{cfg.gradcheck.fd_step};
  for (double e : cfg.gradcheck.eps_sweep) {
    if (e != cfg.gradcheck.fd_step) steps.push_back(e);
  }
  bool all_pass = true;
  io::json rows = io::json::array();
  std::ostringstream table;
  table << std::left << std::setw(14) << "loss" << std::setw(10) << "step" << std::setw(16) << "max_rel_err"
        << std::setw(8) << "p" << std::setw(8) << "s_geo" << "result\n";
  for (double step : steps) {
    for (const auto& r : run_gradcheck(cfg.gradcheck, cfg.focal, step, corrupt)) {
      // Only the configured step gates the result; the sweep is informative.
      if (step == cfg.gradcheck.fd_step) all_pass = all_pass && r.pass;
      rows.push_back({{"loss", r.loss},
                      {"step", r.step},
                      {"max_rel_error", r.max_rel_error},
                      {"worst_p", r.worst_p},
                      {"worst_s_geo", r.worst_s},
                      {"pass", r.pass}});
      std::ostringstream step_s, err_s;
      step_s << std::scientific << std::setprecision(0) << r.step;
      err_s << std::scientific << std::setprecision(3) << r.max_rel_error;
      table << std::left << std::setw(14) << r.loss << std::setw(10) << step_s.str() << std::setw(16) << err_s.str()
            << std::setw(8) << std::fixed << std::setprecision(2) << r.worst_p << std::setw(8) << r.worst_s
            << (r.pass ? "PASS" : "FAIL") << '\n';
    }
  }
  if (opt.json) {
    out << io::dump({{"tolerance", cfg.gradcheck.tolerance}, {"pass", all_pass}, {"rows", rows}});
  } else {
    out << table.str() << (all_pass ? "gradient check PASS" : "gradient check FAILED") << " at step "
        << cfg.gradcheck.fd_step << " (tolerance " << cfg.gradcheck.tolerance << ")\n";
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

}  // namespace mapvec::cli
