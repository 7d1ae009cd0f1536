// mapvec command-line tool: gen | eval | assign | fuse | gradcheck.
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mapvec/cli.hpp"

int main(int argc, char** argv) {
  using namespace mapvec::cli;
  CLI::App app{"Vectorized HD map toolkit: synthetic scenarios, evaluation, matching, temporal fusion"};
  app.require_subcommand(1);

  GenOptions gen;
  std::uint64_t gen_seed = 0;
  std::string gen_template;
  auto* gen_cmd = app.add_subcommand("gen", "Generate GT, predictions and BEV fixtures");
  gen_cmd->add_option("--config", gen.config_path, "Run configuration (JSON)");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->default_val(".");
  auto* seed_opt = gen_cmd->add_option("--seed", gen_seed, "Scenario seed (overrides the config)");
  auto* tmpl_opt = gen_cmd->add_option("--template", gen_template, "Road template: straight|curve|intersection");

  EvalOptions ev;
  double score_floor = 0.0;
  auto* eval_cmd = app.add_subcommand("eval", "Chamfer-threshold mAP of predictions against ground truth");
  eval_cmd->add_option("--config", ev.config_path, "Run configuration (JSON)");
  eval_cmd->add_option("--pred", ev.pred_path, "Prediction frames file")->required();
  eval_cmd->add_option("--gt", ev.gt_path, "Ground-truth frames file")->required();
  eval_cmd->add_option("--csv", ev.csv_path, "Write PR samples as CSV to this path");
  auto* floor_opt = eval_cmd->add_option("--score-floor", score_floor, "Drop predictions scoring below this");

  AssignOptions as;
  auto* assign_cmd = app.add_subcommand("assign", "Show the optimal prediction/GT assignment of one frame");
  assign_cmd->add_option("--config", as.config_path, "Run configuration (JSON)");
  assign_cmd->add_option("--pred", as.pred_path, "Prediction frames file")->required();
  assign_cmd->add_option("--gt", as.gt_path, "Ground-truth frames file")->required();
  assign_cmd->add_option("--frame", as.frame, "Frame index")->default_val(0);
  assign_cmd->add_flag("--brute-force", as.brute_force, "Use the exhaustive solver");
  assign_cmd->add_flag("--json", as.json, "Emit JSON instead of a table");

  FuseOptions fu;
  std::uint64_t fuse_seed = 0;
  auto* fuse_cmd = app.add_subcommand("fuse", "Run key-frame temporal fusion over a BEV fixture");
  fuse_cmd->add_option("--config", fu.config_path, "Run configuration (JSON)");
  fuse_cmd->add_option("--fixtures", fu.fixtures, "Directory holding bev.json (or the file itself)")->required();
  fuse_cmd->add_option("--mode", fu.mode, "streaming|stacking")->default_val("streaming");
  auto* fuse_seed_opt = fuse_cmd->add_option("--seed", fuse_seed, "Fusion weight seed (overrides the config)");

  GradcheckOptions gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the loss derivatives");
  grad_cmd->add_option("--config", gc.config_path, "Run configuration (JSON)");
  grad_cmd->add_flag("--json", gc.json, "Emit JSON instead of a table");
  grad_cmd->add_flag("--corrupt-derivative", gc.corrupt_derivative, "Test hook: perturb one analytic derivative")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) {
      if (*seed_opt) gen.seed = gen_seed;
      if (*tmpl_opt) gen.road_template = gen_template;
      return cmd_gen(gen, std::cout);
    }
    if (*eval_cmd) {
      if (*floor_opt) ev.score_floor = score_floor;
      return cmd_eval(ev, std::cout);
    }
    if (*assign_cmd) return cmd_assign(as, std::cout);
    if (*fuse_cmd) {
      if (*fuse_seed_opt) fu.seed = fuse_seed;
      return cmd_fuse(fu, std::cout);
    }
    if (*grad_cmd) return cmd_gradcheck(gc, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
