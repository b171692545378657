// vptsurv: synthetic cohorts, end-to-end / two-stage training, evaluation
// and verification from the command line.
//
//   vptsurv synth   --config configs/desk.ini
//   vptsurv train   --config configs/desk.ini --mode end_to_end --prompts structure,scale
//   vptsurv eval    --checkpoint runs/end_to_end-structure+scale/checkpoint.bin --data data
//   vptsurv compare A/report.json B/report.json
//   vptsurv ablate  --config configs/desk.ini
//   vptsurv grad-check / audit / config

#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace cli = vptsurv::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multi-source visual prompt tuning for survival analysis on tiled slides"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vptsurv 0.3.0");

  cli::SynthOptions synth;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic cohort on disk");
  synth_cmd->add_option("-c,--config", synth.config, "Experiment config (INI); default: desk preset");
  auto* seed_opt = synth_cmd->add_option("--seed", synth_seed, "Override the generator seed");
  synth_cmd->add_option("-o,--out", synth.out, "Cohort directory; default: config data_dir");
  synth_cmd->add_flag("--force", synth.force, "Overwrite an existing cohort directory");

  cli::TrainOptions train;
  std::string mode, prompts;
  auto* train_cmd = app.add_subcommand("train", "Train end-to-end or two-stage and write checkpoint + report");
  train_cmd->add_option("-c,--config", train.config, "Experiment config (INI); default: desk preset");
  auto* mode_opt = train_cmd->add_option("--mode", mode, "end_to_end | two_stage");
  auto* prompts_opt =
      train_cmd->add_option("--prompts", prompts, "Prompt sources, e.g. structure,scale; \"\" = self-prompt");
  train_cmd->add_option("-d,--data", train.data, "Cohort directory; default: config data_dir");
  train_cmd->add_option("-o,--out", train.out, "Run directory; default: <output_dir>/<mode>-<prompts>");
  train_cmd->add_flag("--force", train.force, "Overwrite an existing run directory");

  cli::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: metrics JSON, risks and KM curves");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint archive")->required();
  eval_cmd->add_option("-d,--data", eval.data, "Cohort directory")->required();
  eval_cmd->add_option("--split", eval.split, "train | val | test")->capture_default_str();
  eval_cmd->add_option("--tiles", eval.tiles, "Tiles per slide")->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed, "Tile-sampling seed")->capture_default_str();
  eval_cmd->add_option("-o,--out", eval.out, "Output directory; default: next to the checkpoint");
  eval_cmd->add_flag("--force", eval.force, "Overwrite existing outputs");

  std::string report_a, report_b;
  auto* compare_cmd = app.add_subcommand("compare", "CI delta between two run reports (A - B)");
  compare_cmd->add_option("report_a", report_a, "report.json of run A")->required();
  compare_cmd->add_option("report_b", report_b, "report.json of run B")->required();

  cli::GradCheckOptions grad;
  auto* grad_cmd = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
  grad_cmd->add_option("-c,--config", grad.config, "Experiment config (INI); default: desk preset");
  grad_cmd->add_option("--coordinates", grad.coordinates, "Trainable coordinates to check")->capture_default_str();
  grad_cmd->add_option("--slides", grad.slides, "Slides in the batch")->capture_default_str();
  grad_cmd->add_option("--tiles", grad.tiles, "Tiles per slide")->capture_default_str();
  grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error")->capture_default_str();

  std::string audit_config, audit_preset = "desk";
  auto* audit_cmd = app.add_subcommand("audit", "Trainable / frozen parameter counts");
  audit_cmd->add_option("-c,--config", audit_config, "Experiment config (INI)");
  audit_cmd->add_option("--preset", audit_preset, "desk | paper-shape (when no config)")->capture_default_str();

  std::string config_preset = "desk";
  auto* config_cmd = app.add_subcommand("config", "Print a preset as an editable INI config");
  config_cmd->add_option("--preset", config_preset, "desk | paper-shape")->capture_default_str();

  cli::AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "End-to-end runs over the prompt-source ablation");
  ablate_cmd->add_option("-c,--config", ablate.config, "Experiment config (INI); default: desk preset");
  ablate_cmd->add_option("-d,--data", ablate.data, "Cohort directory; default: config data_dir");
  ablate_cmd->add_option("-o,--out", ablate.out, "Output directory; default: <output_dir>/ablation");
  ablate_cmd->add_flag("--force", ablate.force, "Overwrite an existing ablation directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitValidation;
  }

  int status = cli::kExitOk;
  if (synth_cmd->parsed()) {
    status = cli::run_guarded([&] {
      if (seed_opt->count() > 0) synth.seed = synth_seed;
      cli::cmd_synth(synth, std::cout);
    }, std::cerr);
  } else if (train_cmd->parsed()) {
    status = cli::run_guarded([&] {
      if (mode_opt->count() > 0) train.mode = mode;
      if (prompts_opt->count() > 0) train.prompts = prompts;
      cli::cmd_train(train, std::cout);
    }, std::cerr);
  } else if (eval_cmd->parsed()) {
    status = cli::run_guarded([&] { cli::cmd_eval(eval, std::cout); }, std::cerr);
  } else if (compare_cmd->parsed()) {
    status = cli::run_guarded([&] { cli::cmd_compare(report_a, report_b, std::cout); }, std::cerr);
  } else if (grad_cmd->parsed()) {
    status = cli::run_guarded([&] {
      if (!cli::cmd_grad_check(grad, std::cout).passed) throw std::runtime_error("gradient check failed");
    }, std::cerr);
  } else if (audit_cmd->parsed()) {
    status = cli::run_guarded([&] { cli::cmd_audit(audit_config, audit_preset, std::cout); }, std::cerr);
  } else if (config_cmd->parsed()) {
    status = cli::run_guarded([&] {
      std::cout << vptsurv::serialize_config(vptsurv::ExperimentConfig::from_preset(config_preset));
    }, std::cerr);
  } else if (ablate_cmd->parsed()) {
    status = cli::run_guarded([&] { cli::cmd_ablate(ablate, std::cout); }, std::cerr);
  }
  return status;
}
