#include "commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "vptsurv/checkpoint.hpp"
#include "vptsurv/errors.hpp"

namespace vptsurv::cli {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.bin";
constexpr const char* kReportFile = "report.json";
constexpr const char* kConfigFile = "config.ini";

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

void write_km_csv(const SurvivalCurveEstimate& km, const fs::path& path) {
  std::ostringstream s;
  s << std::setprecision(17) << "time,survival_prob\n0,1\n";
  for (std::size_t i = 0; i < km.event_times.size(); ++i) {
    s << km.event_times[i] << ',' << km.survival_probs[i] << '\n';
  }
  write_text(path, s.str());
}

fs::path data_dir_of(const ExperimentConfig& config, const fs::path& override_dir) {
  return resolve_output(override_dir.empty() ? config.data_dir : override_dir);
}

std::string run_name(const ExperimentConfig& config) {
  std::string name(to_string(config.train.mode));
  if (config.train.mode == TrainMode::end_to_end) {
    const std::string sources = format_prompt_list(config.encoder.prompt_sources);
    name += sources.empty() ? "-self" : "-" + sources;
    for (char& c : name) {
      if (c == ',') c = '+';
    }
  }
  return name;
}

Cohort load_cohort_checked(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.jsonl")) {
    throw FormatError("no cohort at " + dir.string() + " (manifest.jsonl missing; run `vptsurv synth` first)");
  }
  return load_cohort(dir);
}

void print_report(const RunReport& r, std::ostream& out) {
  out << r.mode << " run: selected epoch " << r.selected_epoch << "/" << r.val_ci.size() << ", val CI "
      << fixed(r.val_ci.at(static_cast<std::size_t>(r.selected_epoch - 1))) << ", test CI " << fixed(r.test_ci)
      << ", trainable " << r.params.trainable << "/" << (r.params.trainable + r.params.frozen) << " ("
      << fixed(100.0 * r.params.fraction, 2) << "%), " << fixed(r.wall_seconds, 1) << " s\n";
}

}  // namespace

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

fs::path resolve_output(const fs::path& path) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0' || path.is_absolute()) return path;
  return fs::path(root) / path;
}

ExperimentConfig load_experiment(const fs::path& config_path, const std::string& preset) {
  ExperimentConfig config =
      config_path.empty() ? ExperimentConfig::from_preset(preset) : load_config(config_path);
  config.validate();
  return config;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw InvalidArgument(dir.string() + " already exists (pass --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

SynthOutcome cmd_synth(const SynthOptions& options, std::ostream& out) {
  ExperimentConfig config = load_experiment(options.config);
  if (options.seed) config.synthetic.seed = *options.seed;
  config.validate();

  SynthOutcome outcome;
  outcome.dir = data_dir_of(config, options.out);
  prepare_output_dir(outcome.dir, options.force);

  const Cohort cohort = synthesize_cohort(config.synthetic);
  write_cohort(cohort, outcome.dir);
  save_config(config, outcome.dir / kConfigFile);
  outcome.summary = summarize(cohort);
  outcome.oracle_ci = oracle_ci(cohort.manifest, cohort.latent);

  const CohortSummary& s = outcome.summary;
  out << "cohort written to " << outcome.dir.string() << '\n'
      << "  patients " << s.patients << ", slides " << s.slides << ", tiles/slide " << s.tiles_per_slide_min;
  if (s.tiles_per_slide_max != s.tiles_per_slide_min) out << ".." << s.tiles_per_slide_max;
  out << '\n'
      << "  censored " << fixed(100.0 * s.censored_fraction, 1) << "%, split train/val/test " << s.train << "/"
      << s.val << "/" << s.test << '\n'
      << "  oracle CI " << fixed(outcome.oracle_ci) << " (seed " << config.synthetic.seed << ")\n";
  return outcome;
}

TrainOutcome train_on_cohort(const ExperimentConfig& config, const Cohort& cohort, const fs::path& dir,
                             bool force, std::ostream& out) {
  prepare_output_dir(dir, force);
  save_config(config, dir / kConfigFile);

  TrainConfig schedule = config.train;
  schedule.checkpoint_path = dir / kCheckpointFile;
  if (schedule.mode == TrainMode::two_stage) schedule.feature_cache_dir = dir / "features";
  schedule.on_epoch = [&out](const EpochLog& log) {
    out << "  epoch " << std::setw(2) << log.epoch << "  lr " << std::scientific << std::setprecision(2)
        << log.learning_rate << std::defaultfloat << "  loss " << fixed(log.train_loss) << "  val CI "
        << fixed(log.val_ci) << "  " << fixed(log.seconds, 1) << " s\n"
        << std::flush;
  };

  out << "training " << display_name(schedule.mode) << " (prompt sources: "
      << (config.encoder.prompt_sources.empty() ? std::string("self")
                                                : format_prompt_list(config.encoder.prompt_sources))
      << ") -> " << dir.string() << '\n';
  TrainResult result = train(cohort, config.encoder, config.decoder, schedule);
  write_run_report(result.report, dir / kReportFile);
  print_report(result.report, out);
  return {dir, std::move(result.report)};
}

TrainOutcome cmd_train(const TrainOptions& options, std::ostream& out) {
  ExperimentConfig config = load_experiment(options.config);
  if (options.mode) config.train.mode = train_mode_from_string(*options.mode);
  if (options.prompts) config.encoder.prompt_sources = parse_prompt_list(*options.prompts);
  if (config.train.mode == TrainMode::two_stage) config.encoder.prompt_sources.clear();
  config.validate();

  const Cohort cohort = load_cohort_checked(data_dir_of(config, options.data));
  const fs::path dir = options.out.empty() ? resolve_output(config.output_dir) / run_name(config)
                                           : resolve_output(options.out);
  return train_on_cohort(config, cohort, dir, options.force, out);
}

EvalOutcome cmd_eval(const EvalOptions& options, std::ostream& out) {
  if (options.tiles < 1) throw InvalidArgument("--tiles must be >= 1");
  const Split split = split_from_string(options.split);
  if (!fs::exists(options.checkpoint)) throw FormatError("no checkpoint at " + options.checkpoint.string());
  const Checkpoint checkpoint = load_checkpoint(options.checkpoint);
  const Cohort cohort = load_cohort_checked(options.data);
  for (const Slide& slide : cohort.slides) {
    for (const Image& tile : slide.tiles) {
      if (tile.height != checkpoint.state.encoder_config().tile_size ||
          tile.width != checkpoint.state.encoder_config().tile_size) {
        throw FormatError("checkpoint expects " + std::to_string(checkpoint.state.encoder_config().tile_size) +
                              "-pixel tiles, cohort has " + std::to_string(tile.width));
      }
    }
  }

  EvalOutcome outcome;
  outcome.evaluation = evaluate(checkpoint.state, cohort, split, options.tiles, options.seed);
  const Evaluation& ev = outcome.evaluation;

  const fs::path dir = options.out.empty() ? options.checkpoint.parent_path() : resolve_output(options.out);
  fs::create_directories(dir);
  const std::string stem = "eval-" + options.split;
  outcome.metrics = dir / (stem + ".json");
  outcome.risks = dir / (stem + "-risks.csv");
  outcome.km_low = dir / (stem + "-km_low.csv");
  outcome.km_high = dir / (stem + "-km_high.csv");
  if (!options.force) {
    for (const fs::path& p : {outcome.metrics, outcome.risks, outcome.km_low, outcome.km_high}) {
      if (fs::exists(p)) throw InvalidArgument(p.string() + " already exists (pass --force to overwrite)");
    }
  }

  int events = 0, low = 0, high = 0, tiles_min = 0, tiles_max = 0;
  for (const PatientRisk& p : ev.patients) {
    events += p.label.censored ? 0 : 1;
    (p.group == RiskGroup::high ? high : low) += 1;
  }
  for (std::size_t i = 0; i < ev.slides.size(); ++i) {
    const int used = ev.slides[i].prediction.tiles_used;
    tiles_min = i == 0 ? used : std::min(tiles_min, used);
    tiles_max = std::max(tiles_max, used);
  }
  json predictions = json::array();
  for (const SlidePrediction& s : ev.slides) {
    predictions.push_back({{"patient_id", s.patient_id},
                           {"wsi_id", s.wsi_id},
                           {"risk", s.prediction.risk},
                           {"hazards", s.prediction.hazards.hazards},
                           {"survival", s.prediction.hazards.survival},
                           {"tiles_used", s.prediction.tiles_used}});
  }
  const json metrics = {{"split", options.split},
                        {"ci", ev.ci},
                        {"patients", ev.patients.size()},
                        {"slides", ev.slides.size()},
                        {"events", events},
                        {"tiles_requested", options.tiles},
                        {"tiles_used_min", tiles_min},
                        {"tiles_used_max", tiles_max},
                        {"eval_seed", options.seed},
                        {"mode", checkpoint.meta.mode},
                        {"bin_edges", checkpoint.meta.bin_edges},
                        {"groups", {{"low", {{"patients", low}, {"km", outcome.km_low.filename().string()}}},
                                    {"high", {{"patients", high}, {"km", outcome.km_high.filename().string()}}}}},
                        {"risks", outcome.risks.filename().string()},
                        {"predictions", predictions}};
  write_text(outcome.metrics, metrics.dump(2) + "\n");

  std::ostringstream risks;
  risks << std::setprecision(17) << "patient_id,risk,time_days,censored,group\n";
  for (const PatientRisk& p : ev.patients) {
    risks << p.patient_id << ',' << p.risk << ',' << p.label.time << ',' << (p.label.censored ? 1 : 0) << ','
          << to_string(p.group) << '\n';
  }
  write_text(outcome.risks, risks.str());
  write_km_csv(ev.km_low, outcome.km_low);
  write_km_csv(ev.km_high, outcome.km_high);

  out << options.split << " split: CI " << fixed(ev.ci) << " over " << ev.patients.size() << " patients ("
      << events << " events), tiles/slide " << tiles_min;
  if (tiles_max != tiles_min) out << ".." << tiles_max;
  out << "\n  metrics " << outcome.metrics.string() << '\n';
  return outcome;
}

Comparison compare_reports(const RunReport& a, const RunReport& b) {
  Comparison c;
  c.label_a = a.mode;
  c.label_b = b.mode;
  c.ci_a = a.test_ci;
  c.ci_b = b.test_ci;
  c.delta = a.test_ci - b.test_ci;
  c.relative = c.delta / b.test_ci;
  return c;
}

Comparison cmd_compare(const fs::path& report_a, const fs::path& report_b, std::ostream& out) {
  const Comparison c = compare_reports(read_run_report(report_a), read_run_report(report_b));
  out << std::left << std::setw(14) << "run" << std::setw(12) << "test CI" << "report\n"
      << std::setw(14) << ("A " + c.label_a) << std::setw(12) << fixed(c.ci_a) << report_a.string() << '\n'
      << std::setw(14) << ("B " + c.label_b) << std::setw(12) << fixed(c.ci_b) << report_b.string() << '\n'
      << "delta (A - B)      " << (c.delta >= 0 ? "+" : "") << fixed(c.delta) << '\n'
      << "relative (A-B)/B   " << (c.relative >= 0 ? "+" : "") << fixed(100.0 * c.relative, 2) << "%\n";
  return c;
}

GradientCheckResult cmd_grad_check(const GradCheckOptions& options, std::ostream& out) {
  if (options.slides < 1 || options.tiles < 1 || options.coordinates < 1) {
    throw InvalidArgument("grad-check: --slides, --tiles and --coordinates must be >= 1");
  }
  ExperimentConfig config = load_experiment(options.config);
  SyntheticSpec spec = config.synthetic;
  spec.n_patients = std::max(20, 2 * options.slides);
  spec.tiles_per_wsi = std::max(options.tiles, 4);
  const Cohort cohort = synthesize_cohort(spec);

  std::vector<SurvivalLabel> labels;
  for (const auto& r : cohort.manifest.records) labels.push_back(r.label());
  const Discretization bins = discretize_time(labels, config.train.bins);

  std::vector<std::size_t> tiles(static_cast<std::size_t>(options.tiles));
  for (std::size_t k = 0; k < tiles.size(); ++k) tiles[k] = k;
  std::vector<SlideExample> examples;
  for (int i = 0; i < options.slides; ++i) {
    SurvivalLabel label = labels[static_cast<std::size_t>(i)];
    label.bin = bins.bins[static_cast<std::size_t>(i)];
    examples.push_back({make_tile_batch(cohort.slides[static_cast<std::size_t>(i)], config.encoder, tiles), label});
  }

  ModelState state = ModelState::initialize(config.encoder, config.decoder, config.train.seed);
  // With zero up-projections no gradient reaches the rest of the adaptor.
  randomize_adaptor_up(state, config.train.seed + 1, 0.05);
  GradientCheckOptions gc;
  gc.coordinates = options.coordinates;
  gc.tolerance = options.tolerance;
  const GradientCheckResult r = gradient_check(state, examples, gc);

  out << "gradient check: " << r.checked << " trainable coordinates (";
  bool first = true;
  for (const auto& [group, n] : r.per_group) {
    out << (first ? "" : ", ") << group << " " << n;
    first = false;
  }
  out << "), " << r.frozen_checked << " frozen\n"
      << "  max relative error " << std::scientific << std::setprecision(3) << r.max_relative_error
      << std::defaultfloat << " at " << r.worst_parameter << " (tolerance " << options.tolerance << ")\n"
      << "  frozen gradients zero: " << (r.frozen_gradients_zero ? "yes" : "no") << '\n'
      << "  " << (r.passed ? "PASS" : "FAIL") << '\n';
  return r;
}

ParameterAudit cmd_audit(const fs::path& config_path, const std::string& preset, std::ostream& out) {
  const ExperimentConfig config = load_experiment(config_path, preset);
  const ModelState state = ModelState::initialize(config.encoder, config.decoder, config.train.seed);
  const ParameterAudit a = parameter_audit(state);
  out << "preset " << config.preset << ": encoder dim " << config.encoder.dim << " x " << config.encoder.depth
      << " layers, adaptor down " << config.encoder.down_dim << ", decoder " << config.decoder.layers
      << " layers\n"
      << std::left << std::setw(10) << "group" << std::right << std::setw(14) << "parameters" << '\n';
  const std::pair<const char*, std::int64_t> rows[] = {{"encoder", a.encoder}, {"adaptor", a.adaptor},
                                                       {"decoder", a.decoder}, {"queries", a.queries},
                                                       {"head", a.head}};
  for (const auto& [name, n] : rows) out << std::left << std::setw(10) << name << std::right << std::setw(14) << n << '\n';
  out << std::left << std::setw(10) << "trainable" << std::right << std::setw(14) << a.trainable << '\n'
      << std::left << std::setw(10) << "frozen" << std::right << std::setw(14) << a.frozen << '\n'
      << "trainable fraction " << fixed(a.fraction, 6) << '\n';
  return a;
}

std::vector<AblationRow> cmd_ablate(const AblateOptions& options, std::ostream& out) {
  ExperimentConfig config = load_experiment(options.config);
  config.train.mode = TrainMode::end_to_end;
  const Cohort cohort = load_cohort_checked(data_dir_of(config, options.data));
  const fs::path root =
      options.out.empty() ? resolve_output(config.output_dir) / "ablation" : resolve_output(options.out);
  prepare_output_dir(root, options.force);

  std::vector<AblationRow> rows = {
      {"VPT", {}, {}},
      {"VPT + structure", {PromptKind::structure}, {}},
      {"VPT + structure + scale", {PromptKind::structure, PromptKind::scale}, {}},
  };
  json summary = json::array();
  for (AblationRow& row : rows) {
    config.encoder.prompt_sources = row.sources;
    row.report = train_on_cohort(config, cohort, root / run_name(config), false, out).report;
    summary.push_back({{"configuration", row.name},
                       {"prompt_sources", format_prompt_list(row.sources)},
                       {"test_ci", row.report.test_ci},
                       {"selected_epoch", row.report.selected_epoch},
                       {"report", (run_name(config) + "/" + kReportFile)}});
  }
  write_text(root / "ablation.json", summary.dump(2) + "\n");
  const std::string table = format_ablation_table(rows);
  write_text(root / "ablation.txt", table);
  out << '\n' << table;
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(26) << "configuration" << std::setw(18) << "prompt sources" << std::right
    << std::setw(7) << "epoch" << std::setw(10) << "test CI" << std::setw(10) << "delta" << '\n';
  for (const AblationRow& row : rows) {
    const std::string sources = row.sources.empty() ? "self" : format_prompt_list(row.sources);
    const double delta = row.report.test_ci - rows.front().report.test_ci;
    s << std::left << std::setw(26) << row.name << std::setw(18) << sources << std::right << std::setw(7)
      << row.report.selected_epoch << std::setw(10) << fixed(row.report.test_ci) << std::setw(10)
      << ((delta >= 0 ? "+" : "") + fixed(delta)) << '\n';
  }
  return s.str();
}

}  // namespace vptsurv::cli
