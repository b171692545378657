#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vptsurv/cohort.hpp"
#include "vptsurv/model.hpp"
#include "vptsurv/survival.hpp"

namespace vptsurv {

enum class TrainMode { end_to_end, two_stage };

std::string_view to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view name);
/// "end-to-end" / "two-stage", as printed in reports.
std::string_view display_name(TrainMode mode);

struct EpochLog {
  int epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_ci = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  TrainMode mode = TrainMode::end_to_end;
  int train_tiles_per_wsi = 200;
  int eval_tiles_per_wsi = 1000;
  double learning_rate = 5e-5;
  /// Adaptor parameters step at learning_rate * adaptor_lr_scale.
  double adaptor_lr_scale = 1.0;
  double min_learning_rate = 0.0;
  int epochs = 15;
  int batch_size = 4;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 7;
  std::uint64_t eval_seed = 11;
  int bins = 4;

  std::filesystem::path checkpoint_path;    // empty: keep in memory only
  std::filesystem::path feature_cache_dir;  // two-stage; empty: in memory only
  std::function<void(const EpochLog&)> on_epoch;

  void validate() const;
};

struct RunReport {
  std::string mode;  // display name
  std::vector<std::string> prompt_sources;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_ci;      // per epoch
  int selected_epoch = 0;          // 1-based argmax of val_ci, earliest on ties
  double test_ci = 0.0;
  double step0_loss = 0.0;         // first batch, before any update
  ParameterAudit params;
  double wall_seconds = 0.0;
  int train_tiles_per_wsi = 0;
  int eval_tiles_per_wsi = 0;
  std::uint64_t seed = 0;
  std::vector<double> bin_edges;
};

void write_run_report(const RunReport& report, const std::filesystem::path& path);
RunReport read_run_report(const std::filesystem::path& path);

struct TrainResult {
  ModelState state;  // parameters of the selected epoch
  RunReport report;
  TimeBinning binning;
};

/// Optimises adaptors, decoder, queries and head on the censored NLL with
/// a frozen encoder; tiles are re-sampled every epoch.
TrainResult train_end_to_end(const Cohort& cohort, const EncoderConfig& encoder,
                             const DecoderConfig& decoder, const TrainConfig& config);

/// Frozen features are computed once (no adaptors) and cached; only the
/// decoder, queries and head are trained. Prompt sources are ignored.
TrainResult train_two_stage(const Cohort& cohort, const EncoderConfig& encoder,
                            const DecoderConfig& decoder, const TrainConfig& config);

/// Dispatches on config.mode.
TrainResult train(const Cohort& cohort, const EncoderConfig& encoder, const DecoderConfig& decoder,
                  const TrainConfig& config);

/// One slide's tiles with its label.
struct SlideExample {
  TileBatch batch;
  SurvivalLabel label;
};

/// Tiles `indices` of `slide` plus the prompt images the encoder needs.
TileBatch make_tile_batch(const Slide& slide, const EncoderConfig& config,
                          std::span<const std::size_t> indices);

/// Mean NLL over the examples, forward only.
double batch_loss(const ModelState& state, std::span<const SlideExample> examples);

/// Mean NLL; accumulates its gradient into the trainable parameters.
double batch_loss_and_gradients(ModelState& state, std::span<const SlideExample> examples);

/// Tile subset used for evaluation: min(n_tiles, available) indices drawn
/// without replacement from a stream keyed by (eval_seed, wsi_id), sorted.
std::vector<std::size_t> eval_tile_indices(const Slide& slide, int n_tiles, std::uint64_t eval_seed);

struct RiskPrediction {
  double risk = 0.0;
  HazardPrediction hazards;
  int tiles_used = 0;
};

/// Samples tiles, encodes, decodes; risk = sum_t (1 - S(t)).
RiskPrediction predict_risk(const Slide& slide, const ModelState& state, int n_tiles,
                            std::uint64_t eval_seed);

struct SlidePrediction {
  std::string patient_id;
  std::string wsi_id;
  RiskPrediction prediction;
};

struct PatientRisk {
  std::string patient_id;
  double risk = 0.0;  // mean over the patient's slides
  SurvivalLabel label;
  RiskGroup group = RiskGroup::low;
};

struct Evaluation {
  double ci = 0.0;
  std::vector<SlidePrediction> slides;
  std::vector<PatientRisk> patients;
  SurvivalCurveEstimate km_low;
  SurvivalCurveEstimate km_high;
};

/// Per-patient CI, median-risk groups and Kaplan-Meier curves per group.
Evaluation evaluate(const ModelState& state, const Cohort& cohort, Split split, int n_tiles,
                    std::uint64_t eval_seed);

/// Same, from already-computed slide risks (patient aggregation only).
Evaluation evaluate_predictions(const Cohort& cohort, std::vector<SlidePrediction> slides);

/// Two-stage feature store: frozen pooled tokens of every tile of every
/// slide. Blobs on disk are keyed by encoder fingerprint and tile hash.
class FeatureCache {
 public:
  static FeatureCache build(const ModelState& state, const Cohort& cohort,
                            const std::filesystem::path& dir = {});

  const Matrix& features(std::size_t slide) const { return features_.at(slide); }
  std::uint64_t fingerprint() const { return fingerprint_; }
  std::size_t size() const { return features_.size(); }
  /// Slides loaded from disk rather than recomputed.
  std::size_t reused() const { return reused_; }

 private:
  std::vector<Matrix> features_;
  std::uint64_t fingerprint_ = 0;
  std::size_t reused_ = 0;
};

void write_feature_blob(const std::filesystem::path& path, std::uint64_t fingerprint,
                        std::uint64_t tile_hash, const Matrix& features);
/// Throws StaleCache when the stored fingerprint or tile hash differ.
Matrix read_feature_blob(const std::filesystem::path& path, std::uint64_t fingerprint,
                         std::uint64_t tile_hash);

/// AdamW over the trainable parameters of a state.
class AdamW {
 public:
  AdamW(const ModelState& state, double beta1, double beta2, double eps, double weight_decay,
        double adaptor_lr_scale = 1.0);
  void step(ModelState& state, double learning_rate);

 private:
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_, adaptor_scale_;
  long step_ = 0;
};

/// eta_min + (eta_max - eta_min) (1 + cos(pi epoch / epochs)) / 2, epoch 0-based.
double cosine_annealing_lr(double eta_max, double eta_min, int epoch, int epochs);

struct GradientCheckOptions {
  int coordinates = 256;        // trainable coordinates, split across groups
  int frozen_coordinates = 32;  // encoder coordinates that must read exactly 0
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double gradient_floor = 1e-6;
  std::uint64_t seed = 5;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  bool passed = false;
  int checked = 0;
  std::map<std::string, int> per_group;
  int frozen_checked = 0;
  bool frozen_gradients_zero = true;
  double loss = 0.0;
  double gradient_norm = 0.0;  // over all trainable parameters
};

GradientCheckResult gradient_check(ModelState& state, std::span<const SlideExample> examples,
                                   const GradientCheckOptions& options = {});

/// Fills every adaptor up-projection with Uniform(-scale, scale), so that
/// gradients reach the down/embed maps. Used by verification only.
void randomize_adaptor_up(ModelState& state, std::uint64_t seed, double scale);

}  // namespace vptsurv
