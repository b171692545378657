#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vptsurv/image.hpp"
#include "vptsurv/survival.hpp"
#include "vptsurv/wsi.hpp"

namespace vptsurv {

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

/// One line of the JSON-lines manifest.
struct ManifestRecord {
  std::string patient_id;
  std::string wsi_id;
  std::string tiles;  // tile-archive directory, relative to the manifest
  double time_days = 0.0;
  bool censored = false;
  Split split = Split::train;

  SurvivalLabel label() const { return {time_days, censored, 1}; }
};

struct CohortManifest {
  std::vector<ManifestRecord> records;

  /// Throws InvalidArgument on duplicate WSI ids, negative times, or a
  /// patient appearing in more than one split.
  void validate() const;
  std::vector<std::size_t> indices(Split split) const;
};

struct LatentRisk {
  std::string patient_id;
  double latent_risk = 0.0;
};

/// Generator parameters for a cohort with a planted survival signal.
/// Each patient gets a latent risk r ~ N(risk_mean, risk_std^2). Event
/// times follow a discrete hazard 1 - exp(-baseline_hazard * exp(hazard_link * r))
/// per `interval_days`. Tiles are either "tumour" (cell count per tile
/// ~ Poisson(cell_rate * exp(cell_risk_gain * r))) or "stroma" (oriented
/// stripes plus risk-independent cells), over a low-frequency stain field.
struct SyntheticSpec {
  std::uint64_t seed = 2024;
  int n_patients = 200;
  int tiles_per_wsi = 64;
  int tile_size = 32;
  int patch_size = 8;

  double risk_mean = 0.0;
  double risk_std = 1.0;
  double baseline_hazard = 0.08;
  double hazard_link = 2.0;
  double interval_days = 30.0;
  double censoring_rate = 0.3;

  double background_mean = 0.55;
  double background_jitter = 0.02;
  double stain_amplitude = 0.03;
  double pixel_noise = 0.05;
  double tumor_fraction_min = 0.3;
  double tumor_fraction_max = 0.8;
  double cell_rate = 2.0;
  double cell_risk_gain = 0.8;
  double cell_amplitude = 0.35;
  double cell_radius = 1.2;
  double stroma_cell_rate = 2.0;
  double stripe_amplitude = 0.1;
  /// Per-slide multiplicative jitter U(1 - j, 1 + j) of the pixel-noise
  /// and stripe amplitudes (scanner and stroma variation).
  double nuisance_jitter = 0.8;

  double structure_cutoff = kDefaultStructureCutoff;
  double train_fraction = 0.6;
  double val_fraction = 0.2;

  /// Throws InvalidArgument on out-of-range fields.
  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// A WSI in memory: retained tiles, their grid coordinates and the aligned
/// prompt images (empty when not built or not loaded).
struct Slide {
  ManifestRecord record;
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<TileCoord> coords;
  std::vector<Image> tiles;
  std::vector<Image> scale;
  std::vector<Image> structure;

  const std::vector<Image>& prompts(PromptKind kind) const {
    return kind == PromptKind::scale ? scale : structure;
  }
  /// FNV-1a over tile coordinates and pixel bytes.
  std::uint64_t tile_hash() const;
};

struct Cohort {
  CohortManifest manifest;
  std::vector<Slide> slides;      // parallel to manifest.records
  std::vector<LatentRisk> latent; // only for synthetic cohorts

  std::vector<std::size_t> indices(Split split) const { return manifest.indices(split); }
};

/// Pure function of the spec: identical spec -> identical cohort.
Cohort synthesize_cohort(const SyntheticSpec& spec);

/// Prompt images are quantised to their on-disk precision so that a
/// written-then-loaded cohort equals the in-memory one.
Image quantize_tile(const Image& image);
Image quantize_prompt(PromptKind kind, const Image& image);

/// Writes manifest.jsonl, latent.jsonl (when present) and
/// tiles/<wsi_id>/r{row}_c{col}[_kind].png under `dir`.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

CohortManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const CohortManifest& manifest, const std::filesystem::path& manifest_path);
std::vector<LatentRisk> read_latent_sidecar(const std::filesystem::path& path);
void write_latent_sidecar(std::span<const LatentRisk> latent, const std::filesystem::path& path);

/// Loads the manifest in `dir` and every tile archive. Prompt images are
/// loaded when present; missing ones are rebuilt from the tile grid.
Cohort load_cohort(const std::filesystem::path& dir);

/// Concordance of the latent risks against the manifest labels.
/// Throws InvalidArgument when patient ids do not match one-to-one.
double oracle_ci(const CohortManifest& manifest, std::span<const LatentRisk> latent);

struct CohortSummary {
  int patients = 0;
  int slides = 0;
  int tiles_per_slide_min = 0;
  int tiles_per_slide_max = 0;
  double censored_fraction = 0.0;
  int train = 0, val = 0, test = 0;
};
CohortSummary summarize(const Cohort& cohort);

}  // namespace vptsurv
