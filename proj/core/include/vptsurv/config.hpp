#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "vptsurv/cohort.hpp"
#include "vptsurv/decoder.hpp"
#include "vptsurv/encoder.hpp"
#include "vptsurv/trainer.hpp"

namespace vptsurv {

/// Everything one experiment needs: cohort generator, model shapes, the
/// optimisation schedule and where data and outputs live.
///
/// On disk this is an INI-style document:
///
///     preset = desk
///     [synthetic]
///     seed = 2024
///     ...
///     [encoder] / [decoder] / [train] / [paths]
///
/// Unknown sections or keys are rejected; keys that are absent keep the
/// preset's value.
struct ExperimentConfig {
  std::string preset = "desk";
  SyntheticSpec synthetic;
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;
  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "runs";

  static ExperimentConfig desk();
  static ExperimentConfig paper_shape();
  /// "desk" or "paper-shape"; throws InvalidArgument otherwise.
  static ExperimentConfig from_preset(std::string_view name);

  /// Validates every section and their cross-consistency (tile geometry,
  /// model width, number of bins).
  void validate() const;
};

/// Text form; doubles are written in their shortest round-trip form, so
/// parsing the result reproduces the config exactly.
std::string serialize_config(const ExperimentConfig& config);

/// Throws InvalidArgument on syntax errors, unknown keys, bad values or an
/// inconsistent result (see ExperimentConfig::validate).
ExperimentConfig parse_config(std::string_view text);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// "structure,scale" -> {structure, scale}; "" -> {}.
std::vector<PromptKind> parse_prompt_list(std::string_view text);
std::string format_prompt_list(const std::vector<PromptKind>& sources);

}  // namespace vptsurv
