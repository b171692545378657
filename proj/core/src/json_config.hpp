#pragma once

// JSON views of the model configs, shared by the checkpoint and report
// writers. Private to the library so the public headers stay free of the
// JSON dependency.

#include <json.hpp>

#include "vptsurv/decoder.hpp"
#include "vptsurv/encoder.hpp"
#include "vptsurv/errors.hpp"

namespace vptsurv {

inline nlohmann::json to_json(const EncoderConfig& c) {
  nlohmann::json sources = nlohmann::json::array();
  for (PromptKind k : c.prompt_sources) sources.push_back(std::string(to_string(k)));
  return {{"depth", c.depth},           {"dim", c.dim},
          {"heads", c.heads},           {"patch_size", c.patch_size},
          {"tile_size", c.tile_size},   {"down_dim", c.down_dim},
          {"mlp_ratio", c.mlp_ratio},   {"layer_form", std::string(to_string(c.layer_form))},
          {"prompt_sources", sources},  {"pixel_mean", c.pixel_mean},
          {"pixel_std", c.pixel_std}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.depth = j.at("depth").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.tile_size = j.at("tile_size").get<int>();
  c.down_dim = j.at("down_dim").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.layer_form = layer_form_from_string(j.at("layer_form").get<std::string>());
  for (const auto& s : j.at("prompt_sources")) c.prompt_sources.push_back(prompt_kind_from_string(s.get<std::string>()));
  c.pixel_mean = j.at("pixel_mean").get<double>();
  c.pixel_std = j.at("pixel_std").get<double>();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const DecoderConfig& c) {
  return {{"layers", c.layers},   {"dim", c.dim},   {"heads", c.heads},
          {"queries", c.queries}, {"bins", c.bins}, {"mlp_ratio", c.mlp_ratio}};
}

inline DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.queries = j.at("queries").get<int>();
  c.bins = j.at("bins").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.validate();
  return c;
}

}  // namespace vptsurv
