#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vptsurv/decoder.hpp"
#include "vptsurv/encoder.hpp"

namespace vptsurv {

enum class ParamGroup { encoder, adaptor, decoder, queries, head };

std::string_view to_string(ParamGroup group);
/// Group of a parameter from its hierarchical name.
ParamGroup param_group(std::string_view name);

using ConstParamVisitor = std::function<void(const std::string& name, const Param& param)>;

/// Frozen encoder, trainable adaptors and survival decoder. The freeze mask
/// is each parameter's `trainable` flag; encoder parameters are frozen and
/// carry no gradient storage.
struct ModelState {
  VptEncoder encoder;
  SurvivalDecoder decoder;

  /// Seeded initialisation. The encoder and decoder draws come from
  /// separate streams, so states that share a seed share those weights
  /// regardless of the prompt-source list. Every adaptor up-projection
  /// starts at zero.
  static ModelState initialize(const EncoderConfig& encoder_config,
                               const DecoderConfig& decoder_config, std::uint64_t seed);

  const EncoderConfig& encoder_config() const { return encoder.config; }
  const DecoderConfig& decoder_config() const { return decoder.config; }

  void visit(const ParamVisitor& fn);
  void visit(const ConstParamVisitor& fn) const;

  /// Looks a parameter up by name; throws InvalidArgument if absent.
  Param& param(std::string_view name);

  void zero_grad();
  void freeze_encoder();

  /// FNV-1a over encoder config, parameter names, shapes and bytes.
  std::uint64_t encoder_fingerprint() const;
};

/// Tiles of one slide plus, per tile, its prompt images in the encoder's
/// prompt-source order.
struct TileBatch {
  std::vector<const Image*> tiles;
  std::vector<std::vector<const Image*>> prompts;  // empty or one entry per tile
};

/// Runs every tile through all VPT layers and mean-pools each one; row j of
/// the result is tile j.
Matrix encode_tiles(const ModelState& state, const TileBatch& batch,
                    std::vector<VptEncoder::TileCache>* caches = nullptr);

/// Plain frozen backbone, no adaptors.
Matrix encode_tiles_frozen(const ModelState& state, const TileBatch& batch);

struct ParameterAudit {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  double fraction = 0.0;  // trainable / total
  std::int64_t encoder = 0, adaptor = 0, decoder = 0, queries = 0, head = 0;
};

ParameterAudit parameter_audit(const ModelState& state);

}  // namespace vptsurv
