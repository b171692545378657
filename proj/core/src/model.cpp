#include "vptsurv/model.hpp"

#include "vptsurv/errors.hpp"
#include "vptsurv/random.hpp"

namespace vptsurv {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::adaptor: return "adaptor";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::queries: return "queries";
    case ParamGroup::head: return "head";
  }
  return "encoder";
}

ParamGroup param_group(std::string_view name) {
  if (name.starts_with("encoder.")) return ParamGroup::encoder;
  if (name.starts_with("adaptors.")) return ParamGroup::adaptor;
  if (name == "decoder.queries") return ParamGroup::queries;
  if (name.starts_with("decoder.head.")) return ParamGroup::head;
  if (name.starts_with("decoder.")) return ParamGroup::decoder;
  throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
}

ModelState ModelState::initialize(const EncoderConfig& encoder_config,
                                  const DecoderConfig& decoder_config, std::uint64_t seed) {
  encoder_config.validate();
  decoder_config.validate();
  if (encoder_config.dim != decoder_config.dim) {
    throw InvalidArgument("encoder and decoder dims differ");
  }
  ModelState s;
  s.encoder = VptEncoder(encoder_config);
  s.decoder = SurvivalDecoder(decoder_config);

  Rng enc_rng = Rng::derive(seed, 1);
  s.encoder.embed.proj.init_uniform(enc_rng);
  for (auto& layer : s.encoder.layers) {
    layer.attn.init_uniform(enc_rng);
    layer.ffn.init_uniform(enc_rng);
  }

  Rng ada_rng = Rng::derive(seed, 2);
  for (auto& a : s.encoder.adaptors) {
    a.down.init_uniform(ada_rng);
    a.embed.init_uniform(ada_rng);
    a.up.init_zero();
  }

  Rng dec_rng = Rng::derive(seed, 3);
  for (Eigen::Index i = 0; i < s.decoder.queries.value.size(); ++i) {
    s.decoder.queries.value.data()[i] = dec_rng.normal(0.0, 0.02);
  }
  for (auto& layer : s.decoder.layers) {
    layer.self_attn.init_uniform(dec_rng);
    layer.cross_attn.init_uniform(dec_rng);
    layer.ffn.init_uniform(dec_rng);
  }
  s.decoder.head.init_uniform(dec_rng);

  s.freeze_encoder();
  return s;
}

void ModelState::visit(const ParamVisitor& fn) {
  encoder.visit("encoder", fn);
  for (std::size_t i = 0; i < encoder.adaptors.size(); ++i) {
    encoder.adaptors[i].visit("adaptors." + std::to_string(i), fn);
  }
  decoder.visit("decoder", fn);
}

void ModelState::visit(const ConstParamVisitor& fn) const {
  const_cast<ModelState*>(this)->visit(
      ParamVisitor([&fn](const std::string& name, Param& p) { fn(name, p); }));
}

Param& ModelState::param(std::string_view name) {
  Param* found = nullptr;
  visit(ParamVisitor([&](const std::string& n, Param& p) {
    if (n == name) found = &p;
  }));
  if (!found) throw InvalidArgument("no parameter named '" + std::string(name) + "'");
  return *found;
}

void ModelState::zero_grad() {
  visit(ParamVisitor([](const std::string&, Param& p) {
    if (p.trainable) p.zero_grad();
  }));
}

void ModelState::freeze_encoder() {
  encoder.visit("encoder", [](const std::string&, Param& p) {
    p.trainable = false;
    p.grad = Matrix();
  });
}

std::uint64_t ModelState::encoder_fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  const EncoderConfig& c = encoder.config;
  const int dims[] = {c.depth, c.dim, c.heads, c.patch_size, c.tile_size, c.mlp_ratio,
                      static_cast<int>(c.layer_form)};
  mix(dims, sizeof(dims));
  const double pixel[] = {c.pixel_mean, c.pixel_std};
  mix(pixel, sizeof(pixel));
  const_cast<VptEncoder&>(encoder).visit("encoder", [&](const std::string& name, Param& p) {
    mix(name.data(), name.size());
    const Eigen::Index shape[] = {p.value.rows(), p.value.cols()};
    mix(shape, sizeof(shape));
    mix(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  });
  return h;
}

namespace {

void check_batch(const ModelState& state, const TileBatch& batch) {
  if (batch.tiles.empty()) throw EmptySlide("encode_tiles: no tiles");
  const std::size_t sources = state.encoder.config.prompt_sources.size();
  if (sources > 0) {
    if (batch.prompts.size() != batch.tiles.size()) {
      throw InvalidArgument("encode_tiles: prompt images missing for enabled prompt sources");
    }
    for (const auto& p : batch.prompts) {
      if (p.size() != sources) throw InvalidArgument("encode_tiles: wrong prompt count per tile");
    }
  }
}

}  // namespace

Matrix encode_tiles(const ModelState& state, const TileBatch& batch,
                    std::vector<VptEncoder::TileCache>* caches) {
  check_batch(state, batch);
  const bool with_prompts = !state.encoder.config.prompt_sources.empty();
  Matrix pooled(static_cast<Eigen::Index>(batch.tiles.size()), state.encoder.config.dim);
  if (caches) caches->resize(batch.tiles.size());
  for (std::size_t j = 0; j < batch.tiles.size(); ++j) {
    std::span<const Image* const> prompts;
    if (with_prompts) prompts = batch.prompts[j];
    pooled.row(static_cast<Eigen::Index>(j)) =
        state.encoder.encode_tile(*batch.tiles[j], prompts, caches ? &(*caches)[j] : nullptr);
  }
  return pooled;
}

Matrix encode_tiles_frozen(const ModelState& state, const TileBatch& batch) {
  if (batch.tiles.empty()) throw EmptySlide("encode_tiles: no tiles");
  Matrix pooled(static_cast<Eigen::Index>(batch.tiles.size()), state.encoder.config.dim);
  for (std::size_t j = 0; j < batch.tiles.size(); ++j) {
    pooled.row(static_cast<Eigen::Index>(j)) =
        state.encoder.encode_tile(*batch.tiles[j], {}, nullptr, /*use_adaptors=*/false);
  }
  return pooled;
}

ParameterAudit parameter_audit(const ModelState& state) {
  ParameterAudit a;
  state.visit(ConstParamVisitor([&a](const std::string& name, const Param& p) {
    const std::int64_t n = p.size();
    (p.trainable ? a.trainable : a.frozen) += n;
    switch (param_group(name)) {
      case ParamGroup::encoder: a.encoder += n; break;
      case ParamGroup::adaptor: a.adaptor += n; break;
      case ParamGroup::decoder: a.decoder += n; break;
      case ParamGroup::queries: a.queries += n; break;
      case ParamGroup::head: a.head += n; break;
    }
  }));
  const std::int64_t total = a.trainable + a.frozen;
  a.fraction = total > 0 ? static_cast<double>(a.trainable) / static_cast<double>(total) : 0.0;
  return a;
}

}  // namespace vptsurv
