#include "vptsurv/encoder.hpp"

#include <cmath>

#include "vptsurv/errors.hpp"

namespace vptsurv {

std::string_view to_string(LayerForm form) { return form == LayerForm::paper ? "paper" : "standard"; }

LayerForm layer_form_from_string(std::string_view name) {
  if (name == "paper") return LayerForm::paper;
  if (name == "standard") return LayerForm::standard;
  throw InvalidArgument("unknown layer form '" + std::string(name) + "'");
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper_shape() {
  EncoderConfig c;
  c.depth = 12;
  c.dim = 768;
  c.heads = 12;
  c.patch_size = 16;
  c.tile_size = 256;
  c.down_dim = 24;
  return c;
}

void EncoderConfig::validate() const {
  if (depth < 1) throw InvalidArgument("encoder: depth must be >= 1");
  if (patch_size < 1 || tile_size < patch_size || tile_size % patch_size != 0) {
    throw InvalidArgument("encoder: tile size must be a positive multiple of the patch size");
  }
  if (heads < 1 || dim % heads != 0) throw InvalidArgument("encoder: dim must be divisible by heads");
  if (dim % 4 != 0) throw InvalidArgument("encoder: dim must be divisible by 4 for 2-D positions");
  if (down_dim < 1 || down_dim >= dim) throw InvalidArgument("encoder: need 1 <= down_dim < dim");
  if (mlp_ratio < 1) throw InvalidArgument("encoder: mlp ratio must be >= 1");
  if (!(pixel_std > 0.0) || !std::isfinite(pixel_std) || !std::isfinite(pixel_mean)) {
    throw InvalidArgument("encoder: pixel_std must be > 0 and pixel statistics finite");
  }
  for (std::size_t i = 0; i < prompt_sources.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (prompt_sources[i] == prompt_sources[j]) {
        throw InvalidArgument("encoder: duplicate prompt source");
      }
    }
  }
}

Matrix sinusoidal_position_table(int side, int dim) {
  const int quarter = dim / 4;
  Matrix table(side * side, dim);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int token = r * side + c;
      for (int k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        table(token, k) = std::sin(r * omega);
        table(token, quarter + k) = std::cos(r * omega);
        table(token, 2 * quarter + k) = std::sin(c * omega);
        table(token, 3 * quarter + k) = std::cos(c * omega);
      }
    }
  }
  return table;
}

PatchEmbed::PatchEmbed(int tile, int patch, int dim)
    : proj(patch * patch, dim),
      position(sinusoidal_position_table(tile / patch, dim)),
      patch_size(patch),
      tile_size(tile) {}

Matrix PatchEmbed::forward(const Image& tile, double pixel_mean, double pixel_std) const {
  if (tile.height != tile_size || tile.width != tile_size) {
    throw InvalidArgument("patch_embed: expected a " + std::to_string(tile_size) + "x" +
                          std::to_string(tile_size) + " tile, got " + std::to_string(tile.height) +
                          "x" + std::to_string(tile.width));
  }
  const int side = tile_size / patch_size;
  Matrix patches(side * side, patch_size * patch_size);
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      const int token = pr * side + pc;
      for (int r = 0; r < patch_size; ++r) {
        for (int c = 0; c < patch_size; ++c) {
          patches(token, r * patch_size + c) = tile(pr * patch_size + r, pc * patch_size + c);
        }
      }
    }
  }
  if (pixel_mean != 0.0 || pixel_std != 1.0) patches = (patches.array() - pixel_mean) / pixel_std;
  Matrix tokens = proj.forward(patches);
  tokens += position;
  return tokens;
}

void PatchEmbed::visit(const std::string& prefix, const ParamVisitor& fn) {
  proj.visit(prefix + ".proj", fn);
}

EncoderLayer::EncoderLayer(const EncoderConfig& config)
    : form(config.layer_form),
      attn(config.dim, config.heads),
      ffn(config.dim, static_cast<Eigen::Index>(config.dim) * config.mlp_ratio),
      norm1(config.dim),
      norm2(config.layer_form == LayerForm::standard ? config.dim : 0) {}

Matrix EncoderLayer::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != attn.query.in_features()) {
    throw InvalidArgument("encoder_layer: token dim " + std::to_string(x.cols()) +
                          " does not match layer dim " + std::to_string(attn.query.in_features()));
  }
  if (form == LayerForm::paper) {
    Matrix ffn_in = attn.forward(x, x, cache ? &cache->attn : nullptr);
    ffn_in += x;
    Matrix ffn_out = ffn.forward(ffn_in, cache ? &cache->ffn : nullptr);
    Matrix y = norm1.forward(ffn_out, cache ? &cache->norm1 : nullptr);
    y += x;
    if (cache) {
      cache->ffn_in = std::move(ffn_in);
      cache->ffn_out = std::move(ffn_out);
    }
    return y;
  }
  Matrix attn_in = norm1.forward(x, cache ? &cache->norm1 : nullptr);
  Matrix h = attn.forward(attn_in, attn_in, cache ? &cache->attn : nullptr);
  h += x;
  Matrix ffn_in = norm2.forward(h, cache ? &cache->norm2 : nullptr);
  Matrix y = ffn.forward(ffn_in, cache ? &cache->ffn : nullptr);
  y += h;
  if (cache) {
    cache->attn_in = std::move(attn_in);
    cache->ffn_in = std::move(ffn_in);
  }
  return y;
}

Matrix EncoderLayer::backward(const Matrix& x, const Cache& cache, const Matrix& dy) {
  if (form == LayerForm::paper) {
    const Matrix dffn_out = norm1.backward(cache.norm1, dy);
    const Matrix dffn_in = ffn.backward(cache.ffn_in, cache.ffn, dffn_out);
    auto g = attn.backward(x, x, cache.attn, dffn_in);
    Matrix dx = dy + dffn_in;
    dx += g.dquery;
    dx += g.dmemory;
    return dx;
  }
  const Matrix dffn_in = ffn.backward(cache.ffn_in, cache.ffn, dy);
  Matrix dh = dy + norm2.backward(cache.norm2, dffn_in);
  auto g = attn.backward(cache.attn_in, cache.attn_in, cache.attn, dh);
  Matrix dattn_in = g.dquery + g.dmemory;
  dh += norm1.backward(cache.norm1, dattn_in);
  return dh;
}

void EncoderLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  attn.visit(prefix + ".attn", fn);
  ffn.visit(prefix + ".ffn", fn);
  norm1.visit(prefix + ".norm1", fn);
  if (form == LayerForm::standard) norm2.visit(prefix + ".norm2", fn);
}

Adaptor::Adaptor(int dim, int down_dim) : down(dim, down_dim), embed(dim, down_dim), up(down_dim, dim) {}

Matrix Adaptor::forward(const Matrix& tokens, const Matrix& source, Cache* cache) const {
  if (source.rows() == 0) throw InvalidArgument("adaptor: empty source sequence");
  Matrix query = down.forward(tokens);
  Matrix keys = embed.forward(source);
  Matrix mixed = ScaledDotAttention::forward(query, keys, keys, cache ? &cache->attention : nullptr);
  mixed += query;
  Matrix prompt = up.forward(mixed);
  if (cache) {
    cache->query = std::move(query);
    cache->keys = std::move(keys);
    cache->mixed = std::move(mixed);
  }
  return prompt;
}

Adaptor::Grads Adaptor::backward(const Matrix& tokens, const Matrix& source, const Cache& cache,
                                 const Matrix& dout, bool need_tokens_grad, bool need_source_grad) {
  const Matrix dmixed = up.backward(cache.mixed, dout);
  auto att = ScaledDotAttention::backward(cache.query, cache.keys, cache.keys, cache.attention, dmixed);
  Matrix dquery = att.dq + dmixed;
  Matrix dkeys = att.dk + att.dv;
  Grads g;
  g.dtokens = down.backward(tokens, dquery, need_tokens_grad);
  g.dsource = embed.backward(source, dkeys, need_source_grad);
  return g;
}

void Adaptor::visit(const std::string& prefix, const ParamVisitor& fn) {
  down.visit(prefix + ".down", fn);
  embed.visit(prefix + ".embed", fn);
  up.visit(prefix + ".up", fn);
}

VptEncoder::VptEncoder(const EncoderConfig& cfg) : config(cfg) {
  config.validate();
  embed = PatchEmbed(cfg.tile_size, cfg.patch_size, cfg.dim);
  layers.reserve(cfg.depth);
  adaptors.reserve(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    layers.emplace_back(cfg);
    adaptors.emplace_back(cfg.dim, cfg.down_dim);
  }
}

Matrix VptEncoder::embed_sources(std::span<const Image* const> prompts) const {
  if (prompts.empty()) return {};
  const int n = config.tokens_per_tile();
  Matrix source(static_cast<Eigen::Index>(prompts.size()) * n, config.dim);
  for (std::size_t s = 0; s < prompts.size(); ++s) {
    source.middleRows(static_cast<Eigen::Index>(s) * n, n) =
        embed.forward(*prompts[s], config.pixel_mean, config.pixel_std);
  }
  return source;
}

Matrix VptEncoder::vpt_layer(int layer, const Matrix& tokens, const Matrix& source,
                             EncoderLayer::Cache* layer_cache, Adaptor::Cache* adaptor_cache) const {
  if (layer < 0 || layer >= static_cast<int>(layers.size())) {
    throw InvalidArgument("vpt_layer: layer index out of range");
  }
  Matrix out = layers[layer].forward(tokens, layer_cache);
  const Matrix& kv = source.rows() == 0 ? tokens : source;
  out += adaptors[layer].forward(tokens, kv, adaptor_cache);
  return out;
}

RowVector VptEncoder::encode_tile(const Image& tile, std::span<const Image* const> prompts,
                                  TileCache* cache, bool use_adaptors) const {
  Matrix tokens = embed.forward(tile, config.pixel_mean, config.pixel_std);
  Matrix source = use_adaptors ? embed_sources(prompts) : Matrix{};
  if (cache) {
    cache->tokens.assign(1, tokens);
    cache->layer.resize(layers.size());
    cache->adaptor.resize(layers.size());
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (use_adaptors) {
      tokens = vpt_layer(static_cast<int>(i), tokens, source, cache ? &cache->layer[i] : nullptr,
                         cache ? &cache->adaptor[i] : nullptr);
    } else {
      tokens = layers[i].forward(tokens, cache ? &cache->layer[i] : nullptr);
    }
    if (cache) cache->tokens.push_back(tokens);
  }
  if (cache) cache->source = std::move(source);
  return tokens.colwise().mean();
}

void VptEncoder::backward_tile(const TileCache& cache, const RowVector& dpooled) {
  const auto n = cache.tokens.front().rows();
  Matrix dtokens = dpooled.replicate(n, 1) / static_cast<double>(n);
  const bool self_prompt = cache.source.rows() == 0;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Matrix& input = cache.tokens[k];
    // tau_0 comes from the frozen patch embedding, so layer 0 only needs the
    // adaptor's parameter gradients.
    const bool need_input = k > 0;
    auto g = adaptors[k].backward(input, self_prompt ? input : cache.source, cache.adaptor[k],
                                  dtokens, need_input, need_input && self_prompt);
    if (!need_input) break;
    Matrix dinput = layers[k].backward(input, cache.layer[k], dtokens);
    dinput += g.dtokens;
    if (self_prompt) dinput += g.dsource;
    dtokens = std::move(dinput);
  }
}

void VptEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  embed.visit(prefix + ".patch_embed", fn);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].visit(prefix + ".layers." + std::to_string(i), fn);
  }
}

}  // namespace vptsurv
