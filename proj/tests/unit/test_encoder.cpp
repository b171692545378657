#include <doctest.h>

#include <cmath>
#include <cstring>

#include "vptsurv/errors.hpp"
#include "vptsurv/model.hpp"
#include "vptsurv/random.hpp"
#include "vptsurv/trainer.hpp"

using namespace vptsurv;

namespace {

EncoderConfig desk_encoder(std::vector<PromptKind> sources = {}) {
  EncoderConfig c = EncoderConfig::desk();
  c.prompt_sources = std::move(sources);
  return c;
}

DecoderConfig desk_decoder() { return DecoderConfig{}; }

Image random_tile(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

Matrix random_tokens(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("patch embedding: token counts and the zero tile") {
  const PatchEmbed paper(256, 16, 768);
  CHECK(paper.forward(Image(256, 256)).rows() == 256);

  const ModelState state = ModelState::initialize(desk_encoder(), desk_decoder(), 1);
  const PatchEmbed& embed = state.encoder.embed;
  const Matrix tokens = embed.forward(Image(32, 32));
  REQUIRE(tokens.rows() == 16);
  REQUIRE(tokens.cols() == 64);
  const Matrix expected = embed.position.rowwise() + embed.proj.bias.value.row(0);
  CHECK((tokens - expected).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(embed.forward(Image(16, 16)), InvalidArgument);
}

TEST_CASE("pixel standardisation happens before the projection") {
  const ModelState state = ModelState::initialize(desk_encoder(), desk_decoder(), 1);
  const PatchEmbed& embed = state.encoder.embed;
  const Image tile = random_tile(32, 2);
  Image manual = tile;
  for (float& v : manual.pixels) v = static_cast<float>((v - 0.5) / 0.25);
  const Matrix a = embed.forward(tile, 0.5, 0.25);
  const Matrix b = embed.forward(manual);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("sinusoidal table: rows in the first half, columns in the second") {
  const Matrix t = sinusoidal_position_table(4, 8);
  CHECK(t(0, 0) == 0.0);              // sin(0 * omega)
  CHECK(t(0, 2) == 1.0);              // cos(0 * omega)
  CHECK(t(1, 4) == std::sin(1.0));    // column 1, k = 0
  CHECK(t(4, 0) == std::sin(1.0));    // row 1, k = 0
}

TEST_CASE("paper-form layer computes LN(FFN(Attn(x) + x)) + x") {
  const ModelState state = ModelState::initialize(desk_encoder(), desk_decoder(), 3);
  const EncoderLayer& layer = state.encoder.layers[0];
  const Matrix x = random_tokens(16, 64, 4);
  const Matrix inner = layer.attn.forward(x, x) + x;
  const Matrix expected = layer.norm1.forward(layer.ffn.forward(inner)) + x;
  CHECK(bit_equal(layer.forward(x), expected));
}

TEST_CASE("standard-form layer is the pre-norm block") {
  EncoderConfig cfg = desk_encoder();
  cfg.layer_form = LayerForm::standard;
  const ModelState state = ModelState::initialize(cfg, desk_decoder(), 3);
  const EncoderLayer& layer = state.encoder.layers[1];
  const Matrix x = random_tokens(16, 64, 5);
  const Matrix a = layer.norm1.forward(x);
  const Matrix h = layer.attn.forward(a, a) + x;
  const Matrix expected = layer.ffn.forward(layer.norm2.forward(h)) + h;
  CHECK(bit_equal(layer.forward(x), expected));
  CHECK(layer_form_from_string("standard") == LayerForm::standard);
  CHECK_THROWS_AS(layer_form_from_string("post-norm"), InvalidArgument);
}

TEST_CASE("encoder layer: shapes, single token and pinned output") {
  const ModelState state = ModelState::initialize(desk_encoder(), desk_decoder(), 11);
  const EncoderLayer& layer = state.encoder.layers[2];
  for (Eigen::Index n : {1, 5, 16, 40}) {
    const Matrix y = layer.forward(random_tokens(n, 64, 6));
    CHECK(y.rows() == n);
    CHECK(y.cols() == 64);
    CHECK(y.allFinite());
  }
  CHECK_THROWS_AS(layer.forward(random_tokens(4, 32, 6)), InvalidArgument);

  // Golden values: fixed seed, fixed input, recorded once and frozen.
  const Matrix golden = layer.forward(random_tokens(16, 64, 12));
  CHECK(golden(0, 0) == doctest::Approx(-2.5776672998620271).epsilon(1e-9));
  CHECK(golden(7, 33) == doctest::Approx(-0.68253932233870485).epsilon(1e-9));
  CHECK(golden(15, 63) == doctest::Approx(1.0121654589063136).epsilon(1e-9));
  CHECK(golden.sum() == doctest::Approx(-10.111491904518829).epsilon(1e-9));
}

TEST_CASE("adaptor: zero init, single key and source checks") {
  const ModelState state = ModelState::initialize(desk_encoder(), desk_decoder(), 5);
  const Adaptor& zero = state.encoder.adaptors[0];
  const Matrix q = random_tokens(16, 64, 7);
  CHECK(zero.forward(q, q).cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.up.weight.value.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.up.bias.value.cwiseAbs().maxCoeff() == 0.0);

  ModelState tuned = state;
  randomize_adaptor_up(tuned, 9, 0.1);
  const Adaptor& a = tuned.encoder.adaptors[0];
  const Matrix src = random_tokens(1, 64, 8);
  const Matrix expected = a.up.forward(a.embed.forward(src).replicate(16, 1) + a.down.forward(q));
  CHECK((a.forward(q, src) - expected).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(a.forward(q, Matrix(0, 64)), InvalidArgument);
}

TEST_CASE("VPT layer: zero prompt, fallback and branch isolation") {
  const ModelState state = ModelState::initialize(desk_encoder({PromptKind::structure, PromptKind::scale}), desk_decoder(), 21);
  const Matrix x = random_tokens(16, 64, 13);
  const Matrix src = random_tokens(32, 64, 14);
  for (int i = 0; i < 4; ++i) {
    const Matrix plain = state.encoder.layers[i].forward(x);
    CHECK(bit_equal(state.encoder.vpt_layer(i, x, src), plain));
    CHECK(bit_equal(state.encoder.vpt_layer(i, x, Matrix()), plain));
  }

  ModelState tuned = state;
  randomize_adaptor_up(tuned, 3, 0.1);
  const Matrix frozen_branch = tuned.encoder.layers[1].forward(x);
  CHECK(bit_equal(frozen_branch, state.encoder.layers[1].forward(x)));
  const Matrix with_sources = tuned.encoder.vpt_layer(1, x, src);
  CHECK(bit_equal(with_sources, frozen_branch + tuned.encoder.adaptors[1].forward(x, src)));
  // Empty source list falls back to the tile's own tokens.
  CHECK(bit_equal(tuned.encoder.vpt_layer(1, x, Matrix()), frozen_branch + tuned.encoder.adaptors[1].forward(x, x)));
  CHECK_FALSE(bit_equal(with_sources, frozen_branch));
}

TEST_CASE("prompt sources are embedded and concatenated in order") {
  const ModelState state = ModelState::initialize(desk_encoder({PromptKind::structure, PromptKind::scale}), desk_decoder(), 2);
  const Image a = random_tile(32, 1), b = random_tile(32, 2);
  const Image* both[] = {&a, &b};
  const Matrix src = state.encoder.embed_sources(both);
  REQUIRE(src.rows() == 32);
  const auto& cfg = state.encoder.config;
  CHECK(bit_equal(src.topRows(16), state.encoder.embed.forward(a, cfg.pixel_mean, cfg.pixel_std)));
  CHECK(bit_equal(src.bottomRows(16), state.encoder.embed.forward(b, cfg.pixel_mean, cfg.pixel_std)));
  CHECK(state.encoder.embed_sources({}).rows() == 0);
}

TEST_CASE("encode_tiles: one row per tile, zero-prompt equivalence") {
  const ModelState state = ModelState::initialize(desk_encoder({PromptKind::structure}), desk_decoder(), 8);
  std::vector<Image> tiles, prompts;
  for (int j = 0; j < 5; ++j) {
    tiles.push_back(random_tile(32, 100 + j));
    prompts.push_back(random_tile(32, 200 + j));
  }
  tiles.push_back(tiles[0]);
  prompts.push_back(prompts[0]);
  TileBatch batch;
  for (std::size_t j = 0; j < tiles.size(); ++j) {
    batch.tiles.push_back(&tiles[j]);
    batch.prompts.push_back({&prompts[j]});
  }
  const Matrix pooled = encode_tiles(state, batch);
  REQUIRE(pooled.rows() == 6);
  CHECK(bit_equal(pooled.row(0), pooled.row(5)));
  CHECK(bit_equal(pooled, encode_tiles_frozen(state, batch)));

  // The pooled token is the mean of the final tokens.
  Matrix x = state.encoder.embed.forward(tiles[1], state.encoder.config.pixel_mean, state.encoder.config.pixel_std);
  for (const auto& layer : state.encoder.layers) x = layer.forward(x);
  CHECK((pooled.row(1) - x.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c = EncoderConfig::desk();
  CHECK_NOTHROW(c.validate());
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = EncoderConfig::desk();
  c.down_dim = 64;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = EncoderConfig::desk();
  c.tile_size = 36;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = EncoderConfig::desk();
  c.prompt_sources = {PromptKind::scale, PromptKind::scale};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = EncoderConfig::desk();
  c.pixel_std = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);

  const EncoderConfig p = EncoderConfig::paper_shape();
  CHECK(p.tokens_per_tile() == 256);
  CHECK(p.depth == 12);
  CHECK(p.down_dim == 24);
}
