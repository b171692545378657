#include <benchmark/benchmark.h>

#include <vector>

#include "vptsurv/model.hpp"
#include "vptsurv/random.hpp"
#include "vptsurv/trainer.hpp"

using namespace vptsurv;

namespace {

EncoderConfig bench_encoder(bool prompts) {
  EncoderConfig c = EncoderConfig::desk();
  c.pixel_mean = 0.55;
  c.pixel_std = 0.1;
  if (prompts) c.prompt_sources = {PromptKind::structure, PromptKind::scale};
  return c;
}

Image noise_tile(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

// One tile through the desk encoder: frozen backbone only vs. with adaptors.
static void BM_EncodeTile(benchmark::State& state) {
  const bool prompts = state.range(0) != 0;
  const ModelState model = ModelState::initialize(bench_encoder(prompts), DecoderConfig{}, 1);
  const Image tile = noise_tile(32, 2), structure = noise_tile(32, 3), scale = noise_tile(32, 4);
  const std::vector<const Image*> sources = {&structure, &scale};
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.encoder.encode_tile(tile, prompts ? sources : std::vector<const Image*>{},
                                                       nullptr, prompts));
  }
}
BENCHMARK(BM_EncodeTile)->Arg(0)->Arg(1)->ArgName("adaptors");

// Decoder over J pooled tile tokens.
static void BM_Decode(benchmark::State& state) {
  const ModelState model = ModelState::initialize(bench_encoder(false), DecoderConfig{}, 1);
  Rng rng(5);
  Matrix memory(state.range(0), 64);
  for (Eigen::Index i = 0; i < memory.size(); ++i) memory.data()[i] = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(model.decoder.decode(memory));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Decode)->RangeMultiplier(4)->Range(50, 3200)->Complexity();

// Forward + backward for a batch of slides, as in one end-to-end step.
static void BM_TrainStep(benchmark::State& state) {
  SyntheticSpec spec;
  spec.n_patients = 10;
  spec.tiles_per_wsi = static_cast<int>(state.range(0));
  const Cohort cohort = synthesize_cohort(spec);
  const EncoderConfig enc = bench_encoder(true);
  ModelState model = ModelState::initialize(enc, DecoderConfig{}, 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(spec.tiles_per_wsi));
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  std::vector<SlideExample> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back({make_tile_batch(cohort.slides[i], enc, idx), {1.0, false, 2}});
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(batch_loss_and_gradients(model, batch));
  }
  state.SetItemsProcessed(state.iterations() * 4 * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
