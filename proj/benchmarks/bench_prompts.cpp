#include <benchmark/benchmark.h>

#include "vptsurv/random.hpp"
#include "vptsurv/wsi.hpp"

using namespace vptsurv;

namespace {

Image noise_image(int h, int w) {
  Rng rng(1);
  Image img(h, w);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

static void BM_StructurePrompt(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Image img = noise_image(side, side);
  for (auto _ : state) benchmark::DoNotOptimize(build_structure_prompt(img, 0.1));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(img.size() * sizeof(float)));
}
BENCHMARK(BM_StructurePrompt)->Arg(32)->Arg(256)->Arg(1024);

static void BM_ScaleSource(benchmark::State& state) {
  const TileGrid grid = tile_image(noise_image(256, 256), 32, 8);
  for (auto _ : state) benchmark::DoNotOptimize(make_scale_source(grid));
}
BENCHMARK(BM_ScaleSource);

static void BM_TileImage(benchmark::State& state) {
  const Image img = noise_image(1024, 1024);
  for (auto _ : state) benchmark::DoNotOptimize(tile_image(img, 256, 16));
}
BENCHMARK(BM_TileImage);
