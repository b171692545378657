#include <benchmark/benchmark.h>

#include <vector>

#include "vptsurv/random.hpp"
#include "vptsurv/survival.hpp"

using namespace vptsurv;

namespace {

void make_cohort(std::size_t n, std::vector<double>& risks, std::vector<SurvivalLabel>& labels) {
  Rng rng(1);
  risks.resize(n);
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    risks[i] = rng.normal();
    labels[i] = {rng.uniform(0.0, 1000.0), rng.uniform() < 0.3, 1};
  }
}

}  // namespace

static void BM_ConcordanceIndex(benchmark::State& state) {
  std::vector<double> risks;
  std::vector<SurvivalLabel> labels;
  make_cohort(static_cast<std::size_t>(state.range(0)), risks, labels);
  for (auto _ : state) benchmark::DoNotOptimize(concordance_index(risks, labels));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConcordanceIndex)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_KaplanMeier(benchmark::State& state) {
  std::vector<double> risks;
  std::vector<SurvivalLabel> labels;
  make_cohort(static_cast<std::size_t>(state.range(0)), risks, labels);
  for (auto _ : state) benchmark::DoNotOptimize(kaplan_meier(labels));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KaplanMeier)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_NllLoss(benchmark::State& state) {
  const std::vector<double> hazards = {0.1, 0.2, 0.3, 0.4};
  const SurvivalLabel label{0.0, false, 3};
  std::vector<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(nll_survival_loss(hazards, label, &grad));
}
BENCHMARK(BM_NllLoss);
