#include "covertrace/experiment.hpp"
#include "covertrace/pipeline.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace covertrace;

namespace {

// A reduced default experiment: real scene and cover, smaller images.
struct BenchScene {
  ExperimentConfig config;
  CaptureDataset data;
  SceneModel model;
  std::vector<PatchRef> patches;

  BenchScene() : config(make_config()), data(simulate_experiment(config, false)), model(initial_model(config)) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> view(0, static_cast<int>(data.cameras.size()) - 1), pos(1, 62);
    for (int i = 0; i < 4096 / 9; ++i) patches.push_back({view(rng), pos(rng), pos(rng)});
    model.grid.cache_activation();
  }

  static ExperimentConfig make_config() {
    ExperimentConfig c = default_experiment_config();
    c.capture.views = 4;
    c.capture.width = c.capture.height = 64;
    c.capture.focal = 75.0;
    c.capture.holdout_every = 4;
    return c;
  }

  BatchInputs inputs() const {
    BatchInputs in;
    in.cameras = data.cameras;
    in.images = data.images;
    in.patches = patches;
    in.options = evaluation_options(config);
    in.seed = 3;
    return in;
  }
};

const BenchScene& scene() {
  static const BenchScene s;
  return s;
}

void BM_BatchKernel(benchmark::State& state) {
  const BenchScene& s = scene();
  const BatchInputs in = s.inputs();
  BatchGradients g;
  g.reset(s.model);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::evaluate_batch(s.model, in, GradientMask{}, &g));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.patches.size()) * 9);
}

void BM_BatchReference(benchmark::State& state) {
  const BenchScene& s = scene();
  const BatchInputs in = s.inputs();
  BatchGradients g;
  g.reset(s.model);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::evaluate_batch(s.model, in, GradientMask{}, &g));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.patches.size()) * 9);
}

void BM_RenderKernel(benchmark::State& state) {
  const BenchScene& s = scene();
  const RenderOptions opt = evaluation_options(s.config);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::render_image(s.model, s.data.cameras[0], opt, 1, 0));
  state.SetItemsProcessed(state.iterations() * 64 * 64);
}

void BM_RenderReference(benchmark::State& state) {
  const BenchScene& s = scene();
  const RenderOptions opt = evaluation_options(s.config);
  for (auto _ : state) benchmark::DoNotOptimize(reference::render_image(s.model, s.data.cameras[0], opt, 1, 0));
  state.SetItemsProcessed(state.iterations() * 64 * 64);
}

}  // namespace

BENCHMARK(BM_BatchKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RenderReference)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
