// Microbenchmarks for the forward path and the evaluation primitives. The
// train-vs-deploy pairs quantify what reparameterization buys at inference
// time; the rest track the cost of the hot library entry points.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rgelan/blocks.hpp"
#include "rgelan/config.hpp"
#include "rgelan/detect.hpp"
#include "rgelan/eval.hpp"
#include "rgelan/graph.hpp"
#include "rgelan/init.hpp"
#include "rgelan/reparam.hpp"

namespace {

using namespace rgelan;

Tensor4 random_input(int c, int h, int w, Rng& rng) {
    Tensor4 x(1, c, h, w);
    fill_uniform(x.data, rng, 1.0f);
    return x;
}

void BM_Conv3x3(benchmark::State& state) {
    Rng rng(1);
    const ConvParams p = random_conv(32, 32, 3, 1, 1, 1, true, rng);
    const Tensor4 x = random_input(32, 32, 32, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(conv2d(x, p));
}
BENCHMARK(BM_Conv3x3)->Unit(benchmark::kMillisecond);

void BM_RepVGGTrain(benchmark::State& state) {
    Rng rng(2);
    const RepVGGBlock b(random_repvgg_train(32, 32, 1, 1, true, rng));
    const Tensor4 x = random_input(32, 32, 32, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(repvgg_forward(b, x));
}
BENCHMARK(BM_RepVGGTrain)->Unit(benchmark::kMillisecond);

void BM_RepVGGDeploy(benchmark::State& state) {
    Rng rng(2);
    const RepVGGBlock b = reparameterized(RepVGGBlock(random_repvgg_train(32, 32, 1, 1, true, rng)));
    const Tensor4 x = random_input(32, 32, 32, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(repvgg_forward(b, x));
}
BENCHMARK(BM_RepVGGDeploy)->Unit(benchmark::kMillisecond);

constexpr const char* kBenchCfg = R"(ch: 3
nc: 4
layers:
  - [-1, 1, Conv, [16, 3, 2]]
  - [-1, 1, RepVGG, [32, 2]]
  - [-1, 1, RepNCSPELAN4, [32, 16, 8, 1]]
  - [-1, 1, ADown, [48]]
  - [-1, 1, RepNCSPELAN4, [48, 24, 12, 1]]
  - [-1, 1, SPPELAN, [48, 24]]
  - [[2, 5], 1, DDetect, [8]]
)";

void BM_GraphForwardTrain(benchmark::State& state) {
    Rng rng(3);
    ModelGraph g = build_graph(parse_config(kBenchCfg), 64, 7);
    const Tensor4 image = random_input(3, 64, 64, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(model_forward(g, image));
}
BENCHMARK(BM_GraphForwardTrain)->Unit(benchmark::kMillisecond);

void BM_GraphForwardFused(benchmark::State& state) {
    Rng rng(3);
    ModelGraph g = build_graph(parse_config(kBenchCfg), 64, 7);
    fuse_graph(g);
    const Tensor4 image = random_input(3, 64, 64, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(model_forward(g, image));
}
BENCHMARK(BM_GraphForwardFused)->Unit(benchmark::kMillisecond);

std::vector<Detection> random_detections(int n, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> coord(0.0f, 600.0f), size(4.0f, 60.0f), sc(0.0f, 1.0f);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<Detection> dets(n);
    for (Detection& d : dets) {
        const float x = coord(rng), y = coord(rng);
        d = {Box{x, y, x + size(rng), y + size(rng)}, sc(rng), cls(rng)};
    }
    return dets;
}

void BM_Nms500(benchmark::State& state) {
    const std::vector<Detection> dets = random_detections(500, 4);
    for (auto _ : state)
        benchmark::DoNotOptimize(nms(dets, 0.45f));
}
BENCHMARK(BM_Nms500)->Unit(benchmark::kMicrosecond);

void BM_AveragePrecision(benchmark::State& state) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<float> sc(0.0f, 1.0f);
    std::vector<std::pair<float, char>> scored(2000);
    for (auto& [score, tp] : scored) {
        score = sc(rng);
        tp = rng() % 2;
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(average_precision(scored, 1000));
}
BENCHMARK(BM_AveragePrecision)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();
