#include <benchmark/benchmark.h>

#include <random>

#include "telemote/ingest.hpp"

using namespace telemote::ingest;

static void BM_swinging_door(benchmark::State& state) {
    std::mt19937_64 rng(3);
    std::vector<Point> points;
    double v = 20;
    for (int i = 0; i < 10000; ++i) {
        v += ((rng() >> 11) * 0x1.0p-53 - 0.5) * 0.2;
        points.push_back({1.0 * i, v});
    }
    const StreamSettings cfg{0, 3600, 0.1, 3600};
    std::size_t archived = 0;
    for (auto _ : state) {
        SwingingDoor door;
        archived = 0;
        for (const auto& p : points) archived += door.offer(p, cfg).size();
        benchmark::DoNotOptimize(archived);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(points.size()));
    state.counters["kept"] = static_cast<double>(archived);
}
BENCHMARK(BM_swinging_door);

static void BM_parse_flat_file(benchmark::State& state) {
    std::string text;
    for (int i = 0; i < 1000; ++i) {
        char line[128];
        std::snprintf(line, sizeof line, "S,7,%d,22.31,45.02,431,0.003,-0.012,0.998,15.7\n",
                      1000 + 10 * i);
        text += line;
    }
    for (auto _ : state) benchmark::DoNotOptimize(parse_flat_file(text));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_parse_flat_file);

BENCHMARK_MAIN();
