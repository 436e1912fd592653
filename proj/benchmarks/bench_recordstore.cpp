#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "telemote/recordstore.hpp"

using namespace telemote::recordstore;

namespace {

// Telemetry-shaped input: 20-byte messages with a couple of drifting bytes.
std::vector<Bytes> telemetry_messages(int count) {
    std::mt19937_64 rng(7);
    std::vector<Bytes> out;
    Bytes msg(20, 0);
    for (int i = 0; i < count; ++i) {
        msg[3] = static_cast<std::uint8_t>(i);
        msg[4] = static_cast<std::uint8_t>(i >> 8);
        if (i % 5 == 0) msg[7] = static_cast<std::uint8_t>(rng());
        if (i % 11 == 0) msg[9] = static_cast<std::uint8_t>(rng());
        out.push_back(msg);
    }
    return out;
}

} // namespace

static void BM_append_telemetry(benchmark::State& state) {
    const auto messages = telemetry_messages(481);
    std::uint64_t raw = 0, stored = 0;
    for (auto _ : state) {
        RecordStore store(1 << 14);
        for (const auto& m : messages) store.append(m);
        raw = store.stats().raw_bytes;
        stored = store.stats().stored_bytes;
        benchmark::DoNotOptimize(store.dump().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(messages.size()));
    state.counters["ratio"] =
        static_cast<double>(raw) / static_cast<double>(stored ? stored : 1);
}
BENCHMARK(BM_append_telemetry);

static void BM_decode_dump(benchmark::State& state) {
    const auto messages = telemetry_messages(481);
    RecordStore store(1 << 14);
    for (const auto& m : messages) store.append(m);
    const auto dump = store.dump();
    for (auto _ : state) benchmark::DoNotOptimize(decode(dump));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(dump.size()));
}
BENCHMARK(BM_decode_dump);

BENCHMARK_MAIN();
