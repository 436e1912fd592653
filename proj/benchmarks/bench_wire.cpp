#include <benchmark/benchmark.h>

#include <random>

#include "telemote/wire.hpp"

using namespace telemote::wire;

namespace {

Bytes sample_bytes() {
    SensorMessage msg;
    msg.device_id = 12;
    msg.timestamp = 123456;
    msg.payload = Sample{2312, 4507, 431, {3, -12, 998}, 40};
    return encode_message(msg);
}

} // namespace

static void BM_encode_sample(benchmark::State& state) {
    SensorMessage msg;
    msg.device_id = 12;
    msg.timestamp = 123456;
    msg.payload = Sample{2312, 4507, 431, {3, -12, 998}, 40};
    for (auto _ : state) benchmark::DoNotOptimize(encode_message(msg));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_encode_sample);

static void BM_frame_encode(benchmark::State& state) {
    const Bytes payload = sample_bytes();
    for (auto _ : state) benchmark::DoNotOptimize(frame_encode(payload));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(payload.size()));
}
BENCHMARK(BM_frame_encode);

static void BM_stream_decode(benchmark::State& state) {
    std::mt19937_64 rng(1);
    Bytes stream;
    for (int i = 0; i < 1000; ++i) {
        Bytes payload(1 + rng() % 64);
        for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
        const auto f = frame_encode(payload);
        stream.insert(stream.end(), f.begin(), f.end());
    }
    for (auto _ : state) {
        FrameStreamDecoder dec;
        benchmark::DoNotOptimize(dec.feed(stream));
    }
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(stream.size()));
}
BENCHMARK(BM_stream_decode);

static void BM_crc16(benchmark::State& state) {
    Bytes data(static_cast<std::size_t>(state.range(0)));
    std::mt19937_64 rng(2);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    for (auto _ : state) benchmark::DoNotOptimize(crc16(data));
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_crc16)->Arg(20)->Arg(131);

BENCHMARK_MAIN();
