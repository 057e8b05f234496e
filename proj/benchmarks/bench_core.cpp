#include <benchmark/benchmark.h>

#include "nxl/attribution.hpp"
#include "nxl/evaluation.hpp"
#include "nxl/fixtures.hpp"
#include "nxl/gradients.hpp"
#include "nxl/rng.hpp"

namespace {

nxl::ModelConfig config(int layers, int heads, int d_model) {
    nxl::ModelConfig cfg;
    cfg.n_layers = layers;
    cfg.n_heads = heads;
    cfg.d_model = d_model;
    cfg.d_head = d_model / heads;
    cfg.d_ff = 2 * d_model;
    cfg.vocab_size = 32;
    cfg.max_seq_len = 16;
    cfg.n_classes = 3;
    return cfg;
}

nxl::TokenSequence sequence(int n) {
    nxl::Rng rng(1);
    nxl::TokenSequence seq;
    seq.token_ids.resize(n);
    for (int& id : seq.token_ids) id = static_cast<int>(rng.below(32));
    return seq;
}

void bm_encode(benchmark::State& state) {
    const int layers = static_cast<int>(state.range(0));
    const nxl::ModelSnapshot snap =
        nxl::generate_model(config(layers, 2, 16), 7, {true, false, false});
    const nxl::TokenSequence seq = sequence(12);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nxl::encode(snap, seq));
    }
}
BENCHMARK(bm_encode)->Arg(1)->Arg(2)->Arg(4);

void bm_input_gradients(benchmark::State& state) {
    const int layers = static_cast<int>(state.range(0));
    const nxl::ModelSnapshot snap =
        nxl::generate_model(config(layers, 2, 16), 7, {true, false, false});
    const nxl::TokenSequence seq = sequence(12);
    const nxl::ScalarTarget target = nxl::ScalarTarget::class_logit(1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nxl::input_gradients(snap, seq, target));
    }
}
BENCHMARK(bm_input_gradients)->Arg(1)->Arg(2);

void bm_integrated_gradients(benchmark::State& state) {
    const nxl::ModelSnapshot snap = nxl::generate_model(config(1, 2, 16), 7, {true, false, false});
    const nxl::TokenSequence seq = sequence(12);
    const nxl::ScalarTarget target = nxl::ScalarTarget::class_logit(1);
    const nxl::BaselineSpec baseline;
    const int steps = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(nxl::integrated_gradients_raw(snap, seq, target, steps, baseline));
    }
}
BENCHMARK(bm_integrated_gradients)->Arg(10)->Arg(50);

void bm_average_precision(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    nxl::Rng rng(3);
    nxl::AttributionResult res;
    res.scores.resize(n);
    for (double& s : res.scores) s = rng.uniform();
    nxl::EvidenceVector ev;
    ev.bits.assign(n, 0);
    ev.bits[n / 2] = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(nxl::average_precision(ev, res));
    }
}
BENCHMARK(bm_average_precision)->Arg(8)->Arg(64)->Arg(512);

} // namespace

BENCHMARK_MAIN();
