#include "iti/directions.hpp"
#include "iti/intervention.hpp"
#include "iti/model.hpp"
#include "iti/probing.hpp"

#include <benchmark/benchmark.h>

using namespace iti;

namespace {

InterventionSpec two_head_spec(const ModelConfig & cfg) {
    InterventionSpec s;
    s.alpha = 5.0;
    for (int h = 0; h < 2; ++h) s.entries.push_back({{cfg.n_layers - 1, h}, random_direction(cfg.head_dim, h), 1.0, {}});
    return s;
}

std::vector<Token> prompt_tokens(int n, int vocab) {
    std::vector<Token> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t[i] = static_cast<Token>((i * 37 + 11) % vocab);
    return t;
}

void BM_Forward(benchmark::State & state) {
    const auto cfg = make_config(2, 4, 16, 258, 256);
    const auto m = random_model(cfg, 1);
    const auto toks = prompt_tokens(static_cast<int>(state.range(0)), cfg.vocab_size);
    for (auto _ : state) benchmark::DoNotOptimize(forward(m, toks));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64)->Arg(256);

void BM_ForwardWithTaps(benchmark::State & state) {
    const auto cfg = make_config(2, 4, 16, 258, 256);
    const auto m = random_model(cfg, 1);
    const auto toks = prompt_tokens(64, cfg.vocab_size);
    for (auto _ : state) benchmark::DoNotOptimize(forward_with_taps(m, toks));
}
BENCHMARK(BM_ForwardWithTaps);

void BM_TrainProbe(benchmark::State & state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    FeatureMatrix x(n, 16);
    std::vector<int> y(n);
    Rng rng(2);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        for (auto & v : x.row(i)) v = standard_normal(rng);
        x.row(i)[0] += y[i] ? 1.0 : -1.0;
    }
    for (auto _ : state) benchmark::DoNotOptimize(train_probe(x, y, nullptr, {}));
}
BENCHMARK(BM_TrainProbe)->Arg(200)->Arg(1000);

void BM_GenerateHooked(benchmark::State & state) {
    const auto cfg = make_config(2, 4, 16, 258, 128);
    const auto m = random_model(cfg, 3);
    const auto spec = two_head_spec(cfg);
    const auto prompt = prompt_tokens(16, cfg.vocab_size);
    for (auto _ : state) benchmark::DoNotOptimize(generate_greedy(m, prompt, 32, &spec));
}
BENCHMARK(BM_GenerateHooked);

void BM_GenerateBaked(benchmark::State & state) {
    const auto cfg = make_config(2, 4, 16, 258, 128);
    const auto m = bake_bias(random_model(cfg, 3), two_head_spec(cfg));
    const auto prompt = prompt_tokens(16, cfg.vocab_size);
    for (auto _ : state) benchmark::DoNotOptimize(generate_greedy(m, prompt, 32));
}
BENCHMARK(BM_GenerateBaked);

} // namespace

BENCHMARK_MAIN();
