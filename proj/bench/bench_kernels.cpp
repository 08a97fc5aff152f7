#include "wsl/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

const bool allocator_tuned = (wsl::tune_allocator(), true);

wsl::Tensor random_tensor(wsl::Dims dims, unsigned seed) {
    wsl::Tensor t(std::move(dims));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

// Args: channels in, channels out, spatial side.
void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({1, 16, 64})->Args({16, 16, 64})->Args({32, 32, 32})->Args({64, 64, 16})->Args({96, 96, 8})->Args({96, 96, 4});
}

template <bool Fast>
void BM_Conv2d(benchmark::State& state) {
    const auto ci = static_cast<std::size_t>(state.range(0)), co = static_cast<std::size_t>(state.range(1)),
               s = static_cast<std::size_t>(state.range(2));
    const auto x = random_tensor({ci, s, s}, 1);
    const auto k = random_tensor({co, ci, 3, 3}, 2);
    for (auto _ : state) {
        auto y = Fast ? wsl::kernels::conv2d(x, k, 1, 1) : wsl::reference::conv2d(x, k, 1, 1);
        benchmark::DoNotOptimize(y.ptr());
    }
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(ci * co * s * s * 9) * state.iterations(),
                                                 benchmark::Counter::kIsRate);
}

template <bool Fast>
void BM_Conv2dGradKernel(benchmark::State& state) {
    const auto ci = static_cast<std::size_t>(state.range(0)), co = static_cast<std::size_t>(state.range(1)),
               s = static_cast<std::size_t>(state.range(2));
    const auto x = random_tensor({ci, s, s}, 1);
    const auto dy = random_tensor({co, s, s}, 3);
    const auto g = wsl::conv_geometry(x.dims(), {co, ci, 3, 3}, 1, 1);
    for (auto _ : state) {
        auto dw = Fast ? wsl::kernels::conv2d_grad_kernel(dy, x, g) : wsl::reference::conv2d_grad_kernel(dy, x, g);
        benchmark::DoNotOptimize(dw.ptr());
    }
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(ci * co * s * s * 9) * state.iterations(),
                                                 benchmark::Counter::kIsRate);
}

template <bool Fast>
void BM_Conv2dGradInput(benchmark::State& state) {
    const auto ci = static_cast<std::size_t>(state.range(0)), co = static_cast<std::size_t>(state.range(1)),
               s = static_cast<std::size_t>(state.range(2));
    const auto k = random_tensor({co, ci, 3, 3}, 2);
    const auto dy = random_tensor({co, s, s}, 3);
    const auto g = wsl::conv_geometry({ci, s, s}, k.dims(), 1, 1);
    for (auto _ : state) {
        auto dx = Fast ? wsl::kernels::conv2d_grad_input(dy, k, g) : wsl::reference::conv2d_grad_input(dy, k, g);
        benchmark::DoNotOptimize(dx.ptr());
    }
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(ci * co * s * s * 9) * state.iterations(),
                                                 benchmark::Counter::kIsRate);
}

void BM_MaxPool(benchmark::State& state) {
    const auto x = random_tensor({16, 64, 64}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(wsl::kernels::maxpool2d(x, 2, 2).out.ptr());
}

void BM_MaxPoolReference(benchmark::State& state) {
    const auto x = random_tensor({16, 64, 64}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(wsl::reference::maxpool2d(x, 2, 2).out.ptr());
}

} // namespace

BENCHMARK(BM_Conv2d<true>)->Apply(conv_args);
BENCHMARK(BM_Conv2d<false>)->Apply(conv_args);
BENCHMARK(BM_Conv2dGradKernel<true>)->Apply(conv_args);
BENCHMARK(BM_Conv2dGradKernel<false>)->Apply(conv_args);
BENCHMARK(BM_Conv2dGradInput<true>)->Apply(conv_args);
BENCHMARK(BM_Conv2dGradInput<false>)->Apply(conv_args);
BENCHMARK(BM_MaxPool);
BENCHMARK(BM_MaxPoolReference);

BENCHMARK_MAIN();
