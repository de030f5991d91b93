// Serial reference vs OpenMP kernels on the shapes the decoder actually runs.
// The parallel entry points are bit-identical to kern::serial for any thread
// count; this target measures what the threads buy.

#include <benchmark/benchmark.h>

#include <vector>

#include "invpt/kernels.hpp"
#include "invpt/rng.hpp"

using namespace invpt;

namespace {

std::vector<double> randv(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

void bm_matmul_serial(benchmark::State& state) {
    const std::int64_t m = 3072, k = 16, n = 48;
    auto a = randv(m * k, 1), b = randv(k * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        kern::serial::matmul_nn(a.data(), b.data(), c.data(), m, k, n, false);
        benchmark::ClobberMemory();
    }
}

void bm_matmul_parallel(benchmark::State& state) {
    kern::set_threads(static_cast<int>(state.range(0)));
    const std::int64_t m = 3072, k = 16, n = 48;
    auto a = randv(m * k, 1), b = randv(k * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        kern::matmul_nn(a.data(), b.data(), c.data(), m, k, n, false);
        benchmark::ClobberMemory();
    }
    kern::set_threads(0);
}

void bm_conv2d_serial(benchmark::State& state) {
    const std::int64_t cin = 32, h = 32, w = 32, cout = 16;
    auto x = randv(cin * h * w, 3), wt = randv(cout * cin * 9, 4);
    std::vector<double> y(cout * h * w);
    for (auto _ : state) {
        kern::serial::conv2d_fwd(x.data(), wt.data(), y.data(), cin, h, w, cout, 3, 3, 1, 1, h,
                                 w);
        benchmark::ClobberMemory();
    }
}

void bm_conv2d_parallel(benchmark::State& state) {
    kern::set_threads(static_cast<int>(state.range(0)));
    const std::int64_t cin = 32, h = 32, w = 32, cout = 16;
    auto x = randv(cin * h * w, 3), wt = randv(cout * cin * 9, 4);
    std::vector<double> y(cout * h * w);
    for (auto _ : state) {
        kern::conv2d_fwd(x.data(), wt.data(), y.data(), cin, h, w, cout, 3, 3, 1, 1, h, w);
        benchmark::ClobberMemory();
    }
    kern::set_threads(0);
}

void bm_bilinear_serial(benchmark::State& state) {
    const std::int64_t c = 32, h = 16, w = 16;
    auto x = randv(c * h * w, 5);
    std::vector<double> y(c * 4 * h * w);
    for (auto _ : state) {
        kern::serial::bilinear_fwd(x.data(), y.data(), c, h, w, 2 * h, 2 * w);
        benchmark::ClobberMemory();
    }
}

void bm_bilinear_parallel(benchmark::State& state) {
    kern::set_threads(static_cast<int>(state.range(0)));
    const std::int64_t c = 32, h = 16, w = 16;
    auto x = randv(c * h * w, 5);
    std::vector<double> y(c * 4 * h * w);
    for (auto _ : state) {
        kern::bilinear_fwd(x.data(), y.data(), c, h, w, 2 * h, 2 * w);
        benchmark::ClobberMemory();
    }
    kern::set_threads(0);
}

void bm_softmax_serial(benchmark::State& state) {
    const std::int64_t m = 3072, n = 48;
    auto a = randv(m * n, 6);
    std::vector<double> y(m * n);
    for (auto _ : state) {
        kern::serial::softmax_rows_fwd(a.data(), y.data(), m, n);
        benchmark::ClobberMemory();
    }
}

void bm_softmax_parallel(benchmark::State& state) {
    kern::set_threads(static_cast<int>(state.range(0)));
    const std::int64_t m = 3072, n = 48;
    auto a = randv(m * n, 6);
    std::vector<double> y(m * n);
    for (auto _ : state) {
        kern::softmax_rows_fwd(a.data(), y.data(), m, n);
        benchmark::ClobberMemory();
    }
    kern::set_threads(0);
}

}  // namespace

BENCHMARK(bm_matmul_serial);
BENCHMARK(bm_matmul_parallel)->Arg(2)->Arg(4);
BENCHMARK(bm_conv2d_serial);
BENCHMARK(bm_conv2d_parallel)->Arg(2)->Arg(4);
BENCHMARK(bm_bilinear_serial);
BENCHMARK(bm_bilinear_parallel)->Arg(2)->Arg(4);
BENCHMARK(bm_softmax_serial);
BENCHMARK(bm_softmax_parallel)->Arg(2)->Arg(4);

BENCHMARK_MAIN();
