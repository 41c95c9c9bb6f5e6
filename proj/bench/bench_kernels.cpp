// Serial reference against the OpenMP kernels. Set OMP_NUM_THREADS to vary
// the thread count.

#include "castorette/frame.hpp"
#include "castorette/gam/boost.hpp"
#include "castorette/gam/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace castorette;
using namespace castorette::gam;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

struct Design {
    std::vector<double> x, w;
    SplineBasis basis;
    Eigen::MatrixXd d;

    explicit Design(std::size_t n)
        : x(uniform(n, 1)), w(uniform(n, 2, 0.5, 2.0)), basis(SplineBasis::build("x", x, 20)),
          d(kernels::serial::spline_design(basis, x)) {}
};

template <auto Kernel>
void bm_design(benchmark::State& state) {
    const Design s(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(s.basis, s.x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void bm_gram(benchmark::State& state) {
    const Design s(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(s.d, s.w));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void bm_cross(benchmark::State& state) {
    const Design s(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(Kernel(s.d, s.w, s.x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Select>
void bm_boost(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    std::vector<Column> cols;
    std::vector<TermSpec> cands;
    for (int j = 0; j < 8; ++j) {
        const std::string name = "x" + std::to_string(j);
        cols.push_back(real_column(name, uniform(n, 10 + static_cast<std::uint64_t>(j))));
        cands.push_back(spline_term(name));
    }
    const auto y = uniform(n, 99);
    FeatureFrame frame;
    frame.timestamps.resize(n);
    for (auto& c : cols) frame.add(std::move(c));
    for (auto _ : state) benchmark::DoNotOptimize(Select(frame, y, cands, 20, 0.1));
}

} // namespace

BENCHMARK(bm_design<kernels::serial::spline_design>)->Name("spline_design/serial")->Arg(10000)->Arg(100000);
BENCHMARK(bm_design<kernels::parallel::spline_design>)->Name("spline_design/parallel")->Arg(10000)->Arg(100000);
BENCHMARK(bm_gram<kernels::serial::gram>)->Name("gram/serial")->Arg(10000)->Arg(100000);
BENCHMARK(bm_gram<kernels::parallel::gram>)->Name("gram/parallel")->Arg(10000)->Arg(100000);
BENCHMARK(bm_cross<kernels::serial::cross>)->Name("cross/serial")->Arg(10000)->Arg(100000);
BENCHMARK(bm_cross<kernels::parallel::cross>)->Name("cross/parallel")->Arg(10000)->Arg(100000);
BENCHMARK(bm_boost<boost_select_serial>)->Name("boost_select/serial")->Arg(5000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_boost<boost_select>)->Name("boost_select/parallel")->Arg(5000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
