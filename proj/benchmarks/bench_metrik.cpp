#include <benchmark/benchmark.h>

#include "metrik/dataset.hpp"
#include "metrik/imputer.hpp"
#include "metrik/linalg.hpp"
#include "metrik/masklayer.hpp"
#include "metrik/metrics.hpp"
#include "metrik/pmd.hpp"
#include "metrik/rng.hpp"

namespace {

using namespace metrik;

Matrix random_matrix(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

void bm_matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    Matrix a = random_matrix(n, n, rng);
    Matrix b = random_matrix(n, n, rng);
    Matrix c(n, n);
    for (auto _ : state) {
        matmul_nn(a, b, c);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n) * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128);

struct ForwardFixture {
    RctDataset data;
    Imputer model;
    Pmd design;  // owns the mask build_batch points at
    BatchTensors batch;

    ForwardFixture() {
        SynthConfig sc;
        sc.n_subjects = 48;
        data = preprocess(synthesize(sc, 7));
        ImputerConfig config;
        model = make_imputer(config, data.n_timepoints(), data.n_metrics(), {}, 11);
        design = rsd_sample(0.3, data.protocol, 13);
        std::vector<int> all(static_cast<std::size_t>(data.n_subjects()));
        for (int s = 0; s < data.n_subjects(); ++s) all[static_cast<std::size_t>(s)] = s;
        batch = build_batch(data, all, std::vector<const Pmd*>(all.size(), &design));
    }
};

void bm_forward(benchmark::State& state) {
    ForwardFixture fx;
    for (auto _ : state) {
        Cube out = forward(fx.model, fx.batch.input, fx.batch.visibility);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(bm_forward);

void bm_backward(benchmark::State& state) {
    ForwardFixture fx;
    for (auto _ : state) {
        BackwardResult result =
            backward(fx.model, fx.batch.input, fx.batch.visibility, fx.batch.target,
                     fx.batch.loss_mask);
        benchmark::DoNotOptimize(result.loss);
    }
}
BENCHMARK(bm_backward);

void bm_bootstrap(benchmark::State& state) {
    Rng rng(3);
    EvalSample sample;
    sample.n_subjects = 40;
    for (int s = 0; s < 40; ++s)
        for (int i = 0; i < 8; ++i)
            sample.continuous.push_back({s, 0, rng.uniform()});
    BootstrapConfig config;
    config.seed = 5;
    for (auto _ : state) {
        auto summary = bootstrap_scores(sample, config);
        benchmark::DoNotOptimize(summary);
    }
}
BENCHMARK(bm_bootstrap);

void bm_rsd_sample(benchmark::State& state) {
    ProtocolMask protocol;
    protocol.eligible = BinaryMatrix(6, 24);
    protocol.eligible.fill(1);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        Pmd design = rsd_sample(0.3, protocol, seed++);
        benchmark::DoNotOptimize(design.efficiency);
    }
}
BENCHMARK(bm_rsd_sample);

}  // namespace

BENCHMARK_MAIN();
