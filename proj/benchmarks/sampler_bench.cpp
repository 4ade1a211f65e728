#include "curator/random.hpp"
#include "curator/sampler.hpp"

#include <benchmark/benchmark.h>

using namespace curator;
using namespace curator::sampler;

namespace {

ScoreMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    std::vector<std::string> ids;
    std::vector<CategoryId> classes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < rows; ++i)
        ids.push_back("p" + std::to_string(i));
    for (std::size_t c = 0; c < cols; ++c)
        classes.push_back("c" + std::to_string(c));
    for (std::size_t k = 0; k < rows * cols; ++k)
        scores.push_back(uniform_unit(rng));
    return ScoreMatrix(std::move(ids), std::move(classes), std::move(scores));
}

void BM_SelectConfident(benchmark::State& state) {
    Rng rng(4);
    const auto m = random_matrix(static_cast<std::size_t>(state.range(0)), 50, rng);
    const auto prior = ClassPrior::uniform(m.class_ids());
    const SamplingBudget budget{static_cast<std::size_t>(state.range(0)) / 10, 10.0};
    for (auto _ : state)
        benchmark::DoNotOptimize(select_confident(m, prior, budget, {}));
}
BENCHMARK(BM_SelectConfident)->Arg(1000)->Arg(100000);

} // namespace
