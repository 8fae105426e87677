// Sequential test on a synthetic stream where X matters for Y given Z.

#include <cstdio>

#include "mxci/logistic.hpp"
#include "mxci/simharness.hpp"

int main() {
    mxci::sim::ScenarioSpec spec;
    spec.beta = 1.0;
    spec.n_max = 1000;
    mxci::Rng rng(mxci::substream_seed(7, 0, "data"));
    const auto data = mxci::sim::gen_dataset(spec, 0, spec.n_max, rng);

    const mxci::ConditionalModel q(data.truth.conditional);
    mxci::TestConfig test;
    test.alpha = 0.05;
    test.rng_seed = 11;
    const auto res = mxci::run_ecrt(data.obs, q, mxci::FitConfig{}, test);

    for (const auto& row : res.trace)
        if (row.n % 100 == 0) std::printf("n=%4zu  log S=%8.3f\n", row.n, row.log_s);
    if (res.state.stopped_at)
        std::printf("rejected at n=%zu\n", *res.state.stopped_at);
    else
        std::printf("no rejection\n");
}
