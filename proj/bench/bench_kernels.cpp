// OpenMP kernels against their serial references on a random matrix.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>

#include "txtime/explain.hpp"
#include "txtime/forest.hpp"
#include "txtime/parallel.hpp"
#include "txtime/rng.hpp"
#include "txtime/screen.hpp"
#include "txtime/tree_shap.hpp"

using namespace txtime;

namespace {

FeatureMatrix random_matrix(std::size_t n, std::size_t p, std::uint64_t seed) {
    auto rng = make_rng(seed, "bench");
    std::vector<std::string> names;
    std::vector<Dimension> dims;
    for (std::size_t c = 0; c < p; ++c) {
        names.push_back("x" + std::to_string(c));
        dims.push_back(Dimension::contextual);
    }
    std::vector<double> values(n * p), target(n);
    for (auto& v : values) v = uniform01(rng);
    for (std::size_t r = 0; r < n; ++r)
        target[r] = std::sin(6 * values[r]) + values[n + r] * values[2 * n + r] + 0.1 * standard_normal(rng);
    std::vector<std::string> keys(n);
    for (std::size_t r = 0; r < n; ++r) keys[r] = "r" + std::to_string(r);
    FeatureMatrix m(names, dims);
    m.assign(keys, std::vector<std::int64_t>(n, 0), std::vector<std::int64_t>(n, 0), values, target);
    return m;
}

double time_it(const std::function<void()>& f, int repeats) {
    double best = 1e300;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

void report(const char* name, double parallel, double serial) {
    std::printf("%-22s %10.4f %10.4f %8.2fx\n", name, parallel, serial, serial / parallel);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"txtime kernel benchmark"};
    std::size_t rows = 5000, cols = 28;
    int threads = 0, repeats = 3, trees = 50, depth = 8;
    std::uint64_t seed = 1;
    app.add_option("--rows", rows);
    app.add_option("--cols", cols);
    app.add_option("--threads", threads, "0 = OpenMP default");
    app.add_option("--repeats", repeats);
    app.add_option("--trees", trees);
    app.add_option("--depth", depth);
    app.add_option("--seed", seed);
    CLI11_PARSE(app, argc, argv);
    if (cols < 3) cols = 3;
    if (threads > 0) set_threads(threads);

    const auto m = random_matrix(rows, cols, seed);
    std::vector<std::size_t> all(cols);
    std::iota(all.begin(), all.end(), 0);
    forest::Hyperparams h;
    h.tree_count = trees;
    h.max_depth = depth;
    h.seed = seed;
    const auto f = forest::fit_forest(m, h);

    std::printf("rows %zu, cols %zu, threads %d, %d trees of depth %d\n", rows, cols, max_threads(), trees, depth);
    std::printf("%-22s %10s %10s %9s\n", "kernel", "omp (s)", "serial (s)", "speedup");
    report("spearman matrix", time_it([&] { screen::abs_spearman_matrix(m, all); }, repeats),
           time_it([&] { screen::abs_spearman_matrix_serial(m, all); }, repeats));
    report("forest fit", time_it([&] { forest::fit_forest(m, h); }, repeats),
           time_it([&] { forest::fit_forest_serial(m, h); }, repeats));
    std::vector<std::size_t> first(std::min<std::size_t>(rows, 1000));
    std::iota(first.begin(), first.end(), 0);
    const auto sample = m.select_rows(first);
    report("tree shap (1k rows)", time_it([&] { explain::tree_shap(f, sample); }, repeats),
           time_it([&] { explain::tree_shap_serial(f, sample); }, repeats));
    report("pdp (50 points)", time_it([&] { explain::pdp(f, m, "x0"); }, repeats),
           time_it([&] { explain::pdp_serial(f, m, "x0"); }, repeats));
    return 0;
}
