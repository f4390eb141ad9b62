#include <doctest.h>

#include <cmath>
#include <fstream>

#include "support/fixtures.hpp"
#include "txtime/error.hpp"
#include "txtime/explain.hpp"

using namespace txtime;
using namespace txtime::explain;
using fixtures::make_matrix;

namespace {

struct Fixture {
    FeatureMatrix m;
    forest::RandomForest f;
};

// y = signal(x1, x2) + noise_sd * N(0,1) over `p` uniform columns.
Fixture fitted(std::uint64_t seed, std::size_t n, std::size_t p, double (*signal)(double, double), double noise_sd,
               int trees = 20, int depth = 6) {
    auto rng = make_rng(seed, "explain-fixture");
    std::vector<std::vector<double>> cols(p, std::vector<double>(n));
    std::vector<double> y(n);
    std::vector<std::string> names;
    for (std::size_t k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& c : cols) c[i] = uniform01(rng);
        y[i] = signal(cols[0][i], cols[1][i]) + noise_sd * standard_normal(rng);
    }
    Fixture fx{make_matrix(names, cols, y), {}};
    forest::Hyperparams h;
    h.tree_count = trees;
    h.max_depth = depth;
    h.seed = seed;
    h.feature_fraction = forest::FeatureFraction::fraction(1.0);
    fx.f = forest::fit_forest(fx.m, h);
    return fx;
}

}  // namespace

TEST_CASE("rank_features: pure noise shares rank 1") {
    auto fx = fitted(3, 400, 4, [](double, double) { return 0.0; }, 1.0);
    // Fully grown trees spread spurious splits evenly; shallow ones favour whichever
    // column happens to carry the best spurious split.
    auto h = fx.f.params;
    h.tree_count = 100;
    h.max_depth.reset();
    h.feature_fraction = forest::FeatureFraction::sqrt();
    auto table = rank_features(forest::fit_forest(fx.m, h), fx.m);
    CHECK(table.rank_count() == 1);
}

TEST_CASE("rank_features: planted single feature is alone in rank 1") {
    int alone = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto fx = fitted(seed, 200, 4, [](double a, double) { return 3.0 * a; }, 0.3, 8, 4);
        auto table = rank_features(fx.f, fx.m);
        if (table.members(1) == std::vector<std::string>{"x1"}) ++alone;
    }
    CHECK(alone >= 95);
}

TEST_CASE("rank_features ignores feature names") {
    auto fx = fitted(4, 300, 4, [](double a, double b) { return a + 0.5 * b; }, 0.1);
    auto shap = tree_shap(fx.f, fx.m);
    auto a = rank_features(shap, {"x1", "x2", "x3", "x4"});
    auto b = rank_features(shap, {"zz", "aa", "mm", "bb"});
    const std::vector<std::string> relabel{"zz", "aa", "mm", "bb"};
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t k = 0; k < a.items.size(); ++k) {
        const auto original = std::stoi(a.items[k].name.substr(1)) - 1;
        CHECK(b.items[k].name == relabel[static_cast<std::size_t>(original)]);
        CHECK(b.items[k].rank == a.items[k].rank);
        CHECK(b.items[k].median == a.items[k].median);
    }
}

TEST_CASE("pdp: stump traces 0 below 5.5 and 1 above") {
    std::vector<double> x, y;
    for (int i = 1; i <= 10; ++i) {
        x.push_back(i);
        y.push_back(i > 5 ? 1.0 : 0.0);
    }
    auto m = make_matrix({"x"}, {x}, y);
    forest::Hyperparams h;
    h.tree_count = 1;
    h.bootstrap = false;
    h.max_depth = 1;
    h.feature_fraction = forest::FeatureFraction::fraction(1.0);
    auto f = forest::fit_forest(m, h);
    auto c = pdp(f, m, "x", 19);
    REQUIRE(c.grid.size() == c.mean_prediction.size());
    for (std::size_t k = 0; k < c.grid.size(); ++k) {
        if (k > 0) CHECK(c.grid[k] > c.grid[k - 1]);
        CHECK(c.mean_prediction[k] == (c.grid[k] > 5.5 ? 1.0 : 0.0));
    }
}

TEST_CASE("pdp: unused feature is flat at the mean prediction; constant feature warns") {
    auto fx = fitted(6, 200, 3, [](double a, double) { return a; }, 0.0);
    auto shifted = fx.m;
    const auto preds = fx.f.predict(fx.m);
    double mean = 0.0;
    for (double p : preds) mean += p;
    mean /= static_cast<double>(preds.size());
    // x3 carries no signal but may be split on; use a forest restricted to x1 instead.
    auto only_x1 = forest::fit_forest(fx.m.select_columns({"x1"}), fx.f.params);
    only_x1.feature_names = {"x1"};
    auto c = pdp(only_x1, fx.m, "x3");
    const auto flat = only_x1.predict(fx.m);
    double flat_mean = 0.0;
    for (double p : flat) flat_mean += p;
    flat_mean /= static_cast<double>(flat.size());
    for (double v : c.mean_prediction) CHECK(v == doctest::Approx(flat_mean).epsilon(1e-12));
    CHECK(c.grid.size() == kDefaultPdpGrid);
    CHECK(pdp_serial(only_x1, fx.m, "x3").mean_prediction == c.mean_prediction);

    std::fill(shifted.column(2).begin(), shifted.column(2).end(), 7.0);
    auto k = pdp(fx.f, shifted, "x3");
    CHECK(k.grid.size() == 1);
    CHECK(k.warnings.size() == 1);
    CHECK_THROWS_AS(pdp(fx.f, fx.m, "missing"), ConfigError);
    (void)mean;
}

TEST_CASE("pdp back-transforms log1p feature and target") {
    auto fx = fitted(7, 200, 2, [](double a, double) { return a; }, 0.0, 5, 3);
    fx.m.set_log_transformed(0, true);
    fx.m.set_target_log_transformed(true);
    auto c = pdp(fx.f, fx.m, "x1", 5);
    auto raw = fx.m;
    raw.set_log_transformed(0, false);
    raw.set_target_log_transformed(false);
    auto r = pdp(fx.f, raw, "x1", 5);
    REQUIRE(c.grid.size() == r.grid.size());
    for (std::size_t k = 0; k < c.grid.size(); ++k) {
        CHECK(c.grid[k] == std::expm1(r.grid[k]));
        CHECK(c.mean_prediction[k] == std::expm1(r.mean_prediction[k]));
    }
    fixtures::TempDir dir("pdp");
    write_pdp(c, dir.path() / "x1.csv");
    CHECK(std::filesystem::exists(dir.path() / "x1.deciles.json"));
    CHECK(std::filesystem::exists(dir.path() / "x1.svg"));
    std::ifstream in(dir.path() / "x1.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "grid_value,mean_prediction");
}

TEST_CASE("waterfall partitions the attribution") {
    ShapExplanation small{1.0, {0.5, -2.0, 0.25}, -0.25};
    auto w = waterfall(small, {"a", "b", "c"});
    REQUIRE(w.entries.size() == 3);
    CHECK(w.entries[0].feature == "b");
    CHECK(w.entries[1].feature == "a");

    ShapExplanation big;
    big.base_value = 2.0;
    double total = 0.0;
    std::vector<std::string> names;
    for (int i = 0; i < 30; ++i) {
        big.phi.push_back(std::sin(i * 1.7) / (1 + i));
        total += big.phi.back();
        names.push_back("f" + std::to_string(i));
    }
    big.prediction = big.base_value + total;
    auto wf = waterfall(big, names);
    REQUIRE(wf.entries.size() == 10);
    CHECK(wf.entries.back().feature == kOtherFeatures);
    CHECK(wf.entries.back().aggregated == 21);
    double sum = 0.0;
    for (const auto& e : wf.entries) sum += e.phi;
    CHECK(std::abs(sum - (big.prediction - big.base_value)) <= 1e-12);
    for (std::size_t k = 1; k + 1 < wf.entries.size(); ++k)
        CHECK(std::abs(wf.entries[k - 1].phi) >= std::abs(wf.entries[k].phi));
}

TEST_CASE("interaction: product target puts x1-x2 on top") {
    int top = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto fx = fitted(seed, 300, 4, [](double a, double b) { return 4.0 * a * b; }, 0.05, 8, 5);
        const auto row = fx.m.row(0);
        auto im = interaction_values(fx.f, row);
        double best = -1.0;
        std::pair<std::size_t, std::size_t> arg{0, 0};
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = i + 1; j < 4; ++j)
                if (std::abs(im.values[i][j]) > best) {
                    best = std::abs(im.values[i][j]);
                    arg = {i, j};
                }
        if (arg == std::pair<std::size_t, std::size_t>{0, 1}) ++top;
    }
    CHECK(top >= 95);
}

TEST_CASE("interaction: additive target averages to zero within the noise band") {
    auto fx = fitted(9, 4000, 4, [](double a, double b) { return std::sin(3 * a) + b * b; }, 0.05, 20, 8);
    std::vector<double> pair, main;
    for (std::size_t r = 0; r < 200; ++r) {
        auto im = interaction_values(fx.f, fx.m.row(r));
        pair.push_back(im.values[0][1]);
        main.push_back(std::abs(im.values[0][0]));
    }
    const auto s = stats::describe(pair);
    const double se = s.std / std::sqrt(static_cast<double>(pair.size()));
    CHECK(std::abs(s.mean) <= 3.0 * se);
    CHECK(s.std < 0.1 * stats::describe(main).mean);
}

TEST_CASE("chunk test separates signal and noise dimensions") {
    auto rng = make_rng(12, "chunk");
    const int days = 30, per_day = 30;
    const std::size_t n = static_cast<std::size_t>(days * per_day);
    FeatureMatrix m({"signal", "noise_a", "noise_b"}, {Dimension::pricing, Dimension::behavioral, Dimension::behavioral});
    std::vector<std::string> keys;
    std::vector<std::int64_t> blocks, day;
    std::vector<double> values(3 * n), y(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < 3; ++c) values[c * n + r] = uniform01(rng);
        y[r] = 2.0 * values[r] + 0.2 * standard_normal(rng);
        keys.push_back("t" + std::to_string(r));
        blocks.push_back(static_cast<std::int64_t>(r));
        day.push_back(static_cast<std::int64_t>(r / per_day));
    }
    m.assign(keys, blocks, day, values, y);
    protocol::SplitProtocol split;
    split.bootstrap_count = 10;
    split.search_iterations = 2;
    protocol::SearchSpace space;
    space.min_tree_count = 5;
    space.max_tree_count = 10;
    space.max_depth = 8;
    auto signal = chunk_test(m, Dimension::pricing, split, space, 5);
    CHECK(signal.differences.size() == 10);
    CHECK(signal.summary.median >= 0.3);
    auto noise = chunk_test(m, Dimension::behavioral, split, space, 5, &signal.full);
    CHECK(std::abs(noise.summary.median) <= 0.05);
    CHECK(noise.omitted_features == std::vector<std::string>{"noise_a", "noise_b"});

    auto only = m.select_columns({"signal"});
    CHECK_THROWS_AS(chunk_test(only, Dimension::pricing, split, space, 5), ConfigError);
}
