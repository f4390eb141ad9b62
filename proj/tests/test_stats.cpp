#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "txtime/error.hpp"
#include "txtime/rng.hpp"
#include "txtime/stats.hpp"

using namespace txtime;
using namespace txtime::stats;

namespace {

std::vector<double> draw(Rng& rng, std::size_t n, double lo, double hi, bool integer = false) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = lo + (hi - lo) * uniform01(rng);
        if (integer) x = std::floor(x);
    }
    return v;
}

// Direct O(n*m) Cliff's delta.
double cliffs_pairs(const std::vector<double>& a, const std::vector<double>& b) {
    long gt = 0, lt = 0;
    for (double x : a)
        for (double y : b) {
            gt += x > y;
            lt += x < y;
        }
    return static_cast<double>(gt - lt) / static_cast<double>(a.size() * b.size());
}

}  // namespace

TEST_CASE("describe uses population std and interpolated median") {
    const std::vector<double> v{4, 1, 3, 2};
    const auto s = describe(v);
    CHECK(s.mean == doctest::Approx(2.5));
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
    CHECK(describe(std::vector<double>{}) == Summary{});
    const std::vector<std::int64_t> w{10, 30};
    const auto e = describe_exact(w, 1.0);
    CHECK(e.mean == 20.0);
    CHECK(e.median == 20.0);
    CHECK(e.std == 10.0);
}

TEST_CASE("quantile interpolates linearly") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
    CHECK(quantile(v, 0.2) == doctest::Approx(20.8));
    CHECK(quantile(v, 1.0) == 100.0);
    CHECK(quantile(v, 0.0) == 1.0);
}

TEST_CASE("spearman examples") {
    CHECK(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::abs(spearman_rho(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}) - 0.8) < 1e-10);
    CHECK_THROWS_AS(spearman_rho(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedCorrelationError);
}

TEST_CASE("spearman is invariant under monotone transforms") {
    auto rng = make_rng(5, "spearman-prop");
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = 2 + uniform_index(rng, 60);
        auto x = draw(rng, n, 0, 10, trial % 2 == 0);
        auto y = draw(rng, n, -5, 5, trial % 3 == 0);
        if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) continue;
        if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) continue;
        const double rho = spearman_rho(x, y);
        auto tx = x;
        for (auto& v : tx) v = std::exp(v) * 3 + 1;
        auto ty = y;
        for (auto& v : ty) v = -std::pow(v + 6, 3);
        CHECK(spearman_rho(tx, y) == rho);
        CHECK(spearman_rho(x, ty) == doctest::Approx(-rho).epsilon(1e-12));
        CHECK(std::abs(rho) <= 1.0 + 1e-12);
    }
}

TEST_CASE("mann-whitney examples") {
    const std::vector<double> a{1, 2, 3, 4, 5};
    const auto same = mann_whitney(a, a);
    CHECK(same.u == doctest::Approx(12.5));
    CHECK(same.p == doctest::Approx(1.0));
    const auto sep = mann_whitney(std::vector<double>{1, 2, 3}, std::vector<double>{10, 11, 12});
    CHECK(sep.u == 0.0);
    const auto small = mann_whitney(std::vector<double>{1, 2}, std::vector<double>{3, 4});
    CHECK(small.exact);
    CHECK(std::abs(small.p - 1.0 / 3.0) < 1e-10);
    const auto one = mann_whitney(std::vector<double>{1, 2}, std::vector<double>{3, 4}, false);
    CHECK(std::abs(one.p - 1.0 / 6.0) < 1e-10);
}

TEST_CASE("mann-whitney large samples use the normal approximation") {
    auto rng = make_rng(9, "mw");
    auto a = draw(rng, 200, 0, 1);
    auto b = draw(rng, 200, 0.3, 1.3);
    const auto r = mann_whitney(a, b);
    CHECK_FALSE(r.exact);
    CHECK(r.p < 1e-6);
    const auto s = mann_whitney(a, a);
    CHECK(s.p == doctest::Approx(1.0));
}

TEST_CASE("mann-whitney exact p is a probability and symmetric") {
    auto rng = make_rng(13, "mw-exact");
    for (int trial = 0; trial < 40; ++trial) {
        auto a = draw(rng, 1 + uniform_index(rng, 12), 0, 6, true);
        auto b = draw(rng, 1 + uniform_index(rng, 12), 0, 6, true);
        const auto ab = mann_whitney(a, b);
        const auto ba = mann_whitney(b, a);
        CHECK(ab.exact);
        CHECK(ab.p > 0.0);
        CHECK(ab.p <= 1.0);
        CHECK(ab.p == doctest::Approx(ba.p).epsilon(1e-12));
        CHECK(ab.u + ba.u == doctest::Approx(static_cast<double>(a.size() * b.size())));
    }
}

TEST_CASE("cliff's delta examples and properties") {
    const std::vector<double> a{1, 2, 3};
    CHECK(cliffs_delta(a, a).delta == 0.0);
    CHECK(cliffs_delta(a, a).magnitude == Magnitude::negligible);
    const auto sep = cliffs_delta(std::vector<double>{1, 2}, std::vector<double>{3, 4});
    CHECK(sep.delta == -1.0);
    CHECK(sep.magnitude == Magnitude::large);
    const auto d = cliffs_delta(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4});
    CHECK(std::abs(d.delta - (-5.0 / 9.0)) < 1e-10);
    CHECK(d.magnitude == Magnitude::large);

    CHECK(romano_magnitude(0.147) == Magnitude::negligible);
    CHECK(romano_magnitude(0.148) == Magnitude::small);
    CHECK(romano_magnitude(-0.33) == Magnitude::small);
    CHECK(romano_magnitude(0.474) == Magnitude::medium);
    CHECK(romano_magnitude(0.475) == Magnitude::large);

    auto rng = make_rng(3, "cliff");
    for (int trial = 0; trial < 60; ++trial) {
        auto x = draw(rng, 1 + uniform_index(rng, 40), 0, 8, trial % 2 == 0);
        auto y = draw(rng, 1 + uniform_index(rng, 40), 0, 8, trial % 2 == 0);
        const double dxy = cliffs_delta(x, y).delta;
        CHECK(dxy == doctest::Approx(cliffs_pairs(x, y)).epsilon(1e-12));
        CHECK(dxy == -cliffs_delta(y, x).delta);
        CHECK(std::abs(dxy) <= 1.0);
    }
}

TEST_CASE("ols examples") {
    const std::vector<double> x{1, 2, 3, 4};
    std::vector<double> y2{2, 4, 6, 8};
    CHECK(ols_r2(y2, {x}).r2 == doctest::Approx(1.0));
    const auto fit = ols_r2(std::vector<double>{1, 2, 3, 5}, {x});
    // SSR / SST = 8.45 / 8.75.
    CHECK(std::abs(fit.r2 - 169.0 / 175.0) < 1e-10);
    CHECK(fit.coefficients.size() == 2);
    CHECK(fit.coefficients[1] == doctest::Approx(1.3));
    CHECK_THROWS_AS(ols_r2(std::vector<double>{0.3, -1, 2, 0.1}, {{5, 5, 5, 5}}, {"flat"}), SingularDesignError);
    try {
        ols_r2(std::vector<double>{1, 2, 3, 4, 5}, {{1, 2, 3, 4, 5}, {2, 4, 6, 8, 10}}, {"a", "b"});
        FAIL("expected singular design");
    } catch (const SingularDesignError& e) {
        const std::string what = e.what();
        CHECK(what.find("a, b") != std::string::npos);
    }
}

TEST_CASE("ols residuals are orthogonal to the design") {
    auto rng = make_rng(21, "ols");
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 30 + uniform_index(rng, 50);
        const std::size_t p = 1 + uniform_index(rng, 5);
        std::vector<std::vector<double>> X(p);
        for (auto& c : X) c = draw(rng, n, -3, 3);
        auto y = draw(rng, n, -1, 1);
        for (std::size_t i = 0; i < n; ++i) y[i] += 2 * X[0][i];
        const auto fit = ols_r2(y, X);
        std::vector<double> res(n);
        for (std::size_t i = 0; i < n; ++i) {
            double pred = fit.coefficients[0];
            for (std::size_t j = 0; j < p; ++j) pred += fit.coefficients[j + 1] * X[j][i];
            res[i] = y[i] - pred;
        }
        double sum = 0, scale = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sum += res[i];
            scale += std::abs(y[i]);
        }
        CHECK(std::abs(sum) <= 1e-8 * scale);
        for (const auto& c : X) {
            double dot = 0, s = 0;
            for (std::size_t i = 0; i < n; ++i) {
                dot += res[i] * c[i];
                s += std::abs(y[i] * c[i]);
            }
            CHECK(std::abs(dot) <= 1e-8 * s);
        }
        CHECK(fit.r2 >= 0.0);
        CHECK(fit.r2 <= 1.0);
    }
}

TEST_CASE("adjusted r2") {
    CHECK(std::abs(adjusted_r2(0.5, 100, 30) - (1.0 - 0.5 * 99.0 / 69.0)) < 1e-10);
    CHECK(std::abs(adjusted_r2(0.5, 100, 30) - 0.2826) < 1e-4);
    CHECK(adjusted_r2(1.0, 50, 7) == 1.0);
    CHECK(adjusted_r2(0.37, 50, 0) == doctest::Approx(0.37));
    CHECK_THROWS_AS(adjusted_r2(0.5, 10, 9), ProtocolError);
    auto rng = make_rng(2, "adj");
    for (int i = 0; i < 100; ++i) {
        const double r2 = uniform01(rng) * 2 - 1;
        const auto p = 1 + uniform_index(rng, 20);
        const auto n = p + 2 + uniform_index(rng, 100);
        CHECK(adjusted_r2(r2, n, p) <= r2 + 1e-15);
    }
}

TEST_CASE("scott-knott examples") {
    auto point = [](std::string name, double v) { return NamedSample{std::move(name), std::vector<double>(30, v)}; };
    const auto sep = scott_knott({point("g5", 5), point("g1", 1), point("g10", 10)});
    CHECK(sep.rank_count() == 3);
    CHECK(sep.rank_of("g10") == 1);
    CHECK(sep.rank_of("g5") == 2);
    CHECK(sep.rank_of("g1") == 3);

    auto rng = make_rng(4, "sk");
    std::vector<double> base(50);
    for (auto& v : base) v = standard_normal(rng);
    const auto same = scott_knott({{"a", base}, {"b", base}, {"c", base}});
    CHECK(same.rank_count() == 1);
    CHECK(same.members(1).size() == 3);

    std::vector<NamedSample> near;
    for (auto [name, mu] : {std::pair<const char*, double>{"g10", 10.0}, {"g9.9", 9.9}, {"g1", 1.0}}) {
        NamedSample s{name, {}};
        for (int i = 0; i < 1000; ++i) s.values.push_back(mu + standard_normal(rng));
        near.push_back(std::move(s));
    }
    const auto t = scott_knott(near);
    CHECK(t.rank_count() == 2);
    CHECK(t.rank_of("g10") == 1);
    CHECK(t.rank_of("g9.9") == 1);
    CHECK(t.rank_of("g1") == 2);
}

TEST_CASE("scott-knott ranks are contiguous and order consistent") {
    auto rng = make_rng(8, "sk-prop");
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<NamedSample> groups;
        const auto k = 1 + uniform_index(rng, 8);
        for (std::size_t g = 0; g < k; ++g) {
            NamedSample s{"g" + std::to_string(g), {}};
            const double mu = static_cast<double>(uniform_index(rng, 4));
            const auto n = 5 + uniform_index(rng, 40);
            for (std::size_t i = 0; i < n; ++i) s.values.push_back(mu + 0.5 * standard_normal(rng));
            groups.push_back(std::move(s));
        }
        const auto t = scott_knott(groups);
        CHECK(t.items.size() == k);
        int expected = 1;
        for (std::size_t i = 0; i < t.items.size(); ++i) {
            if (i > 0 && t.items[i].rank != t.items[i - 1].rank) ++expected;
            CHECK(t.items[i].rank == expected);
        }
        for (const auto& hi : t.items)
            for (const auto& lo : t.items)
                if (lo.rank > hi.rank) CHECK(hi.median >= lo.median);
    }
}
