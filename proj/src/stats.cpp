#include "txtime/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "txtime/error.hpp"
#include "txtime/rng.hpp"

namespace txtime {

double standard_normal(Rng& rng) {
    // Marsaglia polar method.
    while (true) {
        const double u = 2.0 * uniform01(rng) - 1.0;
        const double v = 2.0 * uniform01(rng) - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

}  // namespace txtime

namespace txtime::stats {

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) return 0.0;
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double quantile_sorted(std::span<const std::int64_t> sorted, double p, double scale) {
    if (sorted.empty()) return 0.0;
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return static_cast<double>(sorted.back()) * scale;
    const double frac = h - static_cast<double>(lo);
    const double a = static_cast<double>(sorted[lo]) * scale;
    const double b = static_cast<double>(sorted[lo + 1]) * scale;
    return a + frac * (b - a);
}

double quantile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(std::span<const double>(values), p);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

Summary describe(std::span<const double> values) {
    Summary s;
    if (values.empty()) return s;
    const auto n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / n);
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    s.median = quantile_sorted(std::span<const double>(sorted), 0.5);
    return s;
}

double ExactMoments::mean(double scale) const {
    if (count == 0) return 0.0;
    return static_cast<double>(sum) / static_cast<double>(count) * scale;
}

double ExactMoments::std(double scale) const {
    if (count == 0) return 0.0;
    const __int128 numerator = count * sum_sq - sum * sum;
    if (numerator <= 0) return 0.0;
    return std::sqrt(static_cast<double>(numerator)) / static_cast<double>(count) * scale;
}

Summary describe_sorted_exact(std::span<const std::int64_t> sorted, const ExactMoments& moments, double scale) {
    Summary s;
    if (sorted.empty()) return s;
    s.mean = moments.mean(scale);
    s.std = moments.std(scale);
    s.median = quantile_sorted(sorted, 0.5, scale);
    return s;
}

Summary describe_exact(std::span<const std::int64_t> values, double scale) {
    ExactMoments m;
    for (auto v : values) m.add(v);
    std::vector<std::int64_t> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return describe_sorted_exact(sorted, m, scale);
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = (static_cast<double>(i + j) / 2.0) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("correlation undefined for a constant vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw DataError("spearman_rho needs two equal-length samples of size >= 2");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

namespace {

double exact_two_sided_p(const std::vector<long>& doubled_ranks, std::size_t na, long observed, bool two_tailed) {
    const std::size_t n = doubled_ranks.size();
    long total = 0;
    for (long r : doubled_ranks) total += r;
    // dp[k][s]: ways to pick k items whose doubled ranks sum to s.
    std::vector<std::vector<double>> dp(na + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
    dp[0][0] = 1.0;
    std::size_t seen = 0;
    for (long r : doubled_ranks) {
        ++seen;
        for (std::size_t k = std::min(na, seen); k >= 1; --k) {
            auto& cur = dp[k];
            const auto& prev = dp[k - 1];
            for (long s = total; s >= r; --s) cur[static_cast<std::size_t>(s)] += prev[static_cast<std::size_t>(s - r)];
        }
    }
    (void)n;
    const long expected = static_cast<long>(na) * (static_cast<long>(doubled_ranks.size()) + 1);
    const long dev = std::labs(observed - expected);
    double all = 0.0, extreme = 0.0, lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total; ++s) {
        const double c = dp[na][static_cast<std::size_t>(s)];
        if (c == 0.0) continue;
        all += c;
        if (std::labs(s - expected) >= dev) extreme += c;
        if (s <= observed) lower += c;
        if (s >= observed) upper += c;
    }
    if (two_tailed) return std::min(1.0, extreme / all);
    return std::min(1.0, std::min(lower, upper) / all);
}

}  // namespace

MannWhitney mann_whitney(std::span<const double> a, std::span<const double> b, bool two_tailed) {
    if (a.empty() || b.empty()) throw DataError("mann_whitney needs non-empty samples");
    const std::size_t na = a.size(), nb = b.size(), n = na + nb;
    std::vector<double> pooled;
    pooled.reserve(n);
    pooled.insert(pooled.end(), a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranks = average_ranks(pooled);
    double rank_sum_a = 0.0;
    for (std::size_t i = 0; i < na; ++i) rank_sum_a += ranks[i];

    MannWhitney out;
    out.u = rank_sum_a - static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;

    if (na <= kExactMannWhitneyLimit && nb <= kExactMannWhitneyLimit) {
        std::vector<long> doubled(n);
        for (std::size_t i = 0; i < n; ++i) doubled[i] = std::lround(2.0 * ranks[i]);
        out.p = exact_two_sided_p(doubled, na, std::lround(2.0 * rank_sum_a), two_tailed);
        out.exact = true;
        return out;
    }

    // Tie term sum(t^3 - t) over groups of equal values.
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && sorted[j] == sorted[i]) ++j;
        const auto t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double dna = static_cast<double>(na), dnb = static_cast<double>(nb), dn = static_cast<double>(n);
    const double mu = dna * dnb / 2.0;
    const double var = dna * dnb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
    if (var <= 0.0) {
        out.p = 1.0;
        return out;
    }
    const double z = std::max(0.0, (std::abs(out.u - mu) - 0.5) / std::sqrt(var));
    const double tail = 0.5 * std::erfc(z / std::sqrt(2.0));
    out.p = std::min(1.0, two_tailed ? 2.0 * tail : tail);
    return out;
}

std::string_view to_string(Magnitude m) {
    switch (m) {
        case Magnitude::negligible: return "negligible";
        case Magnitude::small: return "small";
        case Magnitude::medium: return "medium";
        case Magnitude::large: return "large";
    }
    return "unknown";
}

Magnitude romano_magnitude(double delta) {
    const double d = std::abs(delta);
    if (d <= 0.147) return Magnitude::negligible;
    if (d <= 0.33) return Magnitude::small;
    if (d <= 0.474) return Magnitude::medium;
    return Magnitude::large;
}

EffectSize cliffs_delta(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DataError("cliffs_delta needs non-empty samples");
    std::vector<double> sorted_b(b.begin(), b.end());
    std::sort(sorted_b.begin(), sorted_b.end());
    long double dominance = 0.0L;
    for (double x : a) {
        const auto below = std::lower_bound(sorted_b.begin(), sorted_b.end(), x) - sorted_b.begin();
        const auto above = sorted_b.end() - std::upper_bound(sorted_b.begin(), sorted_b.end(), x);
        dominance += static_cast<long double>(below - above);
    }
    EffectSize e;
    e.delta = static_cast<double>(dominance / (static_cast<long double>(a.size()) * static_cast<long double>(b.size())));
    e.magnitude = romano_magnitude(e.delta);
    return e;
}

OlsFit ols_r2(std::span<const double> y, const std::vector<std::vector<double>>& design,
              const std::vector<std::string>& column_names) {
    const auto n = static_cast<Eigen::Index>(y.size());
    const auto p = static_cast<Eigen::Index>(design.size());
    if (n < p + 2) throw DataError("ols_r2 needs at least columns + 2 rows");
    Eigen::MatrixXd x(n, p + 1);
    x.col(0).setOnes();
    for (Eigen::Index j = 0; j < p; ++j) {
        if (static_cast<Eigen::Index>(design[static_cast<std::size_t>(j)].size()) != n)
            throw DataError("ols_r2 design column length mismatch");
        x.col(j + 1) = Eigen::Map<const Eigen::VectorXd>(design[static_cast<std::size_t>(j)].data(), n);
    }
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < p + 1) {
        // Name every column that takes part in a dependency (non-zero in the null space).
        Eigen::FullPivLU<Eigen::MatrixXd> lu(x);
        lu.setThreshold(1e-10);
        const Eigen::MatrixXd kernel = lu.kernel();
        const double tol = 1e-8 * std::max(1.0, kernel.cwiseAbs().maxCoeff());
        std::string names;
        for (Eigen::Index col = 0; col < p + 1; ++col) {
            if (kernel.row(col).cwiseAbs().maxCoeff() <= tol) continue;
            if (!names.empty()) names += ", ";
            if (col == 0)
                names += "(intercept)";
            else if (static_cast<std::size_t>(col - 1) < column_names.size())
                names += column_names[static_cast<std::size_t>(col - 1)];
            else
                names += "x" + std::to_string(col);
        }
        throw SingularDesignError("singular design; linearly dependent columns: " + names);
    }
    const Eigen::VectorXd beta = qr.solve(yv);
    const Eigen::VectorXd resid = yv - x * beta;
    const double mean = yv.mean();
    const double ss_tot = (yv.array() - mean).square().sum();
    const double ss_res = resid.squaredNorm();

    OlsFit fit;
    fit.coefficients.assign(beta.data(), beta.data() + beta.size());
    fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
    return fit;
}

double adjusted_r2(double r2, std::size_t n_samples, std::size_t n_features) {
    if (n_samples <= n_features + 1)
        throw ProtocolError("adjusted R^2 needs more samples (" + std::to_string(n_samples) + ") than features + 1 (" +
                            std::to_string(n_features + 1) + ")");
    const auto n = static_cast<double>(n_samples);
    const auto p = static_cast<double>(n_features);
    return 1.0 - (1.0 - r2) * (n - 1.0) / (n - p - 1.0);
}

double r2_score(std::span<const double> observed, std::span<const double> predicted) {
    double mean = 0.0;
    for (double v : observed) mean += v;
    mean /= static_cast<double>(observed.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ss_tot += (observed[i] - mean) * (observed[i] - mean);
        ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

int RankTable::rank_count() const {
    int r = 0;
    for (const auto& item : items) r = std::max(r, item.rank);
    return r;
}

int RankTable::rank_of(std::string_view name) const {
    for (const auto& item : items)
        if (item.name == name) return item.rank;
    return 0;
}

std::vector<std::string> RankTable::members(int rank) const {
    std::vector<std::string> out;
    for (const auto& item : items)
        if (item.rank == rank) out.push_back(item.name);
    return out;
}

namespace {

struct SkGroup {
    std::string name;
    std::vector<double> values;
    double median;
};

std::vector<double> pool(const std::vector<SkGroup>& groups, std::size_t lo, std::size_t hi) {
    std::size_t total = 0;
    for (std::size_t i = lo; i < hi; ++i) total += groups[i].values.size();
    std::vector<double> out;
    out.reserve(total);
    for (std::size_t i = lo; i < hi; ++i) out.insert(out.end(), groups[i].values.begin(), groups[i].values.end());
    return out;
}

// Selection-based median; same value as quantile(…, 0.5) without a full sort.
double select_median(std::vector<double> v) {
    const std::size_t n = v.size();
    const std::size_t lo = (n - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (n % 2 == 1) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + 0.5 * (b - a);
}

double pooled_median(const std::vector<SkGroup>& groups, std::size_t lo, std::size_t hi) {
    return select_median(pool(groups, lo, hi));
}

void split_recursive(const std::vector<SkGroup>& groups, std::size_t lo, std::size_t hi,
                     const ScottKnottOptions& options, std::vector<std::size_t>& leaf_starts) {
    if (hi - lo < 2) {
        leaf_starts.push_back(lo);
        return;
    }
    const double whole = pooled_median(groups, lo, hi);
    double best_score = 0.0;
    std::size_t best_cut = 0;
    for (std::size_t cut = lo + 1; cut < hi; ++cut) {
        double n1 = 0.0, n2 = 0.0;
        for (std::size_t i = lo; i < cut; ++i) n1 += static_cast<double>(groups[i].values.size());
        for (std::size_t i = cut; i < hi; ++i) n2 += static_cast<double>(groups[i].values.size());
        const double m1 = pooled_median(groups, lo, cut);
        const double m2 = pooled_median(groups, cut, hi);
        const double score = n1 * (m1 - whole) * (m1 - whole) + n2 * (m2 - whole) * (m2 - whole);
        if (score > best_score) {
            best_score = score;
            best_cut = cut;
        }
    }
    if (best_cut != 0) {
        const auto left = pool(groups, lo, best_cut);
        const auto right = pool(groups, best_cut, hi);
        const auto test = mann_whitney(left, right, true);
        const auto effect = cliffs_delta(left, right);
        if (test.p <= options.alpha && std::abs(effect.delta) > options.negligible_delta) {
            split_recursive(groups, lo, best_cut, options, leaf_starts);
            split_recursive(groups, best_cut, hi, options, leaf_starts);
            return;
        }
    }
    leaf_starts.push_back(lo);
}

}  // namespace

RankTable scott_knott(std::vector<NamedSample> input, const ScottKnottOptions& options) {
    std::vector<SkGroup> groups;
    groups.reserve(input.size());
    for (auto& g : input) {
        if (g.values.empty()) throw DataError("scott_knott group '" + g.name + "' is empty");
        const double m = median(g.values);
        groups.push_back({std::move(g.name), std::move(g.values), m});
    }
    std::stable_sort(groups.begin(), groups.end(), [](const SkGroup& a, const SkGroup& b) { return a.median > b.median; });

    std::vector<std::size_t> leaf_starts;
    split_recursive(groups, 0, groups.size(), options, leaf_starts);
    std::sort(leaf_starts.begin(), leaf_starts.end());

    RankTable table;
    int rank = 0;
    std::size_t next_leaf = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (next_leaf < leaf_starts.size() && leaf_starts[next_leaf] == i) {
            ++rank;
            ++next_leaf;
        }
        table.items.push_back({groups[i].name, rank, groups[i].median});
    }
    return table;
}

}  // namespace txtime::stats
