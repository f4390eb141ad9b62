#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace txtime::stats {

/// Mean, median and population standard deviation of one sample.
/// An empty sample summarizes to all zeros.
struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double std = 0.0;
    bool operator==(const Summary&) const = default;
};

/// Linear-interpolation quantile of an ascending sample (p in [0,1]).
double quantile_sorted(std::span<const double> sorted, double p);
double quantile_sorted(std::span<const std::int64_t> sorted, double p, double scale = 1.0);
double quantile(std::vector<double> values, double p);
double median(std::vector<double> values);

/// Summary over doubles; sums run in input order.
Summary describe(std::span<const double> values);

/// Summary over integers with exact 128-bit moments, reported as value * scale.
/// Results are independent of input order.
Summary describe_exact(std::span<const std::int64_t> values, double scale = 1.0);

/// Same summary from an already-sorted sample plus its exact moments.
struct ExactMoments {
    __int128 count = 0;
    __int128 sum = 0;
    __int128 sum_sq = 0;
    void add(std::int64_t v) {
        count += 1;
        sum += v;
        sum_sq += static_cast<__int128>(v) * v;
    }
    void remove(std::int64_t v) {
        count -= 1;
        sum -= v;
        sum_sq -= static_cast<__int128>(v) * v;
    }
    double mean(double scale = 1.0) const;
    double std(double scale = 1.0) const;
};
Summary describe_sorted_exact(std::span<const std::int64_t> sorted, const ExactMoments& moments,
                              double scale = 1.0);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

/// Spearman's rho: Pearson correlation of average-tied ranks.
/// Throws UndefinedCorrelationError when either input is constant.
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct MannWhitney {
    double u = 0.0;  // U statistic of the first sample
    double p = 1.0;
    bool exact = false;
};

/// Samples with at most this many observations on each side use exact enumeration.
inline constexpr std::size_t kExactMannWhitneyLimit = 20;

MannWhitney mann_whitney(std::span<const double> a, std::span<const double> b, bool two_tailed = true);

enum class Magnitude { negligible, small, medium, large };
std::string_view to_string(Magnitude m);

struct EffectSize {
    double delta = 0.0;
    Magnitude magnitude = Magnitude::negligible;
};

Magnitude romano_magnitude(double delta);

/// Cliff's delta of a against b, O((|a|+|b|) log |b|).
EffectSize cliffs_delta(std::span<const double> a, std::span<const double> b);

/// Least-squares fit with an intercept; coefficients[0] is the intercept.
/// `design` is column-major, one inner vector per column.
struct OlsFit {
    std::vector<double> coefficients;
    double r2 = 0.0;
};
OlsFit ols_r2(std::span<const double> y, const std::vector<std::vector<double>>& design,
              const std::vector<std::string>& column_names = {});

double adjusted_r2(double r2, std::size_t n_samples, std::size_t n_features);

/// R^2 of predictions against observations (1 - SSres/SStot).
double r2_score(std::span<const double> observed, std::span<const double> predicted);

// Scott-Knott, effect-size aware variant.

struct NamedSample {
    std::string name;
    std::vector<double> values;
};

struct RankedItem {
    std::string name;
    int rank = 0;
    double median = 0.0;
};

struct RankTable {
    std::vector<RankedItem> items;  // ordered by rank, then median descending
    int rank_count() const;
    int rank_of(std::string_view name) const;
    std::vector<std::string> members(int rank) const;
};

struct ScottKnottOptions {
    double alpha = 0.05;
    double negligible_delta = 0.147;
};

RankTable scott_knott(std::vector<NamedSample> groups, const ScottKnottOptions& options = {});

}  // namespace txtime::stats
