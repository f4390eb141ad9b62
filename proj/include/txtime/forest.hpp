#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "txtime/feature_matrix.hpp"
#include "txtime/rng.hpp"

namespace txtime::forest {

/// Candidate features per split: a ceil(fraction * p), or ceil(sqrt p) / ceil(log2 p).
struct FeatureFraction {
    enum class Rule { fraction, sqrt, log2 };
    Rule rule = Rule::fraction;
    double value = 1.0;

    static FeatureFraction fraction(double f) { return {Rule::fraction, f}; }
    static FeatureFraction sqrt() { return {Rule::sqrt, 0.0}; }
    static FeatureFraction log2() { return {Rule::log2, 0.0}; }
    /// "sqrt", "log2" or a number in (0,1].
    static FeatureFraction parse(const std::string& text);

    std::size_t count(std::size_t p) const;
    std::string to_string() const;
    bool operator==(const FeatureFraction&) const = default;
};

struct Hyperparams {
    int tree_count = 100;
    std::optional<int> max_depth;  // unlimited when empty
    FeatureFraction feature_fraction = FeatureFraction::sqrt();
    int min_leaf_size = 1;
    std::uint64_t seed = 1;
    /// Per-tree row resampling; off only in tests.
    bool bootstrap = true;

    void validate() const;
    bool operator==(const Hyperparams&) const = default;
};

nlohmann::json to_json(const Hyperparams& h);
Hyperparams hyperparams_from_json(const nlohmann::json& j);

struct Node {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean training target of the rows reaching the node
    double cover = 0.0;  // training rows reaching the node, resampled duplicates included

    bool is_leaf() const { return feature < 0; }
    bool operator==(const Node&) const = default;
};

struct RegressionTree {
    std::vector<Node> nodes;  // nodes[0] is the root

    /// Rows with x <= threshold go left.
    std::size_t leaf_of(std::span<const double> row) const;
    double predict(std::span<const double> row) const { return nodes[leaf_of(row)].value; }
    int depth() const;
    bool operator==(const RegressionTree&) const = default;
};

struct RandomForest {
    std::vector<RegressionTree> trees;
    std::vector<std::string> feature_names;
    Hyperparams params;
    std::size_t training_rows = 0;

    /// `row` holds values in `feature_names` order.
    double predict(std::span<const double> row) const;
    /// Columns are matched by name; throws DataError naming a missing feature.
    std::vector<double> predict(const FeatureMatrix& m) const;
    bool operator==(const RandomForest&) const = default;
};

/// Split point between consecutive distinct sorted values a < b; always in [a, b).
inline double midpoint_threshold(double a, double b) {
    const double t = a + (b - a) / 2.0;
    return t < b ? t : a;
}

/// Grows one CART tree on `rows` (duplicates allowed) of `m`.
RegressionTree fit_tree(const FeatureMatrix& m, std::span<const std::size_t> rows, const Hyperparams& params, Rng& rng);

/// Bagged forest on `rows` of `m` (all rows when empty). Trees are grown on
/// OpenMP threads unless already inside a parallel region.
RandomForest fit_forest(const FeatureMatrix& m, const Hyperparams& params, std::span<const std::size_t> rows = {});
RandomForest fit_forest_serial(const FeatureMatrix& m, const Hyperparams& params,
                               std::span<const std::size_t> rows = {});

inline constexpr int kForestFormatVersion = 1;
nlohmann::json to_json(const RandomForest& f);
/// Throws ModelIntegrityError on a malformed or inconsistent document.
RandomForest forest_from_json(const nlohmann::json& j);

}  // namespace txtime::forest
