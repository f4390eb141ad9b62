#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "txtime/feature_matrix.hpp"
#include "txtime/forest.hpp"
#include "txtime/stats.hpp"

namespace txtime::protocol {

struct SearchSpace {
    int min_tree_count = 10;
    int max_tree_count = 300;
    int min_depth = 3;
    int max_depth = 30;
    bool allow_unlimited_depth = true;
    std::vector<forest::FeatureFraction> fractions{forest::FeatureFraction::sqrt(), forest::FeatureFraction::log2(),
                                                   forest::FeatureFraction::fraction(0.3),
                                                   forest::FeatureFraction::fraction(0.5),
                                                   forest::FeatureFraction::fraction(1.0)};
    int min_leaf_size = 1;

    /// Throws ConfigError when no configuration can be drawn.
    void validate() const;
    /// Uniform over tree counts, over depths (unlimited counts as one more depth) and over fractions.
    forest::Hyperparams sample(Rng& rng) const;
};

nlohmann::json to_json(const SearchSpace& s);
SearchSpace search_space_from_json(const nlohmann::json& j);

struct Trial {
    forest::Hyperparams params;
    double validation_r2 = 0.0;
};

struct SearchResult {
    forest::Hyperparams best;
    double best_r2 = 0.0;
    std::vector<Trial> trials;
    /// The winning candidate. All candidates share one model seed, so this is
    /// exactly the forest a refit with `best` on the same rows would produce.
    forest::RandomForest forest;
};

/// Draws `iterations` configurations and keeps the one with the highest R^2 on
/// `validation`; ties keep the earliest draw.
SearchResult random_search(const FeatureMatrix& m, std::span<const std::size_t> train,
                           std::span<const std::size_t> validation, const SearchSpace& space, int iterations,
                           std::uint64_t seed);

struct SplitProtocol {
    int train_days = 28;
    int validation_days = 1;
    int test_days = 1;
    int bootstrap_count = 100;
    int search_iterations = 20;
    /// Row-fraction split for matrices spanning too few days.
    bool reduced = false;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;

    void validate() const;
};

struct Partition {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Full mode takes the first train+validation+test UTC days in order and throws
/// ProtocolError when the matrix spans fewer.
Partition partition(const FeatureMatrix& m, const SplitProtocol& split);

struct BootstrapResult {
    int index = 0;
    forest::Hyperparams params;
    double validation_r2 = 0.0;
    double test_r2 = 0.0;
    double test_adjusted_r2 = 0.0;
};

struct Comparison {
    std::string against;
    double p = 1.0;
    stats::EffectSize effect;
    double median_difference = 0.0;
};

struct EvalReport {
    std::string label;
    bool reduced = false;
    std::uint64_t seed = 0;
    std::vector<std::string> features;
    std::size_t train_rows = 0;
    std::size_t validation_rows = 0;
    std::size_t test_rows = 0;
    std::vector<BootstrapResult> bootstraps;
    stats::Summary test_r2;
    stats::Summary test_adjusted_r2;
    std::optional<Comparison> comparison;

    std::vector<double> adjusted_r2_values() const;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// 100 (or bootstrap_count) resamples of the train partition, each searched,
/// refit and scored on the test partition. Bootstraps run on OpenMP threads;
/// every bootstrap draws from seeds derived from (seed, index).
EvalReport run_protocol(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space,
                        std::uint64_t seed, const std::string& label = "model");
EvalReport run_protocol_serial(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space,
                               std::uint64_t seed, const std::string& label = "model");

/// Two-tailed Mann-Whitney and Cliff's delta of a's adjusted R^2 against b's.
Comparison compare_reports(const EvalReport& a, const EvalReport& b);

/// Model exported by `train`: searched on the full train partition, validated on the validation day.
SearchResult train_final(const FeatureMatrix& m, const SplitProtocol& split, const SearchSpace& space,
                         std::uint64_t seed);

}  // namespace txtime::protocol
