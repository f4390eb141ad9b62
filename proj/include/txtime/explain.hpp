#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "txtime/feature_matrix.hpp"
#include "txtime/forest.hpp"
#include "txtime/protocol.hpp"
#include "txtime/stats.hpp"
#include "txtime/tree_shap.hpp"

namespace txtime::explain {

// Feature ranking by the Scott-Knott grouping of per-row |phi| distributions.

stats::RankTable rank_features(const std::vector<ShapExplanation>& explanations, const std::vector<std::string>& names,
                               const stats::ScottKnottOptions& options = {});
stats::RankTable rank_features(const forest::RandomForest& f, const FeatureMatrix& train,
                               const stats::ScottKnottOptions& options = {});
/// CSV `rank,feature,median_abs_shap`.
void write_rank_csv(const stats::RankTable& table, const std::filesystem::path& path);

struct PdpCurve {
    std::string feature;
    std::vector<double> grid;             // ascending
    std::vector<double> mean_prediction;  // one per grid point
    std::vector<double> deciles;          // 10th..90th percentile of the training column
    bool feature_back_transformed = false;
    bool target_back_transformed = false;
    std::vector<std::string> warnings;
};

inline constexpr std::size_t kDefaultPdpGrid = 50;

/// Grid = deduplicated quantiles at evenly spaced probabilities. Each point is
/// the mean prediction over all rows with the feature overridden; log1p columns
/// and targets are reported through expm1. Grid points run on OpenMP threads.
PdpCurve pdp(const forest::RandomForest& f, const FeatureMatrix& train, const std::string& feature,
             std::size_t grid_size = kDefaultPdpGrid);
PdpCurve pdp_serial(const forest::RandomForest& f, const FeatureMatrix& train, const std::string& feature,
                    std::size_t grid_size = kDefaultPdpGrid);

/// CSV `grid_value,mean_prediction`, a `.deciles.json` sidecar and optionally an SVG line plot.
void write_pdp(const PdpCurve& curve, const std::filesystem::path& csv, bool svg = true);
std::string pdp_svg(const PdpCurve& curve);

enum class InteractionMode { automatic, exact, sampled };
inline constexpr std::size_t kExactInteractionLimit = 15;

struct InteractionMatrix {
    std::vector<std::string> features;
    std::vector<std::vector<double>> values;          // symmetric; diagonal = main effects
    std::vector<std::vector<double>> standard_error;  // zero in exact mode
    bool exact = true;
    double base_value = 0.0;
    double prediction = 0.0;
};

struct SamplingOptions {
    int samples = 64;
    std::uint64_t seed = 1;
};

/// Exact mode conditions TreeSHAP on each feature being present or absent and
/// halves the difference; it needs M <= 15. Sampled mode draws coalitions for
/// each pair and reports the Monte Carlo standard error. Either way the
/// diagonal is phi_i minus the row's off-diagonals, so rows sum to phi.
InteractionMatrix interaction_values(const forest::RandomForest& f, std::span<const double> row,
                                     InteractionMode mode = InteractionMode::automatic,
                                     const SamplingOptions& sampling = {});

struct PairInteraction {
    std::string a;
    std::string b;
    double value = 0.0;
    double standard_error = 0.0;
};

/// Sampled interaction for selected pairs only.
std::vector<PairInteraction> pair_interactions(const forest::RandomForest& f, std::span<const double> row,
                                               const std::vector<std::pair<std::string, std::string>>& pairs,
                                               const SamplingOptions& sampling = {});

struct WaterfallEntry {
    std::string feature;  // "other features" for the aggregate
    double phi = 0.0;
    std::optional<double> value;
    std::size_t aggregated = 0;  // features folded into the aggregate entry
};

struct Waterfall {
    double base_value = 0.0;
    double prediction = 0.0;
    std::vector<WaterfallEntry> entries;
};

inline constexpr std::size_t kDefaultWaterfallTop = 9;
inline constexpr std::string_view kOtherFeatures = "other features";

/// Top-k by |phi| (ties keep feature order), the rest summed into one entry.
Waterfall waterfall(const ShapExplanation& e, const std::vector<std::string>& names,
                    std::span<const double> row = {}, std::size_t top_k = kDefaultWaterfallTop);

struct ChunkResult {
    Dimension omitted = Dimension::contextual;
    std::vector<std::string> omitted_features;
    std::vector<double> differences;  // full minus partial adjusted R^2, per bootstrap
    stats::Summary summary;
    protocol::EvalReport full;
    protocol::EvalReport partial;
};

/// Runs the protocol with and without `dimension`; `full` may carry an existing
/// all-features report made with the same split, space and seed.
ChunkResult chunk_test(const FeatureMatrix& m, Dimension dimension, const protocol::SplitProtocol& split,
                       const protocol::SearchSpace& space, std::uint64_t seed,
                       const protocol::EvalReport* full = nullptr);

nlohmann::json to_json(const ShapExplanation& e, const std::vector<std::string>& names);
nlohmann::json to_json(const Waterfall& w);
nlohmann::json to_json(const InteractionMatrix& m);
nlohmann::json to_json(const PairInteraction& p);
nlohmann::json to_json(const ChunkResult& c);
nlohmann::json to_json(const stats::RankTable& t);
nlohmann::json to_json(const PdpCurve& c);

}  // namespace txtime::explain
