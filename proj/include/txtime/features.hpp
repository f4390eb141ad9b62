#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "txtime/chain_data.hpp"
#include "txtime/feature_matrix.hpp"
#include "txtime/stats.hpp"

namespace txtime::features {

inline constexpr std::size_t kWindowBlocks = 120;
inline constexpr std::size_t kSimilarTxCount = 100;

enum class Window { none, prev_1, prev_120, prev_day };

struct FeatureSpec {
    std::string_view name;
    Dimension dimension;
    Window window;
};

/// Every engineered column in catalog order: 9 contextual, 5 behavioral,
/// 20 historical, 41 pricing.
std::span<const FeatureSpec> catalog();
const FeatureSpec& spec(std::string_view name);
std::vector<std::string> all_feature_names();
std::vector<std::string> feature_names(Dimension d);

/// Columns holding flags or label encodings; exempt from the log transform.
bool is_categorical(std::string_view name);

struct PricingCounts {
    std::int64_t above = 0, same = 0, below = 0;
    double pct_above = 0.0, pct_same = 0.0, pct_below = 0.0;
    bool operator==(const PricingCounts&) const = default;
};

/// Counts of a sorted price multiset above / equal to / below `price`.
/// Percentages are relative to the multiset size and are 0 when it is empty.
PricingCounts pricing_counts(std::span<const std::int64_t> sorted_prices_wei, GasPrice price);

/// 0..4: smallest k with price <= quantile(window, 0.2 (k+1)); 4 when above all.
int gas_price_category(std::span<const std::int64_t> sorted_window_wei, GasPrice price);

/// A transaction processed inside the window, for similar-price lookups.
struct ProcessedTx {
    std::int64_t price_wei = 0;
    std::size_t block_index = 0;  // position of its block in the dataset
    std::size_t intra_index = 0;  // position inside that block
    std::int64_t processing_seconds = 0;
};

struct SimilarPriceTimes {
    double past_avg_time = 0.0;
    double past_med_time = 0.0;
    double past_std_time = 0.0;
    double closest_tx_pr_time = 0.0;
    bool operator==(const SimilarPriceTimes&) const = default;
};

/// Aggregates processing times (minutes) of the k window transactions closest
/// in price, ties broken by recency. `window` must be sorted by
/// (price, block_index, intra_index).
SimilarPriceTimes similar_price_times(std::span<const ProcessedTx> window, GasPrice price,
                                      std::size_t k = kSimilarTxCount);

/// Indexes of the selected transactions in `window`, best match first.
std::vector<std::size_t> select_similar(std::span<const ProcessedTx> window, GasPrice price, std::size_t k);

struct PendingFeatures {
    double num_pending = 0.0;
    double avg_pend_prices = 0.0;
    double med_pend_prices = 0.0;
    double std_pend_prices = 0.0;
    bool operator==(const PendingFeatures&) const = default;
};

/// Summary of the gas prices (wei) of an issuer's still-pending lower-nonce transactions.
PendingFeatures issuer_pending_features(std::span<const std::int64_t> pending_prices_wei);

struct BuildOptions {
    /// Restrict rows to transactions in these blocks (ascending); empty = all blocks.
    std::vector<std::int64_t> sampled_blocks;
    /// Evaluate blocks on OpenMP threads; rows land in block order regardless.
    bool parallel = true;
};

struct BuildReport {
    std::size_t rows = 0;
    std::size_t excluded_warmup = 0;     // block index < 120
    std::size_t excluded_first_day = 0;  // block on the dataset's first UTC day
    bool operator==(const BuildReport&) const = default;
};

/// One pass in block order; each row is computed from state strictly
/// preceding its block. Throws ConfigError on an unknown spec name.
FeatureMatrix build_feature_matrix(const Dataset& dataset, const std::vector<std::string>& specs,
                                   const BuildOptions& options = {}, BuildReport* report = nullptr);

}  // namespace txtime::features
